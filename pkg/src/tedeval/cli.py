"""Single executable exposing the harness workflows.

Every command resolves its effective configuration (flags > config file >
defaults), derives a reproducibility fingerprint from that configuration
plus the content hashes of all input files, and writes every output under
a run directory named by the fingerprint prefix. Exit codes: 0 success,
1 usage/configuration error, 2 input error, 3 numeric failure.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .aggregator import init_params, load_checkpoint, save_checkpoint
from .corpus import load_pairs, load_ted6k, save_jsonl
from .errors import (ArgumentError, ConfigError, FormatError, HarnessError,
                     NumericError, StateError, ValidationError)
from .evaluator import evaluate, pearson, shuffle_baseline, stability_runs
from .fusion import FusionWeights
from .toydiff import ToyDiffConfig, train_joint, trajectory_report
from .toyencoder import TedhDirEncoder, ToyEncoder, ToyEncoderConfig
from .toygen import gen_bench, gen_diffusion_captions, gen_pairs
from .trainer import TrainConfig, _resolve_strategy, replace_weights, \
    train_aggregator

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via ConfigError (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def parse_encoder_uri(uri):
    """``toy:seed=N[,key=val...]`` or ``tedh:<dir>`` -> encoder callable."""
    scheme, _, rest = uri.partition(":")
    if scheme == "toy":
        kwargs = {}
        for item in filter(None, rest.split(",")):
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"malformed encoder option {item!r} in {uri!r}")
            if key not in ("seed", "layers", "dim", "heads", "max_tokens",
                           "vocab_size"):
                raise ConfigError(f"unknown toy encoder option {key!r}")
            kwargs[key] = int(value)
        return ToyEncoder(ToyEncoderConfig(**kwargs))
    if scheme == "tedh":
        if not rest:
            raise ConfigError("tedh: encoder URI needs a directory")
        if not os.path.isdir(rest):
            raise ArgumentError(f"TEDH dump directory not found: {rest}")
        return TedhDirEncoder(rest)
    raise ConfigError(f"unknown encoder URI scheme in {uri!r}")


def _file_sha(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path, what):
    if path is None:
        raise ConfigError(f"missing required {what} path")
    if not os.path.exists(path):
        raise ArgumentError(f"{what} file not found: {path}")
    return path


def _effective_config(args, defaults):
    """flags > config file > defaults; returns a plain sorted dict."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        path = _require_file(args.config, "config")
        with open(path, "r", encoding="utf-8") as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"malformed config file: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _run_dir(args, cfg, input_paths):
    """Create outdir/run-<fingerprint12> and echo the effective config."""
    payload = {"command": args.command, "version": __version__, "config": cfg,
               "inputs": {p: _file_sha(p) for p in input_paths}}
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    fingerprint = hashlib.sha256(blob).hexdigest()
    base = args.out or "."
    run_dir = os.path.join(base, f"run-{fingerprint[:12]}")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    with open(os.path.join(run_dir, "fingerprint"), "w", encoding="utf-8") as f:
        f.write(fingerprint + "\n")
    return run_dir, fingerprint


_TRAIN_DEFAULTS = {
    "pairs": None, "encoder": "toy:", "fusion": "norm_avg",
    "freeze_step": None, "seed": 0, "lr": 1e-5, "epochs": 1, "batch": 32,
    "tau": 0.07, "precision": "run", "threads": 1,
}


def _train_cfg(cfg):
    return TrainConfig(lr=cfg["lr"], epochs=cfg["epochs"],
                       batch_size=cfg["batch"], temperature=cfg["tau"],
                       seed=cfg["seed"], fusion=cfg["fusion"],
                       freeze_step=cfg["freeze_step"],
                       precision=cfg["precision"])


def cmd_train(args):
    cfg = _effective_config(args, _TRAIN_DEFAULTS)
    pairs_path = _require_file(cfg["pairs"], "caption-pair corpus")
    run_dir, fingerprint = _run_dir(args, cfg, [pairs_path])
    pairs = load_pairs(pairs_path)
    encoder = parse_encoder_uri(cfg["encoder"])
    params, weights, history = train_aggregator(pairs, encoder,
                                                _train_cfg(cfg))
    meta = {"encoder_id": encoder.encoder_id, "fusion": cfg["fusion"],
            "seed": cfg["seed"], "fingerprint": fingerprint}
    save_checkpoint(params, os.path.join(run_dir, "agg.bin"), meta=meta)
    if weights is not None:
        weights.save(os.path.join(run_dir, "fusion_weights.txt"))
    history.to_tsv(os.path.join(run_dir, "history.tsv"))
    print(f"run_dir\t{run_dir}")
    print(f"final_loss\t{history.losses[-1]!r}" if history.losses
          else "final_loss\tnan")
    return EXIT_OK


_EVAL_DEFAULTS = {
    "bench": None, "encoder": "toy:", "fusion": "norm_avg", "ckpt": None,
    "seed": 0, "threads": 1,
}


def _eval_setup(args):
    """Shared loading for eval/shuffle: returns (run_dir, bench, encoder,
    strategy, params, ckpt_meta, cfg)."""
    cfg = _effective_config(args, _EVAL_DEFAULTS)
    bench_path = _require_file(cfg["bench"], "benchmark")
    inputs = [bench_path]
    ckpt_meta = None
    if cfg["ckpt"] is not None:
        inputs.append(_require_file(cfg["ckpt"], "checkpoint"))
    run_dir, _ = _run_dir(args, cfg, inputs)
    bench = load_ted6k(bench_path)
    encoder = parse_encoder_uri(cfg["encoder"])
    probe = encoder(bench[0].caption)
    if cfg["ckpt"] is not None:
        params, ckpt_meta = load_checkpoint(cfg["ckpt"])
        weights_path = os.path.join(os.path.dirname(cfg["ckpt"]),
                                    "fusion_weights.txt")
        weights = FusionWeights.load(weights_path) \
            if cfg["fusion"] == "learnable" and os.path.exists(weights_path) \
            else None
    else:
        params = init_params(cfg["seed"], dim=probe.D)
        weights = None
    strategy, _ = _resolve_strategy(_train_cfg({**_TRAIN_DEFAULTS, **cfg,
                                                "lr": 1e-5, "epochs": 1,
                                                "batch": 32, "tau": 0.07,
                                                "precision": "run",
                                                "freeze_step": None}), probe.L)
    if weights is not None:
        strategy = replace_weights(strategy, weights)
    return run_dir, bench, encoder, strategy, params, ckpt_meta, cfg


def cmd_eval(args):
    run_dir, bench, encoder, strategy, params, ckpt_meta, _cfg = \
        _eval_setup(args)
    report = evaluate(bench, encoder, strategy, params, ckpt_meta=ckpt_meta)
    with open(os.path.join(run_dir, "report.txt"), "w", encoding="utf-8") as f:
        f.write(report.to_txt())
    with open(os.path.join(run_dir, "report.tsv"), "w", encoding="utf-8") as f:
        f.write(report.to_tsv())
    print(f"run_dir\t{run_dir}")
    print(f"overall_accuracy\t{report.overall_accuracy:.2f}")
    return EXIT_OK


def cmd_shuffle(args):
    run_dir, bench, encoder, strategy, params, _meta, cfg = _eval_setup(args)
    acc = shuffle_baseline(bench, encoder, strategy, params, seed=cfg["seed"])
    with open(os.path.join(run_dir, "shuffle.txt"), "w", encoding="utf-8") as f:
        f.write(f"shuffle_accuracy\t{acc:.2f}\n")
    print(f"run_dir\t{run_dir}")
    print(f"shuffle_accuracy\t{acc:.2f}")
    return EXIT_OK


_STABILITY_DEFAULTS = dict(_TRAIN_DEFAULTS, bench=None, seeds="0,1,2,3,4")


def cmd_stability(args):
    cfg = _effective_config(args, _STABILITY_DEFAULTS)
    pairs_path = _require_file(cfg["pairs"], "caption-pair corpus")
    bench_path = _require_file(cfg["bench"], "benchmark")
    run_dir, _ = _run_dir(args, cfg, [pairs_path, bench_path])
    pairs = load_pairs(pairs_path)
    bench = load_ted6k(bench_path)
    encoder = parse_encoder_uri(cfg["encoder"])
    seeds = [int(s) for s in str(cfg["seeds"]).split(",") if s.strip()]
    scores, spread = stability_runs(pairs, encoder, bench, _train_cfg(cfg),
                                    seeds, strategy_name=cfg["fusion"])
    with open(os.path.join(run_dir, "stability.tsv"), "w",
              encoding="utf-8") as f:
        f.write("seed\taccuracy\n")
        for seed, score in zip(seeds, scores):
            f.write(f"{seed}\t{score:.4f}\n")
        f.write(f"# max_spread\t{spread:.4f}\n")
    print(f"run_dir\t{run_dir}")
    print(f"max_spread\t{spread:.4f}")
    return EXIT_OK


_CORRELATE_DEFAULTS = {"scores": None, "threads": 1}


def cmd_correlate(args):
    cfg = _effective_config(args, _CORRELATE_DEFAULTS)
    path = _require_file(cfg["scores"], "score table")
    run_dir, _ = _run_dir(args, cfg, [path])
    xs, ys = [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValidationError("expected two columns per line",
                                      line=lineno)
            try:
                xs.append(float(parts[0]))
                ys.append(float(parts[1]))
            except ValueError as exc:
                raise ValidationError(f"non-numeric score: {exc}",
                                      line=lineno) from exc
    result = pearson(xs, ys)
    with open(os.path.join(run_dir, "correlation.txt"), "w",
              encoding="utf-8") as f:
        f.write(result.to_record())
    print(f"run_dir\t{run_dir}")
    print(result.to_record(), end="")
    return EXIT_OK


_TOYDIFF_DEFAULTS = {
    "encoder": "toy:", "seed": 0, "steps": 5000, "freeze_step": None,
    "batch": 32, "lr": 1e-3, "n_captions": 64, "shuffle_conditions": False,
    "threads": 1,
}


def cmd_toydiff(args):
    cfg = _effective_config(args, _TOYDIFF_DEFAULTS)
    run_dir, _ = _run_dir(args, cfg, [])
    encoder = parse_encoder_uri(cfg["encoder"])
    captions = gen_diffusion_captions(cfg["seed"], n_captions=cfg["n_captions"])
    dcfg = ToyDiffConfig(steps=cfg["steps"], batch_size=cfg["batch"],
                         lr=cfg["lr"], seed=cfg["seed"],
                         freeze_step=cfg["freeze_step"],
                         shuffle_conditions=bool(cfg["shuffle_conditions"]))
    _theta, weights, traj, final_loss = train_joint(captions, encoder, dcfg)
    trajectory_report(traj, os.path.join(run_dir, "trajectory.tsv"))
    weights.save(os.path.join(run_dir, "fusion_weights.txt"))
    with open(os.path.join(run_dir, "result.txt"), "w", encoding="utf-8") as f:
        f.write(f"final_loss\t{final_loss!r}\n")
    print(f"run_dir\t{run_dir}")
    print(f"final_loss\t{final_loss!r}")
    return EXIT_OK


_TOYGEN_DEFAULTS = {"seed": 0, "n_pairs": 512, "n_instances": 400,
                    "threads": 1}


def cmd_toygen(args):
    cfg = _effective_config(args, _TOYGEN_DEFAULTS)
    run_dir, _ = _run_dir(args, cfg, [])
    pairs = gen_pairs(cfg["seed"], n_pairs=cfg["n_pairs"])
    bench = gen_bench(cfg["seed"] + 1, n_instances=cfg["n_instances"])
    save_jsonl(pairs, os.path.join(run_dir, "pairs.jsonl"))
    save_jsonl(bench, os.path.join(run_dir, "bench.jsonl"))
    print(f"run_dir\t{run_dir}")
    print(f"pairs\t{len(pairs)}")
    print(f"bench\t{len(bench)}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="ted", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (flags win)")
        p.add_argument("--out", help="base output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("train", help="train the context aggregator")
    common(p)
    p.add_argument("--pairs")
    p.add_argument("--encoder")
    p.add_argument("--fusion",
                   choices=["last", "penult", "avg", "norm_avg", "learnable"])
    p.add_argument("--freeze-step", dest="freeze_step", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--precision", choices=["test", "run"])
    p.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("shuffle", cmd_shuffle)):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--bench")
        p.add_argument("--encoder")
        p.add_argument("--fusion",
                       choices=["last", "penult", "avg", "norm_avg",
                                "learnable"])
        p.add_argument("--ckpt")
        p.set_defaults(func=func)

    p = sub.add_parser("stability", help="multi-seed training stability")
    common(p)
    p.add_argument("--pairs")
    p.add_argument("--bench")
    p.add_argument("--encoder")
    p.add_argument("--fusion",
                   choices=["last", "penult", "avg", "norm_avg", "learnable"])
    p.add_argument("--freeze-step", dest="freeze_step", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--precision", choices=["test", "run"])
    p.add_argument("--seeds", help="comma-separated seed list")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("correlate", help="Pearson r/p over a 2-column table")
    common(p)
    p.add_argument("--scores")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("toydiff", help="toy conditional denoiser run")
    common(p)
    p.add_argument("--encoder")
    p.add_argument("--steps", type=int)
    p.add_argument("--freeze-step", dest="freeze_step", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-captions", dest="n_captions", type=int)
    p.add_argument("--shuffle-conditions", dest="shuffle_conditions",
                   action="store_const", const=True)
    p.set_defaults(func=cmd_toydiff)

    p = sub.add_parser("toygen", help="generate the synthetic toy corpus")
    common(p)
    p.add_argument("--n-pairs", dest="n_pairs", type=int)
    p.add_argument("--n-instances", dest="n_instances", type=int)
    p.set_defaults(func=cmd_toygen)
    return parser


def main(argv=None):
    np.seterr(all="ignore")  # non-finite values surface as NumericError
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error\tusage\t{exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, FormatError, ArgumentError, OSError) as exc:
        print(f"error\tinput\t{exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, StateError) as exc:
        print(f"error\tnumeric\t{exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except HarnessError as exc:
        print(f"error\tinput\t{exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
