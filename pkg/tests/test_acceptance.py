"""Acceptance gate: one test per criterion, each printing one pass/fail line.

Criteria 4-6 share one toy experiment (synthetic corpus + deterministic toy
encoder + contrastive aggregator training) via module-scoped fixtures.
"""

import os

import conftest
import numpy as np
import pytest

from tedeval import autodiff as ad
from tedeval.aggregator import aggregate_graph, init_params
from tedeval.blocks import attention_block, init_block_params
from tedeval.cli import main as cli_main
from tedeval.corpus import load_pairs, load_ted6k
from tedeval.errors import FormatError
from tedeval.evaluator import evaluate, pearson, shuffle_baseline, stability_runs
from tedeval.fusion import FusionStrategy, FusionWeights, fuse, fuse_grad_w
from tedeval.gradcheck import finite_diff_check, tensor_fn
from tedeval.tedh import HiddenStates, read_tedh, write_tedh
from tedeval.toydiff import ToyDiffConfig, denoise_loss, init_denoiser, train_joint
from tedeval.toyencoder import ToyEncoder, ToyEncoderConfig
from tedeval.toygen import gen_diffusion_captions
from tedeval.trainer import TrainConfig, info_nce_loss, train_aggregator

# ---------------------------------------------------------------- toy setup
# encoder/aggregator configuration for the end-to-end criteria (4-6)
TOY_CFG = ToyEncoderConfig(seed=6, layers=2, dim=128, heads=8, max_tokens=64)
AGG_BLOCKS = 1
AGG_HEADS = 8
GEN_SEED = 0   # cmd_toygen seed: pairs stream = seed, bench stream = seed + 1


def _report(num, name, ok, detail):
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line)
    # also surface the line in the terminal summary, past output capture
    conftest.CRITERION_LINES.append(line)
    assert ok, line


# ---------------------------------------------------------------- criterion 1

# reference score series (benchmark accuracy, deployment score) with their
# published correlation statistics
SERIES_T2I = [(44.60, 54.67), (53.05, 71.15), (53.62, 71.15),
              (55.31, 74.46), (55.99, 75.51), (56.81, 76.17)]
SERIES_T2I_R, SERIES_T2I_P = 0.9914, 1.09e-4
SERIES_T2V = [(53.62, 65.13), (55.37, 70.59), (55.31, 68.70), (56.81, 77.94)]
SERIES_T2V_R, SERIES_T2V_P = 0.9587, 0.04129


def test_criterion_1_pearson_reproduction():
    r6 = pearson([x for x, _ in SERIES_T2I], [y for _, y in SERIES_T2I])
    r4 = pearson([x for x, _ in SERIES_T2V], [y for _, y in SERIES_T2V])
    ok = (abs(r6.r - SERIES_T2I_R) <= 5e-4
          and abs(r6.p - SERIES_T2I_P) <= 0.05 * SERIES_T2I_P
          and abs(r4.r - SERIES_T2V_R) <= 5e-4
          and abs(r4.p - SERIES_T2V_P) <= 0.05 * SERIES_T2V_P)
    _report(1, "pearson reproduction", ok,
            f"six-pair series r={r6.r:.5f} p={r6.p:.3e} "
            f"(stated {SERIES_T2I_R}, {SERIES_T2I_P:.2e}); "
            f"four-pair series r={r4.r:.5f} p={r4.p:.5f} "
            f"(stated {SERIES_T2V_R}, {SERIES_T2V_P})")


# ---------------------------------------------------------------- criterion 2

def _suite_op_checks():
    """Yield (name, fn, point) finite-difference cases, freshly seeded."""
    rng = np.random.default_rng(20)

    def case_layer_norm():
        up = rng.normal(size=(2, 5))
        return tensor_fn(lambda lv: (ad.layer_norm(lv["x"]) * up).sum(),
                         {"x": (2, 5)}), rng.normal(size=10)

    def case_softmax():
        up = rng.normal(size=(2, 5))
        return tensor_fn(lambda lv: (ad.softmax(lv["x"]) * up).sum(),
                         {"x": (2, 5)}), rng.normal(size=10)

    def case_gelu():
        up = rng.normal(size=6)
        return tensor_fn(lambda lv: (ad.gelu(lv["x"]) * up).sum(),
                         {"x": (6,)}), rng.normal(size=6)

    def case_attention_block():
        dim, heads, n = 8, 2, 3
        params = init_block_params(np.random.default_rng(rng.integers(1e9)),
                                   dim)
        mask = np.ones(n, dtype=bool)
        up = rng.normal(size=(n, dim))
        fn = tensor_fn(
            lambda lv: (attention_block(lv["x"], mask, params, heads)
                        * up).sum(), {"x": (n, dim)})
        return fn, rng.normal(size=n * dim)

    def case_fuse_grad_w():
        h = HiddenStates(
            data=rng.normal(size=(3, 4, 6)).astype(np.float32),
            mask=np.ones(4, dtype=bool))
        up = rng.normal(size=(4, 6))

        def fn(w):
            weights = FusionWeights(w=w)
            out = fuse(h, FusionStrategy.learnable(weights))
            return float((out * up).sum()), fuse_grad_w(h, weights, up)

        return fn, rng.normal(size=3)

    def case_aggregate():
        params = init_params(int(rng.integers(1e9)), dim=8, heads=2,
                             n_blocks=1)
        tokens = rng.normal(size=(3, 8))
        mask = np.ones(3, dtype=bool)
        up = rng.normal(size=8)
        shapes = {k: v.shape for k, v in params.named().items()}
        fn = tensor_fn(
            lambda lv: (aggregate_graph(tokens, mask, lv, params) * up).sum(),
            shapes)
        return fn, np.concatenate([params.named()[k].ravel() for k in shapes])

    def case_info_nce():
        b, d = 3, 4

        def fn(x):
            a = x[:b * d].reshape(b, d)
            bb = x[b * d:].reshape(b, d)
            loss, (ga, gb) = info_nce_loss(a, bb, temperature=0.2)
            return loss, np.concatenate([ga.ravel(), gb.ravel()])

        return fn, rng.normal(size=2 * b * d)

    def case_denoise_loss():
        cond_dim = 6
        theta = init_denoiser(int(rng.integers(1e9)), cond_dim)
        x_t = rng.normal(size=(2, 2))
        eps = rng.normal(size=(2, 2))
        t = np.array([7, 60])

        def fn(flat):
            loss, _, cg = denoise_loss(x_t, t, flat.reshape(2, cond_dim),
                                       eps, theta)
            return loss, cg.ravel()

        return fn, rng.normal(size=2 * cond_dim)

    return {
        "layer_norm": case_layer_norm, "softmax": case_softmax,
        "gelu": case_gelu, "attention_block": case_attention_block,
        "fuse_grad_w": case_fuse_grad_w, "aggregate": case_aggregate,
        "info_nce_loss": case_info_nce, "denoise_loss": case_denoise_loss,
    }


def test_criterion_2_gradient_suite():
    coord_rng = np.random.default_rng(2)
    worst = {}
    for name, make in _suite_op_checks().items():
        errs = []
        for _ in range(100):
            fn, point = make()
            errs.append(finite_diff_check(fn, point, coords=4, rng=coord_rng))
        worst[name] = max(errs)
    ok = all(e < 1e-4 for e in worst.values())
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
    _report(2, "gradient suite (100 points/op)", ok, f"max rel err {detail}")


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_fusion_equivalence():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        l, n, d = rng.integers(2, 7), rng.integers(1, 10), rng.integers(2, 20)
        mask = rng.random(n) < 0.8
        if not mask.any():
            mask[0] = True
        h = HiddenStates(data=rng.normal(size=(l, n, d)).astype(np.float32),
                         mask=mask)
        a = fuse(h, FusionStrategy.learnable(FusionWeights.zeros(h.L)))
        b = fuse(h, FusionStrategy.norm_avg())
        worst = max(worst, float(np.abs(a - b).max()))
    _report(3, "fusion equivalence (learnable w=0 vs norm_avg)",
            worst < 1e-6, f"max elementwise diff {worst:.2e} over 50 cases")


# ------------------------------------------------------- toy experiment (4-6)

@pytest.fixture(scope="module")
def toy_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    code = cli_main(["toygen", "--seed", str(GEN_SEED), "--out", str(out)])
    assert code == 0
    run_dir = next(p for p in out.iterdir() if p.name.startswith("run-"))
    return (load_pairs(run_dir / "pairs.jsonl"),
            load_ted6k(run_dir / "bench.jsonl"))


@pytest.fixture(scope="module")
def toy_encoder():
    return ToyEncoder(TOY_CFG)


def _toy_train_cfg(seed=0, fusion="norm_avg"):
    return TrainConfig(lr=1e-3, epochs=1, batch_size=32, temperature=0.07,
                       seed=seed, fusion=fusion, precision="run",
                       heads=AGG_HEADS, n_blocks=AGG_BLOCKS)


@pytest.fixture(scope="module")
def trained_toy(toy_corpus, toy_encoder):
    pairs, bench = toy_corpus
    params, _, history = train_aggregator(pairs, toy_encoder, _toy_train_cfg())
    return params, history


def test_criterion_4_end_to_end_toy_learning(toy_corpus, toy_encoder,
                                             trained_toy):
    pairs, bench = toy_corpus
    strategy = FusionStrategy.norm_avg()
    init_params_, _, _ = train_aggregator(pairs, toy_encoder,
                                          _toy_train_cfg(), n_steps=0)
    untrained = evaluate(bench, toy_encoder, strategy,
                         init_params_).overall_accuracy
    trained = evaluate(bench, toy_encoder, strategy,
                       trained_toy[0]).overall_accuracy
    ok = 15.0 <= untrained <= 35.0 and trained >= 90.0
    _report(4, "end-to-end toy learning", ok,
            f"untrained={untrained:.1f}% (need [15, 35]), "
            f"trained 1 epoch={trained:.1f}% (need >= 90)")


def test_criterion_5_shuffle_robustness(toy_corpus, toy_encoder, trained_toy):
    _, bench = toy_corpus
    acc = shuffle_baseline(bench, toy_encoder, FusionStrategy.norm_avg(),
                           trained_toy[0], seed=0)
    ok = 18.0 <= acc <= 32.0
    _report(5, "shuffle robustness", ok,
            f"shuffled-caption accuracy {acc:.1f}% (need [18, 32])")


def test_criterion_6_stability(toy_corpus, toy_encoder):
    pairs, bench = toy_corpus
    seeds = [0, 1, 2, 3, 4]
    norm_scores, norm_spread = stability_runs(
        pairs, toy_encoder, bench, _toy_train_cfg(), seeds,
        strategy_name="norm_avg")
    last_scores, last_spread = stability_runs(
        pairs, toy_encoder, bench, _toy_train_cfg(), seeds,
        strategy_name="last")
    signs = {np.sign(n - l) for n, l in zip(norm_scores, last_scores)}
    ok = len(signs) == 1 and 0.0 not in signs
    _report(6, "stability (norm_avg vs last-layer ranking)", ok,
            f"norm_avg={[f'{s:.1f}' for s in norm_scores]} "
            f"(spread {norm_spread:.1f}), "
            f"last={[f'{s:.1f}' for s in last_scores]} "
            f"(spread {last_spread:.1f})")


# ---------------------------------------------------------------- criterion 7

def test_criterion_7_two_step_schedule():
    enc = ToyEncoder(ToyEncoderConfig(seed=5, layers=4, dim=16, heads=4,
                                      max_tokens=32))
    captions = gen_diffusion_captions(0, n_captions=64)
    base = dict(steps=5000, batch_size=32, lr=1e-3, seed=0, loss_window=500)

    _, w_frozen, traj, _ = train_joint(captions, enc,
                                       ToyDiffConfig(freeze_step=3000, **base))
    frozen_rows = traj.alphas[3000:]
    bit_identical = all(r.tobytes() == frozen_rows[0].tobytes()
                        for r in frozen_rows)

    _, _, traj_free, loss_true = train_joint(captions, enc,
                                             ToyDiffConfig(**base))
    movement = float(np.abs(np.stack(traj_free.alphas)
                            - traj_free.alphas[0]).max())

    _, _, _, loss_shuf = train_joint(
        captions, enc, ToyDiffConfig(shuffle_conditions=True, **base))
    gap = (loss_shuf - loss_true) / loss_shuf

    ok = (bit_identical and w_frozen.frozen and movement > 1e-3
          and gap >= 0.10)
    _report(7, "two-step schedule", ok,
            f"frozen rows bit-identical={bit_identical}, "
            f"max alpha movement={movement:.4f} (need > 1e-3), "
            f"conditioning gap={100 * gap:.1f}% (need >= 10%)")


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_format_conformance(tmp_path):
    rng = np.random.default_rng(8)
    failures = []
    for i in range(200):
        l, n, d = rng.integers(1, 8), rng.integers(1, 20), rng.integers(1, 16)
        mask = rng.random(n) < 0.6
        if not mask.any():
            mask[rng.integers(n)] = True
        h = HiddenStates(
            data=rng.normal(size=(l, n, d)).astype(np.float32), mask=mask,
            meta={"case": str(i)})
        path = tmp_path / f"case{i}.tedh"
        write_tedh(h, path)
        back = read_tedh(path)
        if (back.data.tobytes() != h.data.tobytes()
                or not np.array_equal(back.mask, h.mask)
                or back.meta != h.meta):
            failures.append(i)

    # corrupted headers must raise designated FormatError codes, not crash
    good = tmp_path / "good.tedh"
    write_tedh(HiddenStates(data=np.ones((1, 2, 2), dtype=np.float32),
                            mask=np.ones(2, dtype=bool)), good)
    raw = good.read_bytes()
    corrupt_cases = [
        (b"NOPE" + raw[4:], "bad_magic"),
        (raw[:4] + b"\x63\x00" + raw[6:], "bad_version"),
        (raw[:20] + b"\x05" + raw[21:], "bad_dtype"),
        (raw[:6], "truncated"),
        (raw[:-3], "shape_mismatch"),
    ]
    codes_ok = True
    for blob, expected in corrupt_cases:
        bad = tmp_path / "bad.tedh"
        bad.write_bytes(blob)
        try:
            read_tedh(bad)
            codes_ok = False
        except FormatError as exc:
            codes_ok = codes_ok and exc.code == expected
        except Exception:
            codes_ok = False
    ok = not failures and codes_ok
    _report(8, "format conformance", ok,
            f"{200 - len(failures)}/200 round trips bit-exact, "
            f"corrupted-header codes correct={codes_ok}")
