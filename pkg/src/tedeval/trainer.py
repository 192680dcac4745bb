"""Contrastive training of the context aggregator over a frozen encoder.

Each batch encodes both captions of every pair, fuses layers, aggregates to
sentence embeddings, and applies symmetric InfoNCE with in-batch negatives.
The encoder is never updated; fusion weights train only while the freeze
schedule allows it.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .aggregator import aggregate_graph, init_params
from .errors import ArgumentError, ConfigError, NumericError
from .fusion import FusionWeights, apply_schedule, fuse, fuse_graph
from .optim import Adam


@dataclass
class TrainConfig:
    lr: float = 1e-5
    epochs: int = 1
    batch_size: int = 32
    temperature: float = 0.07
    seed: int = 0
    fusion: str = "norm_avg"          # last|penult|avg|norm_avg|learnable
    freeze_step: int = None           # None = never freeze (learnable only)
    precision: str = "run"            # test = float64, run = float32
    heads: int = 8
    n_blocks: int = 2
    dim_out: int = None               # None = same as encoder dim
    force_projection: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.batch_size < 2:
            raise ConfigError("contrastive training needs batch_size >= 2")
        if self.precision not in ("test", "run"):
            raise ConfigError("precision must be 'test' or 'run'")

    @property
    def dtype(self):
        return np.float64 if self.precision == "test" else np.float32


@dataclass
class TrainHistory:
    """Per-step records of the run: loss, fusion alphas, timing."""

    seed: int
    steps: list = field(default_factory=list)      # ints
    losses: list = field(default_factory=list)     # floats
    alphas: list = field(default_factory=list)     # per-step alpha row or None
    wall_clock: float = 0.0

    def append(self, step, loss, alpha):
        self.steps.append(step)
        self.losses.append(float(loss))
        self.alphas.append(None if alpha is None else np.asarray(alpha).copy())

    def to_tsv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            n_alpha = 0 if not self.alphas or self.alphas[0] is None \
                else len(self.alphas[0])
            header = ["step", "loss"] + [f"alpha_{i + 1}" for i in range(n_alpha)]
            f.write("\t".join(header) + "\n")
            for step, loss, alpha in zip(self.steps, self.losses, self.alphas):
                row = [str(step), repr(loss)]
                if alpha is not None:
                    row += [repr(float(a)) for a in alpha]
                f.write("\t".join(row) + "\n")


def info_nce_graph(embs_a, embs_b, temperature):
    """Symmetric InfoNCE over stacked (B, D) embedding tensors."""
    b = embs_a.shape[0]
    an = ad.l2_normalize(embs_a)
    bn = ad.l2_normalize(embs_b)
    s = (an @ bn.swapaxes(0, 1)) * (1.0 / temperature)
    diag_idx = (np.arange(b), np.arange(b))
    row_ce = (ad.logsumexp(s, axis=-1) - s[diag_idx]).mean()
    col_ce = (ad.logsumexp(s.swapaxes(0, 1), axis=-1) - s[diag_idx]).mean()
    return (row_ce + col_ce) * 0.5


def info_nce_loss(embs_a, embs_b, temperature=0.07):
    """Loss value and gradients w.r.t. both embedding sets (numpy in/out)."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    a = np.asarray(embs_a, dtype=np.float64)
    b = np.asarray(embs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ArgumentError("embedding sets must share a (B, D) shape")
    ta = ad.parameter(a)
    tb = ad.parameter(b)
    loss = info_nce_graph(ta, tb, temperature)
    loss.backward()
    return loss.item(), (ta.grad, tb.grad)


def _resolve_strategy(cfg, n_layers):
    from .fusion import FusionStrategy
    if cfg.fusion == "last":
        return FusionStrategy.single_layer(-1), None
    if cfg.fusion == "penult":
        return FusionStrategy.single_layer(-2), None
    if cfg.fusion == "avg":
        return FusionStrategy.avg(), None
    if cfg.fusion == "norm_avg":
        return FusionStrategy.norm_avg(), None
    if cfg.fusion == "learnable":
        weights = FusionWeights.zeros(n_layers)
        return FusionStrategy.learnable(weights), weights
    raise ConfigError(f"unknown fusion strategy {cfg.fusion!r}")


def train_aggregator(pairs, encoder, cfg, n_steps=None):
    """Train the aggregator (and optionally fusion weights) on caption pairs.

    Returns (AggregatorParams, FusionWeights or None, TrainHistory).
    Deterministic per cfg.seed. ``n_steps=0`` short-circuits to the seeded
    init, which is also what an empty schedule would produce.
    """
    if not pairs:
        raise ArgumentError("caption-pair corpus is empty")
    t_start = time.perf_counter()
    dtype = cfg.dtype

    probe = encoder(pairs[0].caption_a)
    dim = probe.D
    n_layers = probe.L
    strategy, weights = _resolve_strategy(cfg, n_layers)

    params = init_params(cfg.seed, dim=dim, dim_out=cfg.dim_out,
                         heads=cfg.heads, n_blocks=cfg.n_blocks,
                         force_projection=cfg.force_projection, dtype=dtype)
    history = TrainHistory(seed=cfg.seed)
    if n_steps == 0:
        history.wall_clock = time.perf_counter() - t_start
        return params, weights, history

    leaves = {k: ad.parameter(v) for k, v in params.named().items()}
    opt = Adam(leaves, lr=cfg.lr)
    w_tensor = None
    opt_w = None
    if weights is not None:
        w_tensor = ad.parameter(weights.w)
        opt_w = Adam({"w": w_tensor}, lr=cfg.lr)

    rng = np.random.default_rng([cfg.seed, 0xBA7C])
    step = 0
    freeze_step = cfg.freeze_step
    for _epoch in range(cfg.epochs):
        if n_steps is not None and step >= n_steps:
            break
        order = rng.permutation(len(pairs))
        n_batches = len(pairs) // cfg.batch_size
        for bi in range(n_batches):
            if n_steps is not None and step >= n_steps:
                break
            batch = [pairs[i] for i in
                     order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]]
            if weights is not None and freeze_step is not None:
                weights = apply_schedule(weights, step, freeze_step)

            embs_a, embs_b = [], []
            for pair in batch:
                for text, dest in ((pair.caption_a, embs_a),
                                   (pair.caption_b, embs_b)):
                    try:
                        h = encoder(text)
                    except Exception as exc:
                        raise ArgumentError(
                            f"encoder failed on record {pair.id!r}: {exc}") from exc
                    if weights is not None and not weights.frozen:
                        c_text = fuse_graph(h, w_tensor)
                    elif weights is not None:
                        c_text = fuse(h, replace_weights(strategy, weights)
                                      ).astype(dtype)
                    else:
                        c_text = fuse(h, strategy).astype(dtype)
                    emb = aggregate_graph(c_text, h.mask, leaves, params)
                    dest.append(emb.reshape(1, -1))

            loss = info_nce_graph(ad.concat(embs_a, axis=0),
                                  ad.concat(embs_b, axis=0), cfg.temperature)
            if not np.isfinite(loss.item()):
                raise NumericError(f"NaN/Inf loss at step {step}")
            opt.zero_grad()
            if opt_w is not None:
                opt_w.zero_grad()
            loss.backward()
            opt.step()
            if weights is not None and not weights.frozen:
                opt_w.step()
                weights.w = w_tensor.data.astype(np.float64).copy()

            history.append(step, loss.item(),
                           None if weights is None else weights.alpha())
            step += 1

    final = params.copy()
    named = final.named()
    for key, leaf in leaves.items():
        named[key][...] = leaf.data
    history.wall_clock = time.perf_counter() - t_start
    return final, weights, history


def replace_weights(strategy, weights):
    """Strategy with its (possibly frozen) weights swapped in."""
    return replace(strategy, weights=weights)
