"""Desk-scale conditional denoiser exercising the train-then-freeze schedule.

Data are 2-D Gaussian mixture draws whose component is determined by the
caption; the denoiser conditions on a fused-text summary, so conditioning
measurably reduces the noise-prediction loss when the caption is truthful.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, NumericError
from .fusion import FusionWeights, apply_schedule
from .optim import Adam

DATA_DIM = 2
N_COMPONENTS = 4
COMPONENT_SIGMA = 0.5
COMPONENT_RADIUS = 3.0
TIME_EMBED_DIM = 32
MLP_WIDTH = 128


@dataclass
class NoiseSchedule:
    """Linear-beta schedule; alpha_bar[0] == 1 so t=0 is clean data."""

    T: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.2
    betas: np.ndarray = None
    alpha_bar: np.ndarray = None

    def __post_init__(self):
        if self.betas is None:
            self.betas = np.linspace(self.beta_min, self.beta_max, self.T)
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ArgumentError("betas must lie strictly inside (0, 1)")
        self.T = self.betas.size
        self.alpha_bar = np.concatenate(
            [[1.0], np.cumprod(1.0 - self.betas)[:-1]])


def component_means():
    angles = 2 * np.pi * np.arange(N_COMPONENTS) / N_COMPONENTS
    return COMPONENT_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def caption_component(caption):
    """Deterministic caption -> mixture-component index."""
    digest = hashlib.sha256(caption.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") % N_COMPONENTS


def sample_synthetic(caption, seed):
    """One 2-D draw from the caption's mixture component, seeded."""
    if not caption:
        raise ArgumentError("caption must be non-empty")
    comp = caption_component(caption)
    digest = hashlib.sha256(caption.encode("utf-8")).digest()
    rng = np.random.default_rng([seed, int.from_bytes(digest[4:12], "little")])
    return component_means()[comp] + COMPONENT_SIGMA * rng.normal(size=DATA_DIM)


def forward_diffuse(x0, t, sched, seed_or_rng):
    """x_t = sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) eps; returns (x_t, eps)."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= sched.T):
        raise ArgumentError(f"timestep out of range [0, {sched.T})")
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    eps = rng.normal(size=x0.shape)
    ab = sched.alpha_bar[t]
    if x0.ndim > np.ndim(ab):
        ab = np.reshape(ab, np.shape(ab) + (1,) * (x0.ndim - np.ndim(ab)))
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return x_t, eps


def time_embedding(t, sched_T, dim=TIME_EMBED_DIM):
    """Sinusoidal embedding of (possibly batched) integer timesteps."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = t[:, None] * freqs[None, :] * (1000.0 / sched_T)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def init_denoiser(seed, cond_dim):
    """3-layer MLP (width 128, GELU) mapping [x_t, t_emb, cond] -> noise."""
    rng = np.random.default_rng([seed, 0xD1F])
    in_dim = DATA_DIM + TIME_EMBED_DIM + cond_dim

    def layer(n_in, n_out):
        return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))

    return {
        "w1": layer(in_dim, MLP_WIDTH), "b1": np.zeros(MLP_WIDTH),
        "w2": layer(MLP_WIDTH, MLP_WIDTH), "b2": np.zeros(MLP_WIDTH),
        "w3": layer(MLP_WIDTH, DATA_DIM), "b3": np.zeros(DATA_DIM),
    }


def denoiser_forward(x_t, t_emb, cond, theta):
    """Graph forward; any argument may be a Tensor to receive gradients."""
    to_t = lambda v: v if isinstance(v, ad.Tensor) else ad.Tensor(v)
    x = ad.concat([to_t(x_t), to_t(t_emb), to_t(cond)], axis=1)
    h = ad.gelu(x @ theta["w1"] + theta["b1"])
    h = ad.gelu(h @ theta["w2"] + theta["b2"])
    return h @ theta["w3"] + theta["b3"]


def denoise_loss_graph(x_t, t_emb, cond, eps, theta):
    pred = denoiser_forward(x_t, t_emb, cond, theta)
    diff = pred - ad.Tensor(np.asarray(eps, dtype=np.float64))
    return (diff * diff).sum(axis=1).mean()


def denoise_loss(x_t, t, cond, eps, theta, sched=None):
    """Loss plus gradients w.r.t. theta and the condition summary.

    The condition gradient is the upstream for ``fuse_grad_w`` when the
    fusion weights are still trainable; nothing flows to them once frozen.
    """
    sched = sched or NoiseSchedule()
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    if x_t.shape != eps.shape:
        raise ArgumentError("x_t and eps must have matching shapes")
    t_emb = time_embedding(t, sched.T)
    leaves = {k: ad.parameter(v) for k, v in theta.items()}
    cond_leaf = ad.parameter(cond)
    loss = denoise_loss_graph(x_t, t_emb, cond_leaf, eps, leaves)
    if not np.isfinite(loss.item()):
        raise NumericError("non-finite denoising loss")
    loss.backward()
    theta_grads = {k: leaf.grad for k, leaf in leaves.items()}
    return loss.item(), theta_grads, cond_leaf.grad


@dataclass
class WeightTrajectory:
    """Per-step softmaxed layer weights plus the freeze marker."""

    freeze_step: int                     # None = never frozen
    steps: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    frozen_flags: list = field(default_factory=list)

    def append(self, step, alpha, frozen):
        self.steps.append(int(step))
        self.alphas.append(np.asarray(alpha, dtype=np.float64).copy())
        self.frozen_flags.append(bool(frozen))


def trajectory_report(traj, path):
    """Emit the trajectory as a TSV table for external plotting."""
    if not traj.steps:
        raise ArgumentError("empty weight trajectory")
    n_alpha = len(traj.alphas[0])
    with open(path, "w", encoding="utf-8") as f:
        header = ["step"] + [f"alpha_{i + 1}" for i in range(n_alpha)] + ["frozen"]
        f.write("\t".join(header) + "\n")
        for step, alpha, frozen in zip(traj.steps, traj.alphas, traj.frozen_flags):
            row = [str(step)] + [repr(float(a)) for a in alpha] \
                + ["1" if frozen else "0"]
            f.write("\t".join(row) + "\n")


def load_trajectory(path):
    """Parse a trajectory TSV back; inverse of trajectory_report."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    traj = WeightTrajectory(freeze_step=None)
    for line in lines[1:]:
        parts = line.split("\t")
        traj.append(int(parts[0]), [float(x) for x in parts[1:-1]],
                    parts[-1] == "1")
    return traj


@dataclass
class ToyDiffConfig:
    steps: int = 5000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    freeze_step: int = None              # None = freeze disabled
    sched: NoiseSchedule = field(default_factory=NoiseSchedule)
    shuffle_conditions: bool = False     # control: condition on wrong captions
    loss_window: int = 500               # steps averaged into final_loss


def _layer_mean_stack(h):
    """(L, D) per-layer masked token means of the normalized stack."""
    from .fusion import normalized_stack
    stack = normalized_stack(h)
    return stack[:, h.mask, :].mean(axis=1)


def train_joint(captions, encoder, cfg):
    """Joint denoiser + layer-weight training with the two-step schedule.

    Returns (theta, FusionWeights, WeightTrajectory, final_loss). The
    trajectory is logged every step; rows at and after the freeze step are
    exact copies of the frozen alphas.
    """
    captions = list(captions)
    if len({caption_component(c) for c in captions}) < 2:
        raise ArgumentError("corpus must cover at least two mixture components")
    probe = encoder(captions[0])
    n_layers = probe.L
    cond_dim = probe.D

    means_by_caption = np.stack([_layer_mean_stack(encoder(c)) for c in captions])
    component_by_caption = np.array([caption_component(c) for c in captions])
    mus = component_means()

    rng = np.random.default_rng([cfg.seed, 0x70D])
    # The shuffle control must resample a wrong caption for every sample of
    # every batch: a fixed mismatched assignment would still identify the
    # true component (the map caption -> component is deterministic) and the
    # denoiser would memorize straight through it. A dedicated stream keeps
    # the data draws identical to the unshuffled run.
    rng_shuffle = np.random.default_rng([cfg.seed, 0xC0])

    theta_np = init_denoiser(cfg.seed, cond_dim)
    theta = {k: ad.parameter(v) for k, v in theta_np.items()}
    opt_theta = Adam(theta, lr=cfg.lr)
    weights = FusionWeights.zeros(n_layers)
    w_tensor = ad.parameter(weights.w)
    opt_w = Adam({"w": w_tensor}, lr=cfg.lr)

    traj = WeightTrajectory(freeze_step=cfg.freeze_step)
    losses = []
    for step in range(cfg.steps):
        if cfg.freeze_step is not None:
            weights = apply_schedule(weights, step, cfg.freeze_step)

        idx = rng.integers(0, len(captions), size=cfg.batch_size)
        x0 = mus[component_by_caption[idx]] \
            + COMPONENT_SIGMA * rng.normal(size=(cfg.batch_size, DATA_DIM))
        t = rng.integers(0, cfg.sched.T, size=cfg.batch_size)
        x_t, eps = forward_diffuse(x0, t, cfg.sched, rng)
        t_emb = time_embedding(t, cfg.sched.T)

        cond_idx = idx
        if cfg.shuffle_conditions:
            cond_idx = (idx + rng_shuffle.integers(
                1, len(captions), size=idx.size)) % len(captions)

        # (L, B, D) stack of per-caption layer summaries for this batch
        stack = means_by_caption[cond_idx].swapaxes(0, 1)
        if weights.frozen:
            cond = ad.Tensor(np.tensordot(weights.alpha(), stack, axes=1))
        else:
            cond = ad.weighted_sum(ad.softmax(w_tensor), stack)

        loss = denoise_loss_graph(x_t, t_emb, cond, eps, theta)
        if not np.isfinite(loss.item()):
            raise NumericError(f"NaN/Inf denoising loss at step {step}")
        opt_theta.zero_grad()
        opt_w.zero_grad()
        loss.backward()
        opt_theta.step()
        if not weights.frozen:
            opt_w.step()
            weights.w = w_tensor.data.copy()

        losses.append(loss.item())
        traj.append(step, weights.alpha(), weights.frozen)

    final_loss = float(np.mean(losses[-cfg.loss_window:]))
    theta_out = {k: leaf.data.copy() for k, leaf in theta.items()}
    return theta_out, weights, traj, final_loss
