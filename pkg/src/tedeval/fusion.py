"""Layer fusion: collapse per-layer hidden states into one token sequence.

Strategies: a single layer verbatim, an unnormalized average, the
norm-then-average scheme, or a learnable softmax-weighted sum over
normalized layers (which reduces to norm-avg at uniform weights).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, StateError

LN_EPS = 1e-6


@dataclass
class FusionWeights:
    """Per-layer scalar weights; once frozen they never change again."""

    w: np.ndarray
    frozen: bool = False
    step_frozen_at: int = None

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        if self.w.ndim != 1 or self.w.size < 1:
            raise ArgumentError("fusion weights must be a non-empty vector")

    def __setattr__(self, name, value):
        # once frozen, the weights are immutable for the rest of the run
        if getattr(self, "frozen", False) and name in ("w", "frozen"):
            raise StateError("fusion weights are frozen and cannot change")
        object.__setattr__(self, name, value)

    @property
    def L(self):
        return self.w.size

    def alpha(self):
        """Softmax attention scores over the layer weights."""
        with ad.no_grad():
            return ad.softmax(ad.Tensor(self.w)).data

    @classmethod
    def zeros(cls, L):
        """Neutral init: uniform alpha, i.e. exactly norm-avg."""
        return cls(w=np.zeros(L))

    def to_record(self):
        lines = [f"L={self.L}",
                 "w=" + " ".join(repr(float(x)) for x in self.w),
                 f"frozen={'true' if self.frozen else 'false'}",
                 f"step_frozen_at={'' if self.step_frozen_at is None else self.step_frozen_at}"]
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_record())

    @classmethod
    def load(cls, path):
        fields = {}
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                key, _, value = line.strip().partition("=")
                fields[key] = value
        w = np.array([float(x) for x in fields["w"].split()])
        if int(fields["L"]) != w.size:
            raise ArgumentError("fusion weight record: L does not match w")
        frozen = fields["frozen"] == "true"
        sfa = fields.get("step_frozen_at", "")
        return cls(w=w, frozen=frozen,
                   step_frozen_at=int(sfa) if sfa else None)


@dataclass(frozen=True)
class FusionStrategy:
    """Which fusion to apply: single_layer(i) | avg | norm_avg | learnable."""

    kind: str
    layer_index: int = None
    weights: FusionWeights = None

    @classmethod
    def single_layer(cls, index):
        return cls(kind="single_layer", layer_index=index)

    @classmethod
    def avg(cls):
        return cls(kind="avg")

    @classmethod
    def norm_avg(cls):
        return cls(kind="norm_avg")

    @classmethod
    def learnable(cls, weights):
        return cls(kind="learnable", weights=weights)

    @property
    def name(self):
        if self.kind == "single_layer":
            return f"single_layer({self.layer_index})"
        return self.kind


def normalized_stack(h):
    """Parameter-free layer norm applied to every (layer, token) row."""
    with ad.no_grad():
        return ad.layer_norm(ad.Tensor(h.data.astype(np.float64)), LN_EPS).data


def fuse(h, strategy):
    """Fuse HiddenStates into one (N, D) token sequence per the strategy."""
    if strategy.kind == "single_layer":
        return h.layer(strategy.layer_index).astype(np.float64).copy()
    if strategy.kind == "avg":
        return h.data.astype(np.float64).mean(axis=0)
    if strategy.kind == "norm_avg":
        return normalized_stack(h).mean(axis=0)
    if strategy.kind == "learnable":
        weights = strategy.weights
        if weights.L != h.L:
            raise ArgumentError(
                f"fusion weights have L={weights.L}, hidden states L={h.L}")
        alpha = weights.alpha()
        return np.tensordot(alpha, normalized_stack(h), axes=1)
    raise ArgumentError(f"unknown fusion strategy {strategy.kind!r}")


def fuse_graph(h, w_tensor):
    """Differentiable learnable fusion: sum_i softmax(w)_i * LN(h_i).

    ``w_tensor`` is an autodiff leaf; the normalized stack is a constant.
    """
    stack = normalized_stack(h)
    alpha = ad.softmax(w_tensor)
    return ad.weighted_sum(alpha, stack)


def fuse_grad_w(h, weights, upstream_grad):
    """Gradient of the learnable fusion output w.r.t. the layer weights.

    Closed form through the softmax: with s_i = <upstream, LN(h_i)> and
    alpha = softmax(w), grad_j = alpha_j * (s_j - sum_i alpha_i s_i).
    """
    if weights.frozen:
        raise StateError("gradient requested for frozen fusion weights")
    if weights.L != h.L:
        raise ArgumentError("fusion weights do not match hidden-state layers")
    upstream = np.asarray(upstream_grad, dtype=np.float64)
    stack = normalized_stack(h)
    s = stack.reshape(h.L, -1) @ upstream.reshape(-1)
    alpha = weights.alpha()
    return alpha * (s - float(alpha @ s))


def mean_pool_last(h):
    """Masked mean of the last layer's token vectors."""
    if not h.mask.any():
        raise ArgumentError("cannot mean-pool with all tokens masked")
    last = h.layer(-1).astype(np.float64)
    return last[h.mask].mean(axis=0)


def apply_schedule(weights, step, freeze_step):
    """Train-then-freeze schedule; freezing is permanent and idempotent."""
    if step < 0:
        raise ArgumentError("step must be non-negative")
    if weights.frozen:
        return weights
    if step >= freeze_step:
        return replace(weights, frozen=True, step_frozen_at=step)
    return weights
