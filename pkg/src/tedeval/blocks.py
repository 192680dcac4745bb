"""Pre-LayerNorm transformer block: multi-head self-attention + GELU MLP.

One block computes, for input x of shape (T, D) and a boolean validity mask
over the T positions:

    h   = x + MHA(LN(x))      # masked positions get zero attention weight
    out = h + MLP(LN(h))

so out = x + attn_out + mlp_out. Parameters live in a flat dict; see
``init_block_params`` for the key set and shapes.
"""

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ConfigError

BLOCK_PARAM_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                    "w1", "b1", "w2", "b2")


def init_block_params(rng, dim, mlp_ratio=4, std=0.02, dtype=np.float64):
    """Fresh block parameters: normal(0, std) weights, zero biases."""
    hidden = dim * mlp_ratio

    def w(rows, cols):
        return rng.normal(0.0, std, size=(rows, cols)).astype(dtype)

    return {
        "wq": w(dim, dim), "bq": np.zeros(dim, dtype=dtype),
        "wk": w(dim, dim), "bk": np.zeros(dim, dtype=dtype),
        "wv": w(dim, dim), "bv": np.zeros(dim, dtype=dtype),
        "wo": w(dim, dim), "bo": np.zeros(dim, dtype=dtype),
        "w1": w(dim, hidden), "b1": np.zeros(hidden, dtype=dtype),
        "w2": w(hidden, dim), "b2": np.zeros(dim, dtype=dtype),
    }


def _split_heads(x, heads):
    # (T, D) -> (heads, T, D // heads)
    t, d = x.shape
    return x.reshape(t, heads, d // heads).swapaxes(0, 1)


def _merge_heads(x):
    # (heads, T, hd) -> (T, D)
    h, t, hd = x.shape
    return x.swapaxes(0, 1).reshape(t, h * hd)


def multi_head_attention(x, mask, params, heads):
    """Bidirectional masked self-attention over a (T, D) sequence."""
    t, d = x.shape
    head_dim = d // heads
    q = _split_heads(x @ params["wq"] + params["bq"], heads)
    k = _split_heads(x @ params["wk"] + params["bk"], heads)
    v = _split_heads(x @ params["wv"] + params["bv"], heads)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(head_dim))
    key_mask = np.broadcast_to(np.asarray(mask, dtype=bool), (heads, t, t))
    probs = ad.masked_softmax(scores, key_mask, axis=-1)
    # explicit broadcast-sum instead of matmul: appended masked positions then
    # contribute exact zeros at the tail of a sequential reduction, keeping
    # valid positions bit-identical under padding
    ctx = _merge_heads(
        (probs.reshape(heads, t, t, 1) * v.reshape(heads, 1, t, head_dim)).sum(axis=2))
    return ctx @ params["wo"] + params["bo"]


def attention_block(x, mask, params, heads, eps=1e-6, gelu_approx=False):
    """One pre-LN block. Masked positions are ignored by every query."""
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    t, d = x.shape
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t,):
        raise ArgumentError(f"mask shape {mask.shape} does not match T={t}")
    if not mask.any():
        raise ArgumentError("attention_block requires at least one valid position")
    if d % heads != 0:
        raise ConfigError(f"dim {d} not divisible by {heads} heads")
    h = x + multi_head_attention(ad.layer_norm(x, eps), mask, params, heads)
    hidden = ad.gelu(ad.layer_norm(h, eps) @ params["w1"] + params["b1"],
                     approximate=gelu_approx)
    return h + hidden @ params["w2"] + params["b2"]
