"""Sentence-level context aggregator.

Prepends a learnable context token to the fused token sequence, runs a small
stack of pre-LN attention blocks with bidirectional masking, applies a final
parameter-free LayerNorm and an optional linear projection, and reads the
sentence embedding out of position 0.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .blocks import BLOCK_PARAM_KEYS, attention_block, init_block_params
from .errors import ArgumentError, ConfigError, FormatError, NumericError

CKPT_MAGIC = b"TAGG"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHHIIIII")

LN_EPS = 1e-6


@dataclass
class AggregatorParams:
    """All aggregator parameters plus its dimensional configuration."""

    context_token: np.ndarray        # (D,)
    blocks: list                     # per block: dict of BLOCK_PARAM_KEYS
    projection: dict                 # {"w": (D, D_out), "b": (D_out,)} or None
    dim: int
    dim_out: int
    heads: int

    @property
    def n_blocks(self):
        return len(self.blocks)

    def named(self):
        """Flat name -> array view of every trainable parameter."""
        out = {"context_token": self.context_token}
        for i, blk in enumerate(self.blocks):
            for key in BLOCK_PARAM_KEYS:
                out[f"block{i}.{key}"] = blk[key]
        if self.projection is not None:
            out["proj.w"] = self.projection["w"]
            out["proj.b"] = self.projection["b"]
        return out

    def copy(self):
        return AggregatorParams(
            context_token=self.context_token.copy(),
            blocks=[{k: v.copy() for k, v in blk.items()} for blk in self.blocks],
            projection=None if self.projection is None else
            {k: v.copy() for k, v in self.projection.items()},
            dim=self.dim, dim_out=self.dim_out, heads=self.heads)


def init_params(seed, dim=1024, dim_out=None, heads=8, n_blocks=2,
                force_projection=False, dtype=np.float64):
    """Seeded init: normal(0, 0.02) weights and context token, zero biases."""
    dim_out = dim if dim_out is None else dim_out
    if dim % heads != 0:
        raise ConfigError(f"dim {dim} not divisible by heads {heads}")
    if n_blocks < 1:
        raise ConfigError("need at least one attention block")
    rng = np.random.default_rng(seed)
    context = rng.normal(0.0, 0.02, size=dim).astype(dtype)
    blocks = [init_block_params(rng, dim, std=0.02, dtype=dtype)
              for _ in range(n_blocks)]
    projection = None
    if dim != dim_out or force_projection:
        projection = {
            "w": rng.normal(0.0, 0.02, size=(dim, dim_out)).astype(dtype),
            "b": np.zeros(dim_out, dtype=dtype),
        }
    return AggregatorParams(context_token=context, blocks=blocks,
                            projection=projection, dim=dim, dim_out=dim_out,
                            heads=heads)


def aggregate_graph(c_text, mask, leaves, params):
    """Differentiable aggregator forward over autodiff leaves.

    ``leaves`` is the name -> Tensor dict matching ``params.named()``;
    ``c_text`` may be a numpy array or a Tensor (for fusion-weight training).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ArgumentError("aggregate requires at least one valid token")
    seq = c_text if isinstance(c_text, ad.Tensor) else ad.Tensor(c_text)
    n, d = seq.shape
    if d != params.dim:
        raise ArgumentError(f"token dim {d} does not match aggregator dim {params.dim}")
    if mask.shape != (n,):
        raise ArgumentError("mask length does not match token count")
    if not mask.all():
        # drop padded tokens entirely: attention reductions then run over the
        # same arrays with or without padding, keeping outputs bit-identical
        seq = seq[np.flatnonzero(mask)]
    x = ad.concat([leaves["context_token"].reshape(1, d), seq], axis=0)
    full_mask = np.ones(x.shape[0], dtype=bool)
    for i in range(params.n_blocks):
        blk = {key: leaves[f"block{i}.{key}"] for key in BLOCK_PARAM_KEYS}
        x = attention_block(x, full_mask, blk, params.heads, eps=LN_EPS)
    x = ad.layer_norm(x, LN_EPS)
    if params.projection is not None:
        x = x @ leaves["proj.w"] + leaves["proj.b"]
    return x[0]


def aggregate(c_text, mask, params):
    """Forward-only aggregation; returns the (D_out,) context embedding."""
    with ad.no_grad():
        leaves = {k: ad.Tensor(v) for k, v in params.named().items()}
        return aggregate_graph(c_text, mask, leaves, params).data.copy()


def similarity(a, b):
    """Cosine similarity of two embeddings, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError("embeddings have mismatched dimensions")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def dot_similarity(a, b):
    """Unnormalized dot-product similarity (sensitivity-analysis variant)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError("embeddings have mismatched dimensions")
    return float(a @ b)


def save_checkpoint(params, path, meta=None):
    """Binary checkpoint: fixed header + float32 blobs in documented order.

    Header carries dims/heads/blocks plus a UTF-8 "key=value" metadata blob
    (training fingerprint: encoder id, fusion strategy). Blob order:
    context_token, then per block wq,bq,wk,bk,wv,bv,wo,bo,w1,b1,w2,b2, then
    projection w and b when present (flag bit 0).
    """
    meta_blob = "\n".join(f"{k}={v}" for k, v in sorted((meta or {}).items())
                          ).encode("utf-8")
    flags = 1 if params.projection is not None else 0
    header = _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, flags,
                               params.dim, params.dim_out, params.heads,
                               params.n_blocks, len(meta_blob))
    with open(path, "wb") as f:
        f.write(header)
        f.write(meta_blob)
        f.write(params.context_token.astype("<f4").tobytes())
        for blk in params.blocks:
            for key in BLOCK_PARAM_KEYS:
                f.write(blk[key].astype("<f4").tobytes())
        if params.projection is not None:
            f.write(params.projection["w"].astype("<f4").tobytes())
            f.write(params.projection["b"].astype("<f4").tobytes())


def load_checkpoint(path, dtype=np.float64):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _CKPT_HEADER.size:
        raise FormatError("truncated", f"checkpoint shorter than header: {path}")
    magic, version, flags, dim, dim_out, heads, n_blocks, metalen = \
        _CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise FormatError("bad_magic", f"not an aggregator checkpoint: {path}")
    if version != CKPT_VERSION:
        raise FormatError("bad_version", f"unsupported checkpoint version {version}")
    offset = _CKPT_HEADER.size
    if len(raw) < offset + metalen:
        raise FormatError("truncated", f"checkpoint metadata truncated: {path}")
    meta = {}
    for line in raw[offset:offset + metalen].decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            meta[key] = value
    offset += metalen
    hidden = dim * 4

    def take(*shape):
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + count * 4
        if end > len(raw):
            raise FormatError("truncated", f"checkpoint payload truncated: {path}")
        arr = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape)
        offset = end
        return arr.astype(dtype)

    context = take(dim)
    blocks = []
    for _ in range(n_blocks):
        blk = {
            "wq": take(dim, dim), "bq": take(dim),
            "wk": take(dim, dim), "bk": take(dim),
            "wv": take(dim, dim), "bv": take(dim),
            "wo": take(dim, dim), "bo": take(dim),
            "w1": take(dim, hidden), "b1": take(hidden),
            "w2": take(hidden, dim), "b2": take(dim),
        }
        blocks.append(blk)
    projection = None
    if flags & 1:
        projection = {"w": take(dim, dim_out), "b": take(dim_out)}
    if offset != len(raw):
        raise FormatError("shape_mismatch",
                          f"checkpoint has {len(raw) - offset} trailing bytes: {path}")
    params = AggregatorParams(context_token=context, blocks=blocks,
                              projection=projection, dim=dim, dim_out=dim_out,
                              heads=heads)
    return params, meta
