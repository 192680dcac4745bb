"""Deterministic toy frozen encoder for desk-scale end-to-end runs.

A fixed random-init pre-LN transformer over a byte 3-gram tokenizer. The
same (seed, text) always yields bit-identical hidden states, which is what
lets training/eval runs be reproducible without any external model.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .blocks import init_block_params, multi_head_attention
from .errors import ArgumentError, ConfigError
from .tedh import HiddenStates


@dataclass(frozen=True)
class ToyEncoderConfig:
    seed: int = 0
    layers: int = 4
    dim: int = 32
    heads: int = 4
    max_tokens: int = 32
    vocab_size: int = 4096
    disable_attention: bool = False  # ablation hook used by tests

    def __post_init__(self):
        if self.layers < 1 or self.dim < 1 or self.max_tokens < 1:
            raise ConfigError("layers, dim and max_tokens must be >= 1")
        if self.dim % self.heads != 0:
            raise ConfigError("dim must be divisible by heads")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")


def text_hash(text):
    """Stable content key for a text (used for caching and TEDH dump names)."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def tokenize(text, cfg):
    """Byte 3-gram rolling hash mod vocab_size, truncated to max_tokens."""
    if not text:
        raise ArgumentError("cannot tokenize empty text")
    raw = text.encode("utf-8")
    # pad short texts so even 1-byte inputs produce one token
    padded = raw + b"\x00" * max(0, 3 - len(raw))
    ids = []
    for i in range(len(padded) - 2):
        h = (padded[i] * 31 * 31 + padded[i + 1] * 31 + padded[i + 2])
        ids.append(h % cfg.vocab_size)
        if len(ids) == cfg.max_tokens:
            break
    return ids


_PARAM_CACHE = {}


def _encoder_params(cfg):
    key = (cfg.seed, cfg.layers, cfg.dim, cfg.heads, cfg.max_tokens,
           cfg.vocab_size)
    if key not in _PARAM_CACHE:
        rng = np.random.default_rng(cfg.seed)
        embed = rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.dim))
        pos = rng.normal(0.0, 0.1, size=(cfg.max_tokens, cfg.dim))
        blocks = [init_block_params(rng, cfg.dim, std=0.2)
                  for _ in range(cfg.layers)]
        _PARAM_CACHE[key] = (embed, pos, blocks)
    return _PARAM_CACHE[key]


def toy_encode(text, cfg):
    """Encode a text into all-layer HiddenStates; pure in (seed, text)."""
    ids = tokenize(text, cfg)
    embed, pos, blocks = _encoder_params(cfg)
    n = len(ids)
    x = embed[ids] + pos[:n]
    mask = np.ones(n, dtype=bool)
    layers = []
    with ad.no_grad():
        cur = ad.Tensor(x)
        for bp in blocks:
            if cfg.disable_attention:
                h = cur
            else:
                h = cur + multi_head_attention(
                    ad.layer_norm(cur), mask, bp, cfg.heads)
            hidden = ad.gelu(ad.layer_norm(h) @ bp["w1"] + bp["b1"])
            cur = h + hidden @ bp["w2"] + bp["b2"]
            layers.append(cur.data.copy())
    data = np.stack(layers).astype(np.float32)
    meta = {
        "encoder_id": f"toy:seed={cfg.seed}",
        "tokenizer_id": f"byte3gram:v{cfg.vocab_size}",
        "text_hash": text_hash(text),
        "includes_embedding_layer": "false",
    }
    return HiddenStates(data=data, mask=mask, meta=meta)


class ToyEncoder:
    """Callable encoder with a per-text cache, used by trainer/evaluator."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._cache = {}

    @property
    def encoder_id(self):
        return f"toy:seed={self.cfg.seed}"

    def __call__(self, text):
        key = text_hash(text)
        if key not in self._cache:
            self._cache[key] = toy_encode(text, self.cfg)
        return self._cache[key]


class TedhDirEncoder:
    """Encoder backed by pre-extracted TEDH dumps keyed by text hash."""

    def __init__(self, directory):
        self.directory = directory
        self._cache = {}

    @property
    def encoder_id(self):
        return f"tedh:{self.directory}"

    def __call__(self, text):
        import os

        from .tedh import read_tedh
        key = text_hash(text)
        if key not in self._cache:
            path = os.path.join(self.directory, key + ".tedh")
            if not os.path.exists(path):
                raise ArgumentError(
                    f"no TEDH dump for text hash {key} under {self.directory}")
            self._cache[key] = read_tedh(path)
        return self._cache[key]
