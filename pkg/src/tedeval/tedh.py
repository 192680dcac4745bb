"""TEDH binary interchange format for per-layer hidden-state dumps.

Layout (little-endian, in order):

    magic   4 bytes  b"TEDH"
    version u16      currently 1
    flags   u16      reserved, 0
    L       u32      layer count
    N       u32      token count
    D       u32      model dim
    dtype   u8       0 = float32 little-endian (only value defined)
    metalen u32      byte length of the metadata blob
    meta    metalen  UTF-8 "key=value" lines
    mask    N bytes  0/1 per token, 1 = valid
    payload L*N*D*4  float32, row-major [layer][token][dim]

Round trips are bit-exact including mask and metadata.
"""

import struct
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, FormatError

MAGIC = b"TEDH"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIIBI")


@dataclass
class HiddenStates:
    """All-layer token representations of one text: data[L, N, D] + mask[N]."""

    data: np.ndarray          # float32 (L, N, D)
    mask: np.ndarray          # bool (N,)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.data.ndim != 3:
            raise ArgumentError("hidden states must have shape (L, N, D)")
        l, n, d = self.data.shape
        if min(l, n, d) < 1:
            raise ArgumentError("hidden-state dims must all be >= 1")
        if self.mask.shape != (n,):
            raise ArgumentError("mask length must equal token count")
        if not self.mask.any():
            raise ArgumentError("at least one token must be valid")
        if not np.all(np.isfinite(self.data)):
            raise ArgumentError("hidden states contain non-finite values")

    @property
    def L(self):
        return self.data.shape[0]

    @property
    def N(self):
        return self.data.shape[1]

    @property
    def D(self):
        return self.data.shape[2]

    def layer(self, index):
        """Layer by index; negative indices count from the last layer."""
        l = self.L
        if not -l <= index < l:
            raise ArgumentError(f"layer index {index} out of range for L={l}")
        return self.data[index]


def _encode_meta(meta):
    lines = []
    for key, value in sorted(meta.items()):
        key, value = str(key), str(value)
        if "=" in key or "\n" in key or "\n" in str(value):
            raise ArgumentError(f"metadata key/value not encodable: {key!r}")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def _decode_meta(blob):
    meta = {}
    text = blob.decode("utf-8")
    for line in text.splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        meta[key] = value
    return meta


def _require_little_endian():
    if sys.byteorder != "little":
        raise FormatError("byte_order", "TEDH requires a little-endian host")


def write_tedh(h, path):
    """Serialize HiddenStates to ``path``; bit-exact round trip guaranteed."""
    _require_little_endian()
    meta_blob = _encode_meta(h.meta)
    header = _HEADER.pack(MAGIC, VERSION, 0, h.L, h.N, h.D, 0, len(meta_blob))
    with open(path, "wb") as f:
        f.write(header)
        f.write(meta_blob)
        f.write(h.mask.astype(np.uint8).tobytes())
        f.write(h.data.tobytes())


def read_tedh(path):
    """Read a TEDH file back into HiddenStates, validating the format."""
    _require_little_endian()
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError("truncated", f"file shorter than the fixed header: {path}")
    magic, version, _flags, l, n, d, dtype, metalen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError("bad_magic", f"not a TEDH file: {path}")
    if version != VERSION:
        raise FormatError("bad_version", f"unsupported TEDH version {version}")
    if dtype != 0:
        raise FormatError("bad_dtype", f"unknown dtype code {dtype}")
    offset = _HEADER.size
    if len(raw) < offset + metalen + n:
        raise FormatError("truncated", f"metadata/mask truncated: {path}")
    meta = _decode_meta(raw[offset:offset + metalen])
    offset += metalen
    mask = np.frombuffer(raw[offset:offset + n], dtype=np.uint8).astype(bool)
    offset += n
    expected = l * n * d * 4
    payload = raw[offset:]
    if len(payload) != expected:
        raise FormatError(
            "shape_mismatch",
            f"payload is {len(payload)} bytes, header implies {expected}: {path}")
    data = np.frombuffer(payload, dtype="<f4").reshape(l, n, d).copy()
    return HiddenStates(data=data, mask=mask, meta=meta)
