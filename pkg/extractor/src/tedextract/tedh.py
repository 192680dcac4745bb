"""TEDH writer for the hidden-state interchange format.

Byte layout (little-endian, in order):

    magic   4 bytes  b"TEDH"
    version u16      1
    flags   u16      reserved, 0
    L       u32      layer count
    N       u32      token count
    D       u32      model dim
    dtype   u8       0 = float32 little-endian
    metalen u32      byte length of the metadata blob
    meta    metalen  UTF-8 "key=value" lines
    mask    N bytes  0/1 per token, 1 = valid
    payload L*N*D*4  float32, row-major [layer][token][dim]

This is an independent implementation of the shared on-disk contract; the
consuming harness has its own reader, and both are held to the same format
conformance vectors.
"""

import struct
import sys

import numpy as np

MAGIC = b"TEDH"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIIBI")


class TedhFormatError(Exception):
    """The data to be written (or read back) violates the TEDH contract."""


def _encode_meta(meta):
    lines = []
    for key, value in sorted(meta.items()):
        key, value = str(key), str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise TedhFormatError(f"metadata entry not encodable: {key!r}")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def write_tedh(data, mask, meta, path):
    """Write one dump: data float32 (L, N, D), mask bool (N,)."""
    if sys.byteorder != "little":
        raise TedhFormatError("TEDH requires a little-endian host")
    data = np.ascontiguousarray(data, dtype="<f4")
    mask = np.asarray(mask, dtype=bool)
    if data.ndim != 3:
        raise TedhFormatError("hidden states must have shape (L, N, D)")
    l, n, d = data.shape
    if mask.shape != (n,):
        raise TedhFormatError("mask length must equal token count")
    if not mask.any():
        raise TedhFormatError("at least one token must be valid")
    if not np.all(np.isfinite(data)):
        raise TedhFormatError("hidden states contain non-finite values")
    meta_blob = _encode_meta(meta)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, 0, l, n, d, 0, len(meta_blob)))
        f.write(meta_blob)
        f.write(mask.astype(np.uint8).tobytes())
        f.write(data.tobytes())
