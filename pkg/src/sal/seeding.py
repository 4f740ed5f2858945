"""Deterministic seed derivation.

All per-frame randomness in the perturbation modules flows through
``derive_frame_seed`` so that a sequence can be processed in any frame
order (or in parallel) and still produce byte-identical output.
"""

from __future__ import annotations

import numpy as np

_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF

# Stream byte convention: 0 = left / mono reference stream, 1 = right.
_STREAM_BYTES = {"mono": 0, "left": 0, "right": 1}


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV64_PRIME) & _U64
    return h


def stream_byte(stream: str | int) -> int:
    """Map a stream identifier to its single-byte encoding (0 or 1)."""
    if isinstance(stream, bool):
        raise ValueError(f"invalid stream identifier: {stream!r}")
    if isinstance(stream, int):
        if stream not in (0, 1):
            raise ValueError(f"stream byte must be 0 or 1, got {stream}")
        return stream
    try:
        return _STREAM_BYTES[stream]
    except KeyError:
        raise ValueError(f"unknown stream identifier: {stream!r}") from None


def derive_frame_seed(master_seed: int, module_name: str, frame_index: int, stream: str | int) -> int:
    """Derive a 64-bit seed from (master seed, module name, frame, stream).

    Defined as FNV-1a 64 over: master_seed as 8 little-endian bytes,
    module_name as UTF-8, frame_index as 8 little-endian bytes, then a
    single stream byte. Pure and platform independent.
    """
    if not 0 <= master_seed < 2**64:
        raise ValueError("master_seed must fit in an unsigned 64-bit integer")
    if frame_index < 0:
        raise ValueError("frame_index must be non-negative")
    payload = (
        master_seed.to_bytes(8, "little")
        + module_name.encode("utf-8")
        + frame_index.to_bytes(8, "little")
        + bytes([stream_byte(stream)])
    )
    return fnv1a64(payload)


def rng_from_seed(seed: int) -> np.random.Generator:
    """A numpy Generator with platform-stable output for a given seed."""
    return np.random.Generator(np.random.PCG64(seed))
