"""Small input-validation helpers used by the estimator classes."""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ConfigError, NumericsError


def as_float32(x, name: str = "X", ndim: int | None = None) -> np.ndarray:
    """Coerce to a contiguous float32 array and check it is finite."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if ndim is not None and arr.ndim != ndim:
        raise ConfigError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{name} contains NaN or Inf entries")
    return arr


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if not isinstance(value, (int, np.integer)) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def stable_seed(*parts) -> int:
    """Derive a deterministic 32-bit seed from arbitrary labels.

    Uses crc32 over the repr so the result does not depend on Python's
    per-process hash randomization.
    """
    text = "|".join(repr(p) for p in parts)
    return zlib.crc32(text.encode("utf-8"))
