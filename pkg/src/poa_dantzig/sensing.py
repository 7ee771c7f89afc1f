"""Seeded random sensing matrices and noisy observations.

Every random draw goes through :func:`rng_for`, which maps a base seed and a
tuple of integer keys to an independent PCG64 stream. PCG64 with
``SeedSequence`` spawning is platform independent, so experiments replay
bit-exactly on any machine running the same numpy version.
"""

from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .errors import DimensionError

__all__ = [
    "RNG_NAME",
    "Purpose",
    "SensingKind",
    "SensingMatrix",
    "NoiseSpec",
    "rng_for",
    "derive_seed",
    "gaussian_sensing",
    "bernoulli_sensing",
    "observe",
]

RNG_NAME = f"numpy.random.PCG64 (SeedSequence spawn keys, numpy {np.__version__})"


class Purpose(IntEnum):
    """Sub-stream tags used when deriving per-trial seeds."""

    MATRIX = 0
    SIGNAL = 1
    NOISE = 2
    SELECTION = 3


def rng_for(seed, *keys):
    """Return a ``Generator`` for the sub-stream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *keys):
    """Derive a 64-bit child seed from ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class SensingKind(str, Enum):
    GAUSSIAN = "gaussian_unit_columns"
    BERNOULLI = "bernoulli_signed"


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    kind: SensingKind
    seed: int
    entries: np.ndarray

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def p(self):
        return self.entries.shape[1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")


def _check_shape(n, p):
    if int(n) != n or int(p) != p or n < 1 or p < 1:
        raise DimensionError(f"n and p must be positive integers, got {n}, {p}")
    if n > p:
        raise DimensionError(f"sensing matrix needs n <= p, got n={n} > p={p}")


def gaussian_sensing(n, p, seed):
    """Standard-normal ``n x p`` matrix with columns rescaled to unit l2 norm."""
    _check_shape(n, p)
    x = rng_for(seed).standard_normal((n, p))
    x /= np.linalg.norm(x, axis=0)
    x.setflags(write=False)
    return SensingMatrix(SensingKind.GAUSSIAN, int(seed), x)


def bernoulli_sensing(n, p, seed):
    """``n x p`` matrix with i.i.d. entries uniform on ``{+1/sqrt(n), -1/sqrt(n)}``."""
    _check_shape(n, p)
    signs = rng_for(seed).integers(0, 2, size=(n, p), dtype=np.int8)
    x = (2.0 * signs - 1.0) / np.sqrt(n)
    x.setflags(write=False)
    return SensingMatrix(SensingKind.BERNOULLI, int(seed), x)


def observe(X, beta, noise, complex_noise=False):
    """Return ``X @ beta + z`` with ``z ~ N(0, sigma^2)`` i.i.d.

    The noise is real even when `beta` is complex. With `complex_noise` the
    real and imaginary parts of `z` are drawn independently, each with
    standard deviation ``sigma``.
    """
    x = np.asarray(X)
    beta = np.asarray(beta)
    if beta.ndim != 1 or beta.shape[0] != x.shape[1]:
        raise DimensionError(
            f"signal of shape {beta.shape} does not match sensing matrix {x.shape}")
    y = x @ beta
    if noise is None or noise.sigma == 0:
        return y
    rng = rng_for(noise.seed)
    n = x.shape[0]
    if complex_noise:
        z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    else:
        z = rng.standard_normal(n)
    return y + noise.sigma * z
