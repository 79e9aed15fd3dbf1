"""Deterministic numerical primitives shared by every other module.

Provides a seeded, splittable random stream, Box-Muller standard normals,
multivariate normal sampling via Cholesky factors, random correlation
matrices, and the standard normal CDF.  Matrices are plain float64
``numpy.ndarray`` objects in row-major layout.
"""

from __future__ import annotations

import math

import numpy as np


class RandomStream:
    """Seeded random source with deterministic, independent splits.

    The same seed yields a bit-identical draw sequence.  ``split(i)``
    derives child streams that are independent by construction (distinct
    spawn keys of the underlying ``numpy.random.SeedSequence``), so
    realization ``i`` of an experiment never shares state with
    realization ``j``.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._path)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def split(self, index: int) -> "RandomStream":
        """Child stream number ``index``; independent of the parent."""
        if index < 0:
            raise ValueError("split index must be nonnegative")
        return RandomStream(self.seed, self._path + (int(index),))

    def uniform(self, size=None) -> np.ndarray:
        """Uniform draws in [0, 1)."""
        return self._gen.random(size)

    def standard_normal(self, size) -> np.ndarray:
        """Standard normal draws via the Box-Muller transform."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1], keeps log finite
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n].reshape(shape)

    def bernoulli(self, p: np.ndarray) -> np.ndarray:
        """One 0/1 draw per entry of ``p``."""
        p = np.asarray(p, dtype=float)
        return (self._gen.random(p.shape) < p).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def __repr__(self):  # pragma: no cover
        return f"RandomStream(seed={self.seed}, path={self._path})"


def std_normal_cdf(x: float) -> float:
    """CDF of the standard normal at ``x``.

    Raises ValueError for non-finite input.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"std_normal_cdf requires finite input, got {x!r}")
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def random_correlation_covariance(dim: int, stream: RandomStream) -> np.ndarray:
    """Random symmetric positive-definite matrix with unit diagonal.

    Draws a ``dim x dim`` matrix A with i.i.d. uniform(0,1) entries, forms
    A A^T + dim*1e-3*I (strictly positive definite), and rescales to unit
    diagonal.
    """
    dim = int(dim)
    if dim < 1:
        raise ValueError("dim must be >= 1")
    a = stream.uniform((dim, dim))
    s = a @ a.T + dim * 1e-3 * np.eye(dim)
    d = 1.0 / np.sqrt(np.diag(s))
    return s * np.outer(d, d)


def mvn_sample(n: int, cov: np.ndarray, stream: RandomStream) -> np.ndarray:
    """``n`` draws from N(0, cov), one per row.

    cov must be symmetric positive definite (checked via Cholesky).
    """
    n = int(n)
    if n < 0:
        raise ValueError("n must be >= 0")
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-10):
        raise ValueError("covariance must be symmetric")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc
    dim = cov.shape[0]
    if n == 0:
        return np.empty((0, dim))
    z = stream.standard_normal((n, dim))
    return z @ chol.T
