"""Complex linear algebra, DFT matrices and seeded sampling.

Every signal in the package is a complex128 numpy array. "Variance" of a
complex quantity always means E|z|^2, split evenly between the real and
imaginary parts.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

PIVOT_FLOOR = 1e-14


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a Hermitian system is not numerically positive definite."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator for the substream identified by ``(seed, *keys)``.

    Distinct key tuples give statistically independent streams, so a trial
    can be replayed without simulating the trials before it.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


@lru_cache(maxsize=32)
def _dft(n: int) -> np.ndarray:
    k = np.arange(n)
    m = np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)
    m.setflags(write=False)
    return m


def dft_matrix(n: int) -> np.ndarray:
    """Unitary n-point DFT matrix, entry (j, k) = exp(-2 pi i j k / n) / sqrt(n)."""
    if n < 1:
        raise ValueError(f"DFT size must be positive, got {n}")
    return _dft(int(n))


def submatrix_rows(m: np.ndarray, idx: Sequence[int] | np.ndarray) -> np.ndarray:
    """Rows of ``m`` selected by ``idx``, kept in the order given."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= m.shape[0]):
        raise IndexError(f"row index out of range for matrix with {m.shape[0]} rows")
    return m[idx]


def hermitian_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for Hermitian positive definite ``a``.

    Works on stacks of matrices (leading batch dimensions). A Cholesky pivot
    below ``PIVOT_FLOOR`` times the mean diagonal raises SingularMatrixError.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 2:
        return _solve_one(a, b)
    scale = np.abs(np.einsum("...ii->...", a)).real / a.shape[-1]
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("matrix is not positive definite") from exc
    piv = np.abs(np.diagonal(chol, axis1=-2, axis2=-1)) ** 2
    if np.any(piv < PIVOT_FLOOR * scale[..., None]):
        raise SingularMatrixError("Cholesky pivot below relative floor")
    vec = b.ndim == a.ndim - 1
    rhs = b[..., None] if vec else b
    w = np.linalg.solve(chol, rhs)
    x = np.linalg.solve(np.conj(np.swapaxes(chol, -1, -2)), w)
    return x[..., 0] if vec else x


def _solve_one(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    scale = abs(np.trace(a).real) / a.shape[0]
    try:
        c, lower = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("matrix is not positive definite") from exc
    if np.any(np.abs(np.diag(c)) ** 2 < PIVOT_FLOOR * scale):
        raise SingularMatrixError("Cholesky pivot below relative floor")
    return scipy.linalg.cho_solve((c, lower), b, check_finite=False)


def hermitian_logdet(a: np.ndarray) -> np.ndarray:
    """log det of Hermitian PD matrices (batched)."""
    chol = np.linalg.cholesky(a)
    return 2.0 * np.sum(np.log(np.abs(np.diagonal(chol, axis1=-2, axis2=-1))), axis=-1)


def sample_circular_gaussian(
    rng: np.random.Generator, n: int | Iterable[int], variance: float | np.ndarray = 1.0
) -> np.ndarray:
    """Draw circularly-symmetric complex Gaussian samples with E|z|^2 = variance."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    shape = (n,) if np.isscalar(n) else tuple(n)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z * np.sqrt(variance / 2.0)
