"""Dense linear algebra helpers: products, norms and a small one-sided Jacobi SVD."""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd

from .consts import POWER_ITER_MAX, POWER_ITER_TOL, SVD_MAX_MIN_DIM, SVD_MAX_SWEEPS, SVD_TOL
from .errors import ContractViolation, NumericAbort, UnsupportedSize

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]
PathLike = Union[str, Path]


class SpectralNorm(NamedTuple):
    value: float
    iterations: int
    converged: bool


class ThinSVD(NamedTuple):
    U: Matrix
    s: Vector
    V: Matrix


def as_matrix(a: npt.ArrayLike, name: str = "matrix") -> Matrix:
    """Coerce to a 2-D float64 array, rejecting other ranks and non-finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericAbort(f"{name} has non-finite entries")
    return arr


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def frobenius_norm(a: Matrix) -> float:
    return float(np.sqrt(np.sum(np.square(a))))


def spectral_norm(
    a: Matrix, tol: float = POWER_ITER_TOL, max_iter: int = POWER_ITER_MAX
) -> SpectralNorm:
    """Largest singular value by power iteration on ``aᵀa``.

    Parameters
    ----------
    a : Matrix
        Any 2-D matrix
    tol : float
        Relative tolerance on the eigenvalue estimate of ``aᵀa``
    max_iter : int
        Iteration cap

    Returns
    -------
    SpectralNorm
        The value, how many iterations ran and whether ``tol`` was reached
    """
    if tol <= 0:
        raise ContractViolation("tol must be positive")
    if a.size == 0 or not np.any(a):
        return SpectralNorm(0.0, 0, True)

    # fixed start vector so the result is a pure function of ``a``
    x = np.random.default_rng(0).standard_normal(a.shape[1])
    x /= np.linalg.norm(x)
    lam = 0.0
    for i in range(1, max_iter + 1):
        y = a.T @ (a @ x)
        new_lam = float(x @ y)
        norm = float(np.linalg.norm(y))
        if norm == 0.0:  # start vector in the null space
            return SpectralNorm(0.0, i, True)
        x = y / norm
        if abs(new_lam - lam) <= tol * abs(new_lam):
            return SpectralNorm(float(np.sqrt(max(new_lam, 0.0))), i, True)
        lam = new_lam
    return SpectralNorm(float(np.sqrt(max(lam, 0.0))), max_iter, False)


def svd_thin(a: Matrix) -> ThinSVD:
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Returns ``U`` (m×k), ``s`` (k,) non-increasing and ``V`` (n×k) with k = min(m, n) so that
    ``U @ diag(s) @ V.T`` reconstructs ``a``.
    """
    rows, cols = a.shape
    if min(rows, cols) > SVD_MAX_MIN_DIM:
        raise UnsupportedSize(
            f"svd_thin supports min(rows, cols) <= {SVD_MAX_MIN_DIM}, got {a.shape}"
        )
    if rows < cols:
        left, s, right = svd_thin(a.T)
        return ThinSVD(right, s, left)

    work = np.array(a, dtype=np.float64, copy=True)
    right = np.eye(cols)
    for _ in range(SVD_MAX_SWEEPS):
        rotated = False
        for i in range(cols - 1):
            for j in range(i + 1, cols):
                alpha = float(work[:, i] @ work[:, i])
                beta = float(work[:, j] @ work[:, j])
                gamma = float(work[:, i] @ work[:, j])
                if abs(gamma) <= SVD_TOL * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t

                col_i = work[:, i].copy()
                work[:, i] = c * col_i - s * work[:, j]
                work[:, j] = s * col_i + c * work[:, j]

                col_i = right[:, i].copy()
                right[:, i] = c * col_i - s * right[:, j]
                right[:, j] = s * col_i + c * right[:, j]
        if not rotated:
            break

    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    right = right[:, order]

    cutoff = SVD_TOL * max(rows, cols) * (sigma[0] if sigma.size else 0.0)
    good = int(np.count_nonzero(sigma > cutoff))
    left = np.zeros((rows, cols))
    left[:, :good] = work[:, :good] / sigma[:good]
    if good < cols:
        # zero singular values: complete U to an orthonormal set
        q, _ = np.linalg.qr(np.hstack([left[:, :good], np.eye(rows)]))
        left[:, good:] = q[:, good:cols]
        sigma[good:] = 0.0
    return ThinSVD(left, sigma, right)


def numerical_rank(a: Matrix, rtol: float = 1e-10) -> int:
    """Count singular values above ``rtol`` times the largest."""
    s = svd_thin(a).s
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def save_matrix(path: PathLike, a: Matrix) -> None:
    """Write a matrix as CSV, one row per line, shortest round-trip float repr."""
    pd.DataFrame(a).to_csv(path, header=False, index=False)


def load_matrix(path: PathLike) -> Matrix:
    df = pd.read_csv(path, header=None, float_precision="round_trip")
    return df.to_numpy(dtype=np.float64)
