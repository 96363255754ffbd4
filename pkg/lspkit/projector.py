"""(d,r)-sparse projectors: construction, compression, estimation bias and fitting."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal, NamedTuple, Sequence, Union

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.sparse as sp

from .consts import MAX_HALVINGS, STREAM_PROJECTOR_P, STREAM_PROJECTOR_Q
from .errors import ContractViolation, DegenerateInput, InvalidConfig, NumericAbort
from .numerics import Matrix, as_matrix, frobenius_norm
from .seeding import SeedLike, derive_rng
from .utils.meta import get_lsp_logger

log = get_lsp_logger(__name__)

Regularizer = Literal["squared", "mixed"]


@dataclass(frozen=True, eq=False)
class SparseProjector:
    """An ``n_rows × d`` matrix with exactly ``r`` stored entries per row.

    ``positions`` and ``values`` both have shape ``(n_rows, r)``; positions within a row are
    distinct and ascending.
    """

    positions: npt.NDArray[np.int64]
    values: Matrix
    d: int

    def __post_init__(self) -> None:
        positions = np.array(self.positions, dtype=np.int64, copy=True)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if positions.ndim != 2 or positions.shape != values.shape:
            raise ContractViolation(
                f"positions {positions.shape} and values {values.shape} must be equal 2-D shapes"
            )
        r = positions.shape[1]
        if not self.d >= r >= 1:
            raise ContractViolation(f"need d >= r >= 1, got d={self.d} r={r}")
        if positions.size and (positions.min() < 0 or positions.max() >= self.d):
            raise ContractViolation("positions must lie in [0, d)")
        if r > 1 and np.any(np.diff(positions, axis=1) <= 0):
            raise ContractViolation("positions must be distinct and ascending within each row")
        if not np.all(np.isfinite(values)):
            raise NumericAbort("projector values must be finite")
        positions.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "values", values)

    def __repr__(self) -> str:
        return f"<SparseProjector n_rows={self.n_rows} d={self.d} r={self.r}>"

    @property
    def n_rows(self) -> int:
        return self.positions.shape[0]

    @property
    def r(self) -> int:
        return self.positions.shape[1]

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """The projector as a scipy CSR matrix (explicit zeros kept)."""
        indptr = np.arange(0, self.n_rows * self.r + 1, self.r, dtype=np.int64)
        return sp.csr_matrix(
            (self.values.ravel(), self.positions.ravel(), indptr), shape=(self.n_rows, self.d)
        )

    def with_values(self, values: Matrix) -> SparseProjector:
        """Same sparsity pattern, new values."""
        return SparseProjector(self.positions, values, self.d)


@dataclass(frozen=True, eq=False)
class ProjectorPair:
    P: SparseProjector
    Q: SparseProjector
    birth_step: int = 0

    def __post_init__(self) -> None:
        if self.P.d != self.Q.d:
            raise ContractViolation(f"P.d ({self.P.d}) != Q.d ({self.Q.d})")

    @property
    def d(self) -> int:
        return self.P.d

    @property
    def shape(self) -> tuple[int, int]:
        """The ``(m, n)`` shape of the weight matrix this pair compresses."""
        return (self.P.n_rows, self.Q.n_rows)


@dataclass(frozen=True)
class FitConfig:
    """Settings for fitting a projector pair to a gradient corpus.

    ``max_steps`` caps accepted descent steps. ``timeout_steps`` is the step count after which
    an unfinished fit is reported as timed out. ``seed`` seeds the initial pair when the caller
    draws one. ``normalize_targets`` scales every target to unit norm before fitting.
    """

    alpha: float = 0.5
    reg_beta: float = 1e-5
    step_size: float = 1e-2
    max_steps: int = 500
    timeout_steps: int = 500
    seed: int = 0
    regularizer: Regularizer = "squared"
    normalize_targets: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidConfig("alpha", "must be in (0, 1]")
        if self.reg_beta < 0:
            raise InvalidConfig("reg_beta", "must be >= 0")
        if self.step_size <= 0:
            raise InvalidConfig("step_size", "must be > 0")
        if self.max_steps < 1:
            raise InvalidConfig("max_steps", "must be >= 1")
        if self.timeout_steps < 1:
            raise InvalidConfig("timeout_steps", "must be >= 1")
        if self.seed < 0:
            raise InvalidConfig("seed", "must be >= 0")
        if self.regularizer not in ("squared", "mixed"):
            raise InvalidConfig("regularizer", "must be 'squared' or 'mixed'")


@dataclass
class FitReport:
    losses: list[float] = field(default_factory=list)
    relative_biases: list[float] = field(default_factory=list)
    success: bool = False
    timed_out: bool = False
    stationary: bool = False

    @property
    def steps(self) -> int:
        return max(len(self.losses) - 1, 0)

    @property
    def final_relative_bias(self) -> float:
        return self.relative_biases[-1] if self.relative_biases else float("nan")

    def loss_curve_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": np.arange(len(self.losses)),
                "loss": self.losses,
                "relative_bias": self.relative_biases,
            }
        )


class FitLossGrad(NamedTuple):
    loss: float
    grad_p: Matrix
    grad_q: Matrix
    relative_biases: npt.NDArray[np.float64]


# construction


def init_sparse(n_rows: int, d: int, r: int, seed: SeedLike) -> SparseProjector:
    """Random (d,r)-sparse projector.

    Each row gets ``r`` positions drawn uniformly without replacement from ``[0, d)`` and
    Gaussian values with standard deviation ``1/sqrt(r)``.
    """
    if not 1 <= r <= d:
        raise ContractViolation(f"need 1 <= r <= d, got r={r} d={d}")
    if n_rows < 1:
        raise ContractViolation("n_rows must be >= 1")
    rng = derive_rng(seed)
    # argsort of iid uniforms is a uniform random permutation per row
    positions = np.sort(rng.random((n_rows, d)).argsort(axis=1)[:, :r], axis=1)
    values = rng.normal(0.0, 1.0 / np.sqrt(r), size=(n_rows, r))
    return SparseProjector(positions, values, d)


def init_pair(
    m: int, n: int, d: int, r: int, seed: SeedLike, birth_step: int = 0
) -> ProjectorPair:
    base = [seed] if isinstance(seed, (int, np.integer)) else list(seed)
    return ProjectorPair(
        init_sparse(m, d, r, [*base, STREAM_PROJECTOR_P]),
        init_sparse(n, d, r, [*base, STREAM_PROJECTOR_Q]),
        birth_step,
    )


def identity_pattern(n_rows: int) -> SparseProjector:
    """Row ``i`` stores a single 1 at column ``i``."""
    return SparseProjector(np.arange(n_rows)[:, None], np.ones((n_rows, 1)), n_rows)


def identity_pair(m: int, n: int | None = None, birth_step: int = 0) -> ProjectorPair:
    n = m if n is None else n
    if m != n:
        raise ContractViolation(f"identity pair needs a square weight, got {m}x{n}")
    return ProjectorPair(identity_pattern(m), identity_pattern(n), birth_step)


def to_dense(p: SparseProjector) -> Matrix:
    dense = np.zeros((p.n_rows, p.d))
    np.put_along_axis(dense, p.positions, p.values, axis=1)
    return dense


# compression


def _check_dims(pair: ProjectorPair, g: Matrix) -> None:
    if g.ndim != 2 or g.shape != pair.shape:
        raise ContractViolation(
            f"matrix shape {g.shape} doesn't match projector pair {pair.shape}"
        )


def compress(pair: ProjectorPair, g: Matrix) -> Matrix:
    """``Pᵀ g Q`` through the sparse kernels."""
    _check_dims(pair, g)
    left = pair.P.csr.T @ g  # d × n
    return np.asarray((pair.Q.csr.T @ left.T).T)


def decompress(pair: ProjectorPair, s: Matrix) -> Matrix:
    """``P s Qᵀ`` through the sparse kernels."""
    if s.shape != (pair.d, pair.d):
        raise ContractViolation(f"subspace matrix must be {pair.d}x{pair.d}, got {s.shape}")
    right = pair.Q.csr @ s.T  # n × d
    return np.asarray(pair.P.csr @ right.T)


def estimation_bias(pair: ProjectorPair, sigma: Matrix) -> Matrix:
    return decompress(pair, compress(pair, sigma)) - sigma


def relative_bias(pair: ProjectorPair, sigma: Matrix) -> float:
    norm = frobenius_norm(sigma)
    if norm == 0.0:
        raise DegenerateInput("relative bias is undefined for a zero matrix")
    return frobenius_norm(estimation_bias(pair, sigma)) / norm


# fitting


def _dense_from(positions: npt.NDArray[np.int64], values: Matrix, d: int) -> Matrix:
    dense = np.zeros((positions.shape[0], d))
    np.put_along_axis(dense, positions, values, axis=1)
    return dense


def _stack(pair: ProjectorPair, targets: Sequence[Matrix]) -> npt.NDArray[np.float64]:
    if len(targets) == 0:
        raise ContractViolation("fit needs at least one target")
    stack = np.stack([as_matrix(t, "target") for t in targets])
    if stack.shape[1:] != pair.shape:
        raise ContractViolation(f"targets of shape {stack.shape[1:]} don't match {pair.shape}")
    return stack


def _objective(
    pair: ProjectorPair,
    pv: Matrix,
    qv: Matrix,
    stack: npt.NDArray[np.float64],
    reg_beta: float,
    regularizer: Regularizer,
    want_grad: bool,
) -> FitLossGrad:
    d = pair.d
    P = _dense_from(pair.P.positions, pv, d)
    Q = _dense_from(pair.Q.positions, qv, d)
    k = stack.shape[0]

    PP = P @ P.T
    QQ = Q @ Q.T
    A = np.matmul(stack, QQ)  # G QQᵀ
    R = np.matmul(PP, A) - stack  # estimation bias per target
    sq = np.sum(R * R, axis=(1, 2))

    p_sq = float(np.sum(pv * pv))
    q_sq = float(np.sum(qv * qv))
    if regularizer == "squared":
        reg = reg_beta * (p_sq + q_sq)
    else:
        reg = reg_beta * (p_sq + np.sqrt(q_sq))
    loss = float(np.mean(sq)) + reg
    norms = np.sqrt(np.sum(stack * stack, axis=(1, 2)))
    biases = np.divide(np.sqrt(sq), norms, out=np.zeros_like(sq), where=norms > 0.0)

    if not want_grad:
        return FitLossGrad(loss, np.empty(0), np.empty(0), biases)

    S = np.tensordot(R, A, axes=([0, 2], [0, 2]))  # Σ R Aᵀ, m × m
    grad_P = (2.0 / k) * (S + S.T) @ P
    C = np.matmul(PP, stack)
    U = np.tensordot(R, C, axes=([0, 1], [0, 1]))  # Σ Rᵀ C, n × n
    grad_Q = (2.0 / k) * (U + U.T) @ Q

    grad_p = np.take_along_axis(grad_P, pair.P.positions, axis=1) + 2.0 * reg_beta * pv
    grad_q = np.take_along_axis(grad_Q, pair.Q.positions, axis=1)
    if regularizer == "squared":
        grad_q = grad_q + 2.0 * reg_beta * qv
    elif q_sq > 0.0:
        grad_q = grad_q + reg_beta * qv / np.sqrt(q_sq)
    return FitLossGrad(loss, grad_p, grad_q, biases)


def fit_loss_and_grad(
    pair: ProjectorPair,
    targets: Sequence[Matrix],
    reg_beta: float = 0.0,
    regularizer: Regularizer = "squared",
) -> FitLossGrad:
    """Fitting loss and its gradient with respect to the stored values of P and Q.

    The loss is the mean over targets of ``‖PPᵀ G QQᵀ − G‖_F²`` plus the regularizer.
    Targets are used as given. The reported biases are relative to each target's norm.
    """
    stack = _stack(pair, targets)
    return _objective(
        pair, pair.P.values, pair.Q.values, stack, reg_beta, regularizer, want_grad=True
    )


def fit(
    pair0: ProjectorPair, targets: Sequence[Matrix], cfg: FitConfig
) -> tuple[ProjectorPair, FitReport]:
    """Fit the stored values of a projector pair to a gradient corpus.

    Gradient descent with backtracking line search on the values only; positions stay frozen.
    The data term is the mean of ``‖PPᵀ G QQᵀ − G‖_F²`` over the raw targets. With
    ``cfg.normalize_targets`` each target is first scaled to unit Frobenius norm, which makes
    it the mean squared relative bias. Zero targets are dropped either way. Stops once the
    mean relative bias is at most ``cfg.alpha`` or the step limit runs out.

    Parameters
    ----------
    pair0 : ProjectorPair
        Starting pair, also fixes the sparsity pattern
    targets : Sequence[Matrix]
        Gradient corpus, all shaped like the weight matrix
    cfg : FitConfig
        Fit settings

    Returns
    -------
    tuple[ProjectorPair, FitReport]
        The fitted pair (same ``birth_step``) and the loss curve
    """
    stack = _stack(pair0, targets)
    norms = np.sqrt(np.sum(stack * stack, axis=(1, 2)))
    keep = norms > 0.0
    if not np.any(keep):
        raise DegenerateInput("every fitting target is zero")
    if not np.all(keep):
        log.warning("Dropping %d zero target(s) from the fitting corpus", int(np.sum(~keep)))
    stack = stack[keep]
    if cfg.normalize_targets:
        stack = stack / norms[keep][:, None, None]

    def evaluate(pv: Matrix, qv: Matrix, want_grad: bool) -> FitLossGrad:
        return _objective(pair0, pv, qv, stack, cfg.reg_beta, cfg.regularizer, want_grad)

    pv = np.array(pair0.P.values)
    qv = np.array(pair0.Q.values)
    current = evaluate(pv, qv, want_grad=True)
    if not np.isfinite(current.loss):
        raise NumericAbort(f"fitting loss is not finite at the initial pair ({current.loss})")

    report = FitReport([current.loss], [float(np.mean(current.relative_biases))])
    limit = min(cfg.max_steps, cfg.timeout_steps)
    trial = cfg.step_size
    while True:
        if report.relative_biases[-1] <= cfg.alpha:
            report.success = True
            break
        if report.steps >= limit:
            report.timed_out = report.steps >= cfg.timeout_steps
            break

        accepted = None
        for _ in range(MAX_HALVINGS):
            new_pv = pv - trial * current.grad_p
            new_qv = qv - trial * current.grad_q
            candidate = evaluate(new_pv, new_qv, want_grad=False)
            if np.isfinite(candidate.loss) and candidate.loss < current.loss:
                accepted = (new_pv, new_qv)
                break
            trial *= 0.5
        if accepted is None:
            report.stationary = True
            log.debug("Fit stationary after %d steps", report.steps)
            break

        pv, qv = accepted
        current = evaluate(pv, qv, want_grad=True)
        report.losses.append(current.loss)
        report.relative_biases.append(float(np.mean(current.relative_biases)))
        log.trace(
            "fit step %d loss=%.6g bias=%.4f step=%.3g",
            report.steps,
            current.loss,
            report.relative_biases[-1],
            trial,
        )
        trial *= 2.0

    fitted = ProjectorPair(pair0.P.with_values(pv), pair0.Q.with_values(qv), pair0.birth_step)
    return fitted, report


# serialization


def save_projector(path: Union[str, Path], p: SparseProjector) -> None:
    """Text format: header ``n_rows d r``, then per row its positions followed by its values."""
    lines = [f"{p.n_rows} {p.d} {p.r}"]
    for pos, val in zip(p.positions, p.values):
        lines.append(" ".join([*(str(int(i)) for i in pos), *(repr(float(v)) for v in val)]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_projector(path: Union[str, Path]) -> SparseProjector:
    lines = Path(path).read_text().split("\n")
    n_rows, d, r = (int(x) for x in lines[0].split())
    positions = np.zeros((n_rows, r), dtype=np.int64)
    values = np.zeros((n_rows, r))
    for i in range(n_rows):
        parts = lines[i + 1].split()
        if len(parts) != 2 * r:
            raise ContractViolation(f"{path}: row {i} has {len(parts)} fields, expected {2 * r}")
        positions[i] = [int(x) for x in parts[:r]]
        values[i] = [float(x) for x in parts[r:]]
    return SparseProjector(positions, values, d)
