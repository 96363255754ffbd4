"""Adam on the compressed subspace, and moving its state between subspaces."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Union

import numpy as np
import pandas as pd

from .consts import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from .errors import ContractViolation, InvalidConfig, NumericAbort
from .numerics import Matrix, load_matrix, save_matrix
from .projector import ProjectorPair

ReprojectionMode = Literal["entrywise", "matrix"]


@dataclass(frozen=True, eq=False)
class SubspaceOptState:
    """Adam moments for one weight matrix.

    Shape-generic: ``d × d`` on the subspace, or the full weight shape for the baselines.
    ``lr`` is the learning rate the caller applies when decompressing ``delta``; it is kept
    here so checkpoints record it.
    """

    M: Matrix
    V: Matrix
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    lr: float = 1e-3

    def __post_init__(self) -> None:
        if self.M.shape != self.V.shape:
            raise ContractViolation(f"M {self.M.shape} and V {self.V.shape} differ in shape")
        if not 0.0 < self.beta1 < 1.0:
            raise InvalidConfig("beta1", "must be in (0, 1)")
        if not 0.0 < self.beta2 < 1.0:
            raise InvalidConfig("beta2", "must be in (0, 1)")
        if self.eps <= 0:
            raise InvalidConfig("eps", "must be > 0")
        if self.lr <= 0:
            raise InvalidConfig("lr", "must be > 0")

    @classmethod
    def zeros(
        cls,
        shape: Union[int, tuple[int, int]],
        *,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
        lr: float = 1e-3,
    ) -> SubspaceOptState:
        """Fresh state. An int ``shape`` means a square ``shape × shape`` subspace."""
        dims = (shape, shape) if isinstance(shape, int) else shape
        return cls(np.zeros(dims), np.zeros(dims), 0, beta1, beta2, eps, lr)

    def with_lr(self, lr: float) -> SubspaceOptState:
        return dataclasses.replace(self, lr=lr)


def adam_step(state: SubspaceOptState, grad: Matrix) -> tuple[SubspaceOptState, Matrix]:
    """One Adam step. Returns the new state and the unscaled direction ``M̂ / (sqrt(V̂) + eps)``.

    The learning rate is not applied here.
    """
    if grad.shape != state.M.shape:
        raise ContractViolation(f"gradient {grad.shape} doesn't match state {state.M.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericAbort(f"non-finite gradient entering Adam at step {state.step}")

    step = state.step + 1
    M = state.beta1 * state.M + (1.0 - state.beta1) * grad
    V = state.beta2 * state.V + (1.0 - state.beta2) * (grad * grad)
    m_hat = M / (1.0 - state.beta1**step)
    v_hat = V / (1.0 - state.beta2**step)
    delta = m_hat / (np.sqrt(v_hat) + state.eps)
    return dataclasses.replace(state, M=M, V=V, step=step), delta


def transfer_matrices(old: ProjectorPair, new: ProjectorPair) -> tuple[Matrix, Matrix]:
    """``(P_newᵀ P_old, Q_oldᵀ Q_new)``, both ``d × d``."""
    if old.d != new.d:
        raise ContractViolation(f"subspace widths differ: {old.d} vs {new.d}")
    if old.shape != new.shape:
        raise ContractViolation(f"pairs compress different shapes: {old.shape} vs {new.shape}")
    t_p = (new.P.csr.T @ old.P.csr).toarray()
    t_q = (old.Q.csr.T @ new.Q.csr).toarray()
    return t_p, t_q


def reproject_state(
    state: SubspaceOptState,
    old: ProjectorPair,
    new: ProjectorPair,
    mode: ReprojectionMode = "entrywise",
) -> SubspaceOptState:
    """Map the moments from the subspace of ``old`` into that of ``new``.

    ``M`` goes through the transfer matrices directly. ``V`` goes through their entrywise
    squares (``mode="entrywise"``) or their matrix squares (``mode="matrix"``) and is clamped
    at zero. ``step`` is kept.
    """
    if state.M.shape != (old.d, old.d):
        raise ContractViolation(f"state {state.M.shape} doesn't match subspace width {old.d}")
    t_p, t_q = transfer_matrices(old, new)
    M = t_p @ state.M @ t_q
    if mode == "entrywise":
        V = (t_p * t_p) @ state.V @ (t_q * t_q)
    elif mode == "matrix":
        V = (t_p @ t_p) @ state.V @ (t_q @ t_q)
    else:
        raise ContractViolation(f"unknown reprojection mode {mode!r}")
    return dataclasses.replace(state, M=M, V=np.maximum(V, 0.0))


def save_state(directory: Union[str, Path], state: SubspaceOptState) -> None:
    """Checkpoint as ``header.csv`` (step, betas, eps, lr) plus ``M.csv`` and ``V.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = pd.DataFrame(
        [
            {
                "step": state.step,
                "beta1": state.beta1,
                "beta2": state.beta2,
                "eps": state.eps,
                "lr": state.lr,
            }
        ]
    )
    header.to_csv(directory / "header.csv", index=False)
    save_matrix(directory / "M.csv", state.M)
    save_matrix(directory / "V.csv", state.V)


def load_state(directory: Union[str, Path]) -> SubspaceOptState:
    directory = Path(directory)
    header = pd.read_csv(directory / "header.csv", float_precision="round_trip").iloc[0]
    return SubspaceOptState(
        M=load_matrix(directory / "M.csv"),
        V=load_matrix(directory / "V.csv"),
        step=int(header["step"]),
        beta1=float(header["beta1"]),
        beta2=float(header["beta2"]),
        eps=float(header["eps"]),
        lr=float(header["lr"]),
    )
