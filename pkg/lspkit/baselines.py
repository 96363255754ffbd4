"""Reference methods to compare against: full Adam, LoRA, GaLore, and the memory model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .consts import STREAM_CORPUS, STREAM_LORA
from .errors import ContractViolation
from .numerics import Matrix, frobenius_norm, svd_thin
from .seeding import derive_rng
from .subspace_opt import SubspaceOptState, adam_step
from .toy_models import DenseNet, ForwardCache, TaskData, backward, forward, sample_batch
from .trainer import TrainConfig, TrainHistory, run_training
from .utils.meta import get_lsp_logger

log = get_lsp_logger(__name__)

BaselineKind = Literal["full", "lora", "galore"]
MemoryMethod = Literal["full", "lora", "galore", "lsp"]


class GaloreProjection(NamedTuple):
    P: Matrix
    compressed: Matrix


@dataclass(frozen=True)
class MemoryEstimate:
    """Stored scalars on the device for one ``m × n`` weight (not bytes)."""

    method: MemoryMethod
    weight_count: int
    projector_count: int
    opt_state_count: int

    @property
    def total(self) -> int:
        return self.weight_count + self.projector_count + self.opt_state_count

    @property
    def extra(self) -> int:
        """Scalars beyond the weight itself."""
        return self.total - self.weight_count


def galore_project(grad: Matrix, rank: int) -> GaloreProjection:
    """Top-``rank`` left singular vectors of ``grad`` and the projected gradient ``Pᵀ grad``."""
    m, n = grad.shape
    if not 1 <= rank <= min(m, n):
        raise ContractViolation(f"rank must be in [1, {min(m, n)}], got {rank}")
    P = svd_thin(grad).U[:, :rank]
    return GaloreProjection(P, P.T @ grad)


def galore_basis(corpus: Sequence[Matrix], rank: int) -> Matrix:
    """The best rank-``rank`` left subspace for a whole corpus (SVD of the side-by-side stack)."""
    if not corpus:
        raise ContractViolation("empty gradient corpus")
    return galore_project(np.hstack(list(corpus)), rank).P


def heldout_bias_galore(P: Matrix, grads: Sequence[Matrix]) -> float:
    """Mean relative bias ``‖PPᵀG − G‖/‖G‖`` of a fixed left basis over ``grads``."""
    biases = []
    for g in grads:
        norm = frobenius_norm(g)
        if norm > 0.0:
            biases.append(frobenius_norm(P @ (P.T @ g) - g) / norm)
    if not biases:
        raise ContractViolation("every held-out gradient is zero")
    return float(np.mean(biases))


def memory_estimate(
    method: MemoryMethod, m: int, n: int, r_or_d: int, opt_factor: int = 3
) -> MemoryEstimate:
    """Device memory for one weight under each method.

    full: ``(1+β)mn``. lora: ``mn + β(m+n)r``. galore: ``mn + (m+βn)r``. lsp: ``mn + (m+n)r``.
    ``β`` is ``opt_factor``, the optimizer's per-parameter footprint including the parameter.
    """
    if m < 1 or n < 1:
        raise ContractViolation("dims must be positive")
    if r_or_d < 0:
        raise ContractViolation("rank must be >= 0")
    if opt_factor < 1:
        raise ContractViolation("opt_factor must be >= 1")
    mn = m * n
    r = r_or_d
    if method == "full":
        return MemoryEstimate(method, mn, 0, opt_factor * mn)
    if method == "lora":
        return MemoryEstimate(method, mn, (m + n) * r, (opt_factor - 1) * (m + n) * r)
    if method == "galore":
        return MemoryEstimate(method, mn, m * r, opt_factor * n * r)
    if method == "lsp":
        return MemoryEstimate(method, mn, (m + n) * r, 0)
    raise ContractViolation(f"unknown method {method!r}")


def equal_memory_rank(m: int, n: int, r: int, opt_factor: int = 3) -> int:
    """GaLore rank whose extra scalars come closest to an LSP pair with ``r`` per row."""
    target = memory_estimate("lsp", m, n, r, opt_factor).extra
    per_rank = memory_estimate("galore", m, n, 1, opt_factor).extra
    return int(min(max(round(target / per_rank), 1), min(m, n)))


# training


def _check_rank(net: DenseNet, rank: int) -> None:
    for i, (m, n) in enumerate(net.shapes):
        if rank > min(m, n):
            raise ContractViolation(f"rank {rank} too large for layer {i} ({m}x{n})")


class _FullAdam:
    def __init__(self, net: DenseNet, cfg: TrainConfig) -> None:
        self.net = net
        self.cfg = cfg
        self.states = [
            SubspaceOptState.zeros(s, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, lr=cfg.lr)
            for s in net.shapes
        ]

    def __call__(self, t: int, grads: List[Matrix], cache: ForwardCache) -> Tuple[float, bool]:
        eta = self.cfg.lr_at(t)
        for i, grad in enumerate(grads):
            self.states[i], delta = adam_step(self.states[i].with_lr(eta), grad)
            self.net.apply_update(i, -eta * delta)
        return float("nan"), False


class _LoRA:
    """``W = W₀ + ABᵀ``, ``W₀`` frozen; Adam on ``A`` (Gaussian init) and ``B`` (zeros)."""

    def __init__(self, net: DenseNet, cfg: TrainConfig, rank: int) -> None:
        self.net = net
        self.cfg = cfg
        self.frozen = [w.copy() for w in net.weights]
        self.A: list[Matrix] = []
        self.B: list[Matrix] = []
        for i, (m, n) in enumerate(net.shapes):
            rng = derive_rng(cfg.seed, STREAM_LORA, i)
            self.A.append(rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, rank)))
            self.B.append(np.zeros((n, rank)))

        def zeros(shape: Tuple[int, int]) -> SubspaceOptState:
            return SubspaceOptState.zeros(
                shape, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, lr=cfg.lr
            )

        self.states_a = [zeros(a.shape) for a in self.A]  # type:ignore
        self.states_b = [zeros(b.shape) for b in self.B]  # type:ignore

    def __call__(self, t: int, grads: List[Matrix], cache: ForwardCache) -> Tuple[float, bool]:
        eta = self.cfg.lr_at(t)
        for i, grad in enumerate(grads):
            grad_a = grad @ self.B[i]
            grad_b = grad.T @ self.A[i]
            self.states_a[i], delta_a = adam_step(self.states_a[i].with_lr(eta), grad_a)
            self.states_b[i], delta_b = adam_step(self.states_b[i].with_lr(eta), grad_b)
            self.A[i] = self.A[i] - eta * delta_a
            self.B[i] = self.B[i] - eta * delta_b
            self.net.set_weight(i, self.frozen[i] + self.A[i] @ self.B[i].T)
        return float("nan"), False


class _GaLore:
    """Left-side SVD projection refreshed every ``check_freq`` steps.

    The Adam state lives in the ``rank × n`` space and is kept as is across refreshes.
    """

    def __init__(self, net: DenseNet, cfg: TrainConfig, rank: int) -> None:
        self.net = net
        self.cfg = cfg
        self.rank = rank
        self.P: list[Optional[Matrix]] = [None] * len(net.shapes)
        self.states = [
            SubspaceOptState.zeros(
                (rank, n), beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, lr=cfg.lr
            )
            for _, n in net.shapes
        ]

    def __call__(self, t: int, grads: List[Matrix], cache: ForwardCache) -> Tuple[float, bool]:
        eta = self.cfg.lr_at(t)
        refreshed = t % self.cfg.check_freq == 0
        for i, grad in enumerate(grads):
            if refreshed or self.P[i] is None:
                self.P[i], compressed = galore_project(grad, self.rank)
            else:
                compressed = self.P[i].T @ grad  # type:ignore
            P = self.P[i]
            assert P is not None
            self.states[i], delta = adam_step(self.states[i].with_lr(eta), compressed)
            self.net.apply_update(i, -eta * (P @ delta))
        if refreshed:
            log.verbose("GaLore projections refreshed at step %d", t)
        return float("nan"), refreshed


def train_baseline(
    kind: BaselineKind,
    net: DenseNet,
    data: TaskData,
    cfg: TrainConfig,
    *,
    rank: Optional[int] = None,
) -> TrainHistory:
    """Train ``net`` in place with one of the comparison methods.

    Uses the same batch stream, learning-rate schedule and eval cadence as ``train_lsp`` so
    histories line up step for step. ``rank`` defaults to ``cfg.rank``.
    """
    rank = cfg.rank if rank is None else rank
    history = TrainHistory(method=kind, initial_weights=[w.copy() for w in net.weights])
    if kind == "full":
        stepper = _FullAdam(net, cfg)
    elif kind == "lora":
        _check_rank(net, rank)
        stepper = _LoRA(net, cfg, rank)  # type:ignore
    elif kind == "galore":
        _check_rank(net, rank)
        stepper = _GaLore(net, cfg, rank)  # type:ignore
    else:
        raise ContractViolation(f"unknown baseline {kind!r}")
    return run_training(net, data, cfg, history, stepper)


def gradient_corpus(
    net: DenseNet, data: TaskData, cfg: TrainConfig, steps: int, every: int = 1
) -> list[list[Matrix]]:
    """Per-layer training gradients, recorded every ``every`` steps of a full-Adam run.

    ``net`` is trained in place. Batches come from their own stream, so the corpus does not
    depend on how any other run samples.
    """
    if steps < 1 or every < 1:
        raise ContractViolation("steps and every must be >= 1")
    stepper = _FullAdam(net, cfg)
    rng = derive_rng(cfg.seed, STREAM_CORPUS)
    corpus: list[list[Matrix]] = [[] for _ in net.layers]
    for t in range(steps):
        _, cache = forward(net, sample_batch(data.train, cfg.batch_size, rng))
        grads = backward(net, cache)
        if t % every == 0:
            for layer, grad in zip(corpus, grads):
                layer.append(grad)
        stepper(t, grads, cache)
    log.debug("Recorded %d gradient(s) per layer over %d steps", len(corpus[0]), steps)
    return corpus
