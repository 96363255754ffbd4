"""Fine-tuning in learned sparse subspaces, with periodic bias checks and projector refits."""

from __future__ import annotations

import dataclasses
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd

from .consts import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    DIVERGENCE_LOSS,
    STREAM_BATCHES,
    STREAM_CHECKS,
    STREAM_CHERNOFF,
)
from .errors import ContractViolation, InvalidConfig, MissingLog, NumericAbort
from .numerics import Matrix, frobenius_norm, spectral_norm
from .projector import (
    FitConfig,
    ProjectorPair,
    compress,
    decompress,
    estimation_bias,
    fit,
    identity_pair,
    init_pair,
    relative_bias,
)
from .seeding import derive_rng
from .subspace_opt import ReprojectionMode, SubspaceOptState, adam_step, reproject_state
from .toy_models import (
    DenseNet,
    ForwardCache,
    TaskData,
    backward,
    evaluate,
    forward,
    per_sample_grad_norms,
    sample_batch,
    weighted_backward,
)
from .utils.loop import StepLoop
from .utils.meta import get_lsp_logger

log = get_lsp_logger(__name__)

LRSchedule = Literal["constant", "cosine"]
ProjectorInit = Literal["random", "identity"]


@dataclass(frozen=True)
class TrainConfig:
    """Settings shared by the subspace trainer and the baselines.

    ``gamma_bound`` of ``None`` means a running max of the per-sample gradient spectral norms
    seen at checks. ``rank`` is only read by the LoRA and GaLore baselines.
    """

    d: int = 32
    r: int = 4
    lr: float = 1e-3
    check_freq: int = 100
    alpha: float = 0.5
    chernoff_beta: float = 0.5
    delta: float = 0.1
    gamma_bound: Optional[float] = None
    total_steps: int = 2000
    fit: FitConfig = field(default_factory=FitConfig)
    seed: int = 0
    batch_size: int = 32
    eval_every: int = 50
    lr_schedule: LRSchedule = "constant"
    projector_init: ProjectorInit = "random"
    fit_projectors: bool = True
    reprojection: ReprojectionMode = "entrywise"
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    calibration_size: int = 8
    rank: int = 8
    record_wall_clock: bool = False

    def __post_init__(self) -> None:
        if self.r < 1 or self.d < self.r:
            raise InvalidConfig("d", f"need d >= r >= 1, got d={self.d} r={self.r}")
        if self.lr <= 0:
            raise InvalidConfig("lr", "must be > 0")
        if self.check_freq < 1:
            raise InvalidConfig("check_freq", "must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidConfig("alpha", "must be in (0, 1]")
        if self.chernoff_beta <= 0:
            raise InvalidConfig("chernoff_beta", "must be > 0")
        if not 0.0 < self.delta < 1.0:
            raise InvalidConfig("delta", "must be in (0, 1)")
        if self.gamma_bound is not None and self.gamma_bound <= 0:
            raise InvalidConfig("gamma_bound", "must be > 0 when given")
        if self.total_steps < 0:
            raise InvalidConfig("total_steps", "must be >= 0")
        if self.seed < 0:
            raise InvalidConfig("seed", "must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size", "must be >= 1")
        if self.eval_every < 0:
            raise InvalidConfig("eval_every", "must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise InvalidConfig("lr_schedule", "must be 'constant' or 'cosine'")
        if self.projector_init not in ("random", "identity"):
            raise InvalidConfig("projector_init", "must be 'random' or 'identity'")
        if self.reprojection not in ("entrywise", "matrix"):
            raise InvalidConfig("reprojection", "must be 'entrywise' or 'matrix'")
        if self.calibration_size < 1:
            raise InvalidConfig("calibration_size", "must be >= 1")
        if self.rank < 1:
            raise InvalidConfig("rank", "must be >= 1")

    def lr_at(self, step: int) -> float:
        """Learning rate for (0-indexed) ``step``."""
        if self.lr_schedule == "constant" or self.total_steps == 0:
            return self.lr
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * step / self.total_steps))

    def is_eval_step(self, step: int) -> bool:
        if self.eval_every == 0:
            return step == self.total_steps - 1
        return step % self.eval_every == 0 or step == self.total_steps - 1


@dataclass
class Period:
    """One projector lifetime: the pair, the step it was adopted at and the summed update."""

    pair: ProjectorPair
    start_step: int
    S: Matrix


class CheckRecord(NamedTuple):
    step: int
    layer: int
    relative_bias: float
    refreshed: bool
    timed_out: bool
    fitted_bias: float
    subsample_size: int
    gamma: float


@dataclass
class TrainHistory:
    """Everything recorded while training. One row per step."""

    method: str = "lsp"
    steps: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    eval_loss: list[float] = field(default_factory=list)
    bias: list[float] = field(default_factory=list)
    refreshed: list[bool] = field(default_factory=list)
    ms_per_step: list[float] = field(default_factory=list)
    checks: list[CheckRecord] = field(default_factory=list)
    periods: list[list[Period]] = field(default_factory=list)
    initial_weights: list[Matrix] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def __repr__(self) -> str:
        return (
            f"<TrainHistory method={self.method} steps={len(self)} checks={len(self.checks)} "
            f"refreshes={len(self.refresh_steps)}>"
        )

    @property
    def refresh_steps(self) -> list[int]:
        return sorted({c.step for c in self.checks if c.refreshed})

    @property
    def final_train_loss(self) -> float:
        return self.train_loss[-1] if self.train_loss else float("nan")

    @property
    def final_eval_loss(self) -> float:
        evals = [x for x in self.eval_loss if not math.isnan(x)]
        return evals[-1] if evals else float("nan")

    def append(
        self,
        step: int,
        train_loss: float,
        eval_loss: float = float("nan"),
        bias: float = float("nan"),
        refreshed: bool = False,
        ms: float = 0.0,
    ) -> None:
        self.steps.append(step)
        self.train_loss.append(train_loss)
        self.eval_loss.append(eval_loss)
        self.bias.append(bias)
        self.refreshed.append(refreshed)
        self.ms_per_step.append(ms)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": self.steps,
                "train_loss": self.train_loss,
                "eval_loss": self.eval_loss,
                "bias": self.bias,
                "refreshed": [int(x) for x in self.refreshed],
                "ms_per_step": self.ms_per_step,
            }
        )

    def checks_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.checks, columns=list(CheckRecord._fields))

    def save_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)

    def effective_update(self, layer: int) -> Matrix:
        if layer >= len(self.periods):
            raise MissingLog(f"no subspace update log for layer {layer}")
        return effective_update(self.periods[layer])


# sizing


def subsample_size(
    gamma_bound: float,
    chernoff_beta: float,
    m: int,
    n: int,
    total_steps: int,
    delta: float,
) -> int:
    """Size of the check subsample: ``ceil(8γ²/(3β²) · ln((m+n)T/δ))``."""
    if gamma_bound <= 0 or chernoff_beta <= 0:
        raise ContractViolation("gamma_bound and chernoff_beta must be positive")
    if m < 1 or n < 1 or total_steps < 1:
        raise ContractViolation("m, n and total_steps must be positive")
    if not 0.0 < delta < 1.0:
        raise ContractViolation("delta must be in (0, 1)")
    factor = 8.0 * gamma_bound**2 / (3.0 * chernoff_beta**2)
    return int(math.ceil(factor * math.log((m + n) * total_steps / delta)))


# MaybeUpdate


class MaybeUpdateResult(NamedTuple):
    pair: ProjectorPair
    state: SubspaceOptState
    refreshed: bool
    relative_bias: float
    fitted_bias: float = float("nan")
    timed_out: bool = False


def maybe_update(
    grad_sub: Matrix,
    pair: ProjectorPair,
    state: SubspaceOptState,
    cfg: TrainConfig,
    *,
    step: int = 0,
    layer: int = 0,
    calibration: Sequence[Matrix] = (),
) -> MaybeUpdateResult:
    """Keep ``pair`` if its relative bias on ``grad_sub`` is within ``cfg.alpha``, else refit.

    A refit draws a new random pair, fits it on ``grad_sub`` plus the ``calibration``
    gradients and moves the Adam moments into the new subspace. A fit that ends without
    reaching ``alpha`` is still adopted and reported as ``timed_out``.
    """
    if frobenius_norm(grad_sub) == 0.0:
        log.verbose("Layer %d step %d: zero check gradient, skipping refresh", layer, step)
        return MaybeUpdateResult(pair, state, False, float("nan"))

    bias = relative_bias(pair, grad_sub)
    if bias <= cfg.alpha:
        log.verbose("Layer %d step %d: bias %.4f within %.4f", layer, step, bias, cfg.alpha)
        return MaybeUpdateResult(pair, state, False, bias)

    m, n = pair.shape
    fresh = init_pair(m, n, cfg.d, cfg.r, [cfg.seed, layer, step + 1], birth_step=step)
    fit_cfg = dataclasses.replace(cfg.fit, alpha=cfg.alpha)
    fitted, report = fit(fresh, [grad_sub, *calibration], fit_cfg)
    timed_out = not report.success
    if timed_out:
        log.warning(
            "Layer %d step %d: projector fit stopped at bias %.4f after %d steps (target %.4f)",
            layer,
            step,
            report.final_relative_bias,
            report.steps,
            cfg.alpha,
        )
    else:
        log.verbose(
            "Layer %d step %d: refit bias %.4f -> %.4f in %d steps",
            layer,
            step,
            bias,
            report.final_relative_bias,
            report.steps,
        )
    new_state = reproject_state(state, pair, fitted, cfg.reprojection)
    return MaybeUpdateResult(
        fitted, new_state, True, bias, relative_bias(fitted, grad_sub), timed_out
    )


# bookkeeping


def effective_update(periods: Sequence[Period]) -> Matrix:
    """Accumulated weight change ``Σ P_k S_k Q_kᵀ`` over the logged periods."""
    if not periods:
        raise MissingLog("no projector periods were logged")
    total = np.zeros(periods[0].pair.shape)
    for period in periods:
        if period.S is None:
            raise MissingLog(f"period starting at step {period.start_step} has no update log")
        total += decompress(period.pair, period.S)
    return total


# training


def _initial_pairs(net: DenseNet, cfg: TrainConfig) -> list[ProjectorPair]:
    pairs = []
    for i, (m, n) in enumerate(net.shapes):
        if cfg.projector_init == "identity":
            if not cfg.d == m == n:
                raise ContractViolation(
                    f"identity projectors need d == m == n, layer {i} is {m}x{n} with d={cfg.d}"
                )
            pairs.append(identity_pair(m))
        else:
            pairs.append(init_pair(m, n, cfg.d, cfg.r, [cfg.seed, i, 0]))
    return pairs


def _check_divergence(loss: float, step: int, history: TrainHistory) -> None:
    if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
        log.error("Training diverged at step %d (loss %s)", step, loss)
        raise NumericAbort(f"training diverged at step {step}: loss {loss}", history)


StepFn = Callable[[int, List[Matrix], ForwardCache], Tuple[float, bool]]


def run_training(
    net: DenseNet, data: TaskData, cfg: TrainConfig, history: TrainHistory, step_fn: StepFn
) -> TrainHistory:
    """The loop shared by every method: batch, forward, backward, ``step_fn``, eval, record.

    ``step_fn(step, grads, cache)`` applies the method's update and returns the bias recorded
    for the step (NaN when there was no check) and whether any projector was refreshed.
    """
    if cfg.total_steps == 0:
        return history

    batch_rng = derive_rng(cfg.seed, STREAM_BATCHES)
    loop = StepLoop(f"train_{history.method}")
    try:
        for t in range(cfg.total_steps):
            loop.iter_start()
            batch = sample_batch(data.train, cfg.batch_size, batch_rng)
            loss, cache = forward(net, batch)
            if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
                history.append(t, loss)
            _check_divergence(loss, t, history)

            bias, refreshed = step_fn(t, backward(net, cache), cache)

            eval_loss = evaluate(net, data.eval) if cfg.is_eval_step(t) else float("nan")
            loop.iter_finish()
            ms = loop.last_ms if cfg.record_wall_clock else 0.0
            history.append(t, loss, eval_loss, bias, refreshed, ms)
            log.trace("step %d loss=%.6g eval=%.6g", t, loss, eval_loss)
    except NumericAbort as e:
        loop.iter_error(e)
        log.debug("Step loop state:\n%s", loop.debug_table())
        if e.history is None:
            raise NumericAbort(str(e), history) from e
        raise

    log.info(
        "%s training done: %d steps, final loss %.6g, final eval loss %.6g",
        history.method,
        len(history),
        history.final_train_loss,
        history.final_eval_loss,
    )
    return history


class _SubspaceStepper:
    """Per-step state of the subspace trainer: pairs, Adam moments, check buffers."""

    def __init__(
        self,
        net: DenseNet,
        data: TaskData,
        cfg: TrainConfig,
        history: TrainHistory,
        executor: Optional[ThreadPoolExecutor],
    ) -> None:
        self.net = net
        self.data = data
        self.cfg = cfg
        self.history = history
        self.executor = executor

        self.pairs = _initial_pairs(net, cfg)
        self.states = [
            SubspaceOptState.zeros(
                cfg.d, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, lr=cfg.lr
            )
            for _ in self.pairs
        ]
        self.calibration: list[deque[Matrix]] = [
            deque(maxlen=cfg.calibration_size) for _ in self.pairs
        ]
        self.gamma = cfg.gamma_bound or 0.0
        self.check_index = 0
        self.cap_warned = False
        history.periods = [[Period(p, 0, np.zeros((cfg.d, cfg.d)))] for p in self.pairs]

    def __call__(self, t: int, grads: List[Matrix], cache: ForwardCache) -> Tuple[float, bool]:
        cfg = self.cfg
        is_check = cfg.fit_projectors and t % cfg.check_freq == 0
        if is_check and cfg.gamma_bound is None:
            # the cache goes stale once weights move, so read it first
            self.gamma = max(self.gamma, float(per_sample_grad_norms(self.net, cache).max()))

        eta = cfg.lr_at(t)
        for i, grad in enumerate(grads):
            state, delta = adam_step(self.states[i].with_lr(eta), compress(self.pairs[i], grad))
            self.states[i] = state
            self.net.apply_update(i, -eta * decompress(self.pairs[i], delta))
            self.history.periods[i][-1].S += -eta * delta

        if not is_check:
            return float("nan"), False
        return self._check(t)

    def _subsample_size(self) -> int:
        train_size = self.data.train.size
        if self.gamma <= 0.0:
            return train_size
        m, n = max(self.net.shapes, key=sum)
        cfg = self.cfg
        size = subsample_size(
            self.gamma, cfg.chernoff_beta, m, n, max(cfg.total_steps, 1), cfg.delta
        )
        if size > train_size and not self.cap_warned:
            log.warning(
                "Subsample bound %d exceeds the %d training samples; checks use the full set",
                size,
                train_size,
            )
            self.cap_warned = True
        return min(size, train_size)

    def _check(self, t: int) -> Tuple[float, bool]:
        size = self._subsample_size()
        rng = derive_rng(self.cfg.seed, STREAM_CHECKS, self.check_index)
        self.check_index += 1
        _, cache = forward(self.net, sample_batch(self.data.train, size, rng))
        check_grads = backward(self.net, cache)
        if self.cfg.gamma_bound is None:
            self.gamma = max(self.gamma, float(per_sample_grad_norms(self.net, cache).max()))
        for buffer, g in zip(self.calibration, check_grads):
            buffer.append(g)

        def run(i: int) -> MaybeUpdateResult:
            previous = list(self.calibration[i])[:-1]
            return maybe_update(
                check_grads[i],
                self.pairs[i],
                self.states[i],
                self.cfg,
                step=t,
                layer=i,
                calibration=previous,
            )

        layers = range(len(self.pairs))
        results = list(self.executor.map(run, layers) if self.executor else map(run, layers))

        any_refresh = False
        for i, res in enumerate(results):
            self.history.checks.append(
                CheckRecord(
                    t,
                    i,
                    res.relative_bias,
                    res.refreshed,
                    res.timed_out,
                    res.fitted_bias,
                    size,
                    self.gamma,
                )
            )
            self.states[i] = res.state
            if res.refreshed:
                any_refresh = True
                self.pairs[i] = res.pair
                self.history.periods[i].append(
                    Period(res.pair, t, np.zeros((self.cfg.d, self.cfg.d)))
                )
        return float(np.mean([r.relative_bias for r in results])), any_refresh


def train_lsp(
    net: DenseNet, data: TaskData, cfg: TrainConfig, *, threads: int = 1
) -> TrainHistory:
    """Train ``net`` in place with one learned sparse projector pair per layer.

    Each step: forward/backward on a batch, then per layer compress the gradient, take an
    Adam step in the ``d × d`` subspace and apply ``-η P Δ Qᵀ``. Every ``check_freq`` steps
    the gradient on a fresh subsample decides per layer whether to refit the pair.

    Parameters
    ----------
    net : DenseNet
        Trained in place
    data : TaskData
        Train and eval sets
    cfg : TrainConfig
        Settings
    threads : int
        Worker threads for per-layer refits. Results don't depend on it.

    Raises
    ------
    NumericAbort
        On a non-finite or diverging loss, carrying the history so far
    """
    history = TrainHistory(method="lsp", initial_weights=[w.copy() for w in net.weights])
    executor = ThreadPoolExecutor(threads, "lspkit_refit") if threads > 1 else None
    try:
        stepper = _SubspaceStepper(net, data, cfg, history, executor)
        run_training(net, data, cfg, history, stepper)
    finally:
        if executor is not None:
            executor.shutdown()
    log.info("%d projector refresh step(s)", len(history.refresh_steps))
    return history


# checks on the subsample bound


class ChernoffTrial(NamedTuple):
    size: int
    gamma: float
    deviations: npt.NDArray[np.float64]


def chernoff_trial(
    net: DenseNet,
    data: TaskData,
    pairs: Sequence[ProjectorPair],
    cfg: TrainConfig,
    trial: int,
) -> ChernoffTrial:
    """One Monte-Carlo draw of ``‖b(∇f_S) − b(∇f)‖₂`` per layer for a subsample ``S``.

    ``S`` is drawn uniformly with replacement from the training set at exactly the size
    given by ``subsample_size``, with γ the largest per-sample gradient spectral norm over
    the training set (unless ``cfg.gamma_bound`` is set). The draw is never capped at the
    training set size, so ``S`` is a fresh i.i.d. sample whatever the bound.
    """
    _, full_cache = forward(net, data.train)
    full_grads = backward(net, full_cache)
    gamma = cfg.gamma_bound or float(per_sample_grad_norms(net, full_cache).max())
    if gamma <= 0.0:
        raise ContractViolation("per-sample gradients are all zero; no bound to check")
    m, n = max(net.shapes, key=sum)
    size = subsample_size(gamma, cfg.chernoff_beta, m, n, max(cfg.total_steps, 1), cfg.delta)
    train_size = data.train.size
    rng = derive_rng(cfg.seed, STREAM_CHERNOFF, trial)
    counts = rng.multinomial(size, np.full(train_size, 1.0 / train_size))
    sub_grads = weighted_backward(net, full_cache, counts / size)
    deviations = np.array(
        [
            spectral_norm(estimation_bias(p, gs) - estimation_bias(p, gf)).value
            for p, gs, gf in zip(pairs, sub_grads, full_grads)
        ]
    )
    return ChernoffTrial(size, gamma, deviations)
