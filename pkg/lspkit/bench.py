"""Bias sweeps over projector sizes and side-by-side method comparisons."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .baselines import (
    equal_memory_rank,
    galore_basis,
    galore_project,
    gradient_corpus,
    heldout_bias_galore,
    memory_estimate,
    train_baseline,
)
from .config import BenchConfig, CompareConfig
from .errors import ContractViolation, DegenerateInput
from .numerics import Matrix, frobenius_norm
from .projector import (
    FitConfig,
    FitReport,
    ProjectorPair,
    fit,
    init_pair,
    relative_bias,
)
from .toy_models import (
    DenseNet,
    SyntheticTask,
    TaskData,
    backward,
    forward,
    make_student,
    make_task,
)
from .trainer import TrainConfig, TrainHistory, train_lsp
from .utils.meta import get_lsp_logger

log = get_lsp_logger(__name__)

BENCH_COLUMNS = [
    "method",
    "d",
    "r",
    "seed",
    "rank",
    "extra_memory",
    "train_bias",
    "heldout_bias",
]
COMPARE_COLUMNS = [
    "method",
    "extra_memory",
    "final_train_loss",
    "final_eval_loss",
    "heldout_bias",
]


def mean_relative_bias(pair: ProjectorPair, grads: Sequence[Matrix]) -> float:
    """Mean relative bias over the non-zero matrices in ``grads``."""
    biases = [relative_bias(pair, g) for g in grads if frobenius_norm(g) > 0.0]
    if not biases:
        raise DegenerateInput("every gradient in the corpus is zero")
    return float(np.mean(biases))


def split_corpus(grads: Sequence[Matrix]) -> tuple[list[Matrix], list[Matrix]]:
    """Alternate gradients go to the fitting set and the held-out set."""
    if len(grads) < 2:
        raise ContractViolation("a corpus needs at least two gradients to hold one out")
    return list(grads[0::2]), list(grads[1::2])


class LayerFit(NamedTuple):
    layer: int
    initial: ProjectorPair
    fitted: ProjectorPair
    report: FitReport


def fit_layer(
    grads: Sequence[Matrix], d: int, r: int, fit_cfg: FitConfig, seed: int, layer: int = 0
) -> LayerFit:
    """Fit one random ``(d, r)`` pair to ``grads``, whatever ``d`` is relative to the shape."""
    if not grads:
        raise ContractViolation(f"empty gradient corpus for layer {layer}")
    m, n = grads[0].shape
    initial = init_pair(m, n, d, r, [seed, layer, 0])
    fitted, report = fit(initial, grads, fit_cfg)
    return LayerFit(layer, initial, fitted, report)


def corpus_for(
    task: SyntheticTask, train: TrainConfig, steps: int, every: int
) -> list[list[Matrix]]:
    """Gradient corpus of a fresh student trained with full Adam on ``task``."""
    data = make_task(task)
    net = make_student(task)
    return gradient_corpus(net, data, train, steps, every)


def _layer_mean(
    bias: Callable[[Any, Sequence[Matrix]], float],
    projections: Sequence[Any],
    grads: Sequence[Sequence[Matrix]],
) -> float:
    return float(np.mean([bias(p, g) for p, g in zip(projections, grads)]))


def bias_bench(task: SyntheticTask, train: TrainConfig, bench: BenchConfig) -> pd.DataFrame:
    """Train and held-out bias for every ``(d, r, seed)``, fitted and at initialization.

    Each seed gets its own task, student and corpus. With ``bench.galore`` one GaLore row per
    ``(r, seed)`` uses the rank whose extra memory matches LSP at that ``r``; its ``d`` is
    empty.
    """
    rows = []
    for seed in bench.seeds:
        seeded_task = dataclasses.replace(task, seed=seed)
        seeded_train = dataclasses.replace(train, seed=seed)
        corpus = corpus_for(seeded_task, seeded_train, bench.corpus_steps, bench.corpus_every)
        splits = [split_corpus(grads) for grads in corpus]
        shapes = [grads[0].shape for grads in corpus]

        for r in bench.r_values:
            for d in bench.d_values:
                fits = [
                    fit_layer(fit_set, d, r, bench.fit, seed, i)
                    for i, (fit_set, _) in enumerate(splits)
                ]
                extra = sum(
                    memory_estimate("lsp", m, n, f.fitted.P.r, bench.opt_factor).extra
                    for (m, n), f in zip(shapes, fits)
                )
                for method, pairs in (
                    ("lsp", [f.fitted for f in fits]),
                    ("lsp_random", [f.initial for f in fits]),
                ):
                    rows.append(
                        (
                            method,
                            d,
                            r,
                            seed,
                            r,
                            extra,
                            _layer_mean(mean_relative_bias, pairs, [s[0] for s in splits]),
                            _layer_mean(mean_relative_bias, pairs, [s[1] for s in splits]),
                        )
                    )
                log.verbose("seed %d d=%d r=%d: held-out bias %.4f", seed, d, r, rows[-2][-1])

            if bench.galore:
                ranks = [equal_memory_rank(m, n, r, bench.opt_factor) for m, n in shapes]
                bases = [galore_basis(s[0], k) for s, k in zip(splits, ranks)]
                extra = sum(
                    memory_estimate("galore", m, n, k, bench.opt_factor).extra
                    for (m, n), k in zip(shapes, ranks)
                )
                rows.append(
                    (
                        "galore",
                        None,
                        r,
                        seed,
                        ranks[0],
                        extra,
                        _layer_mean(heldout_bias_galore, bases, [s[0] for s in splits]),
                        _layer_mean(heldout_bias_galore, bases, [s[1] for s in splits]),
                    )
                )

    df = pd.DataFrame(rows, columns=BENCH_COLUMNS)
    df["d"] = df["d"].astype("Int64")
    return df


# comparisons


class MethodResult(NamedTuple):
    method: str
    history: TrainHistory
    net: DenseNet
    extra_memory: int
    heldout_bias: float


def _extra_memory(method: str, net: DenseNet, cfg: TrainConfig, opt_factor: int) -> int:
    kind = "lsp" if method == "lsp_frozen" else method
    size = cfg.r if kind == "lsp" else cfg.rank
    return sum(
        memory_estimate(kind, m, n, size, opt_factor).extra for m, n in net.shapes  # type:ignore
    )


def _heldout_bias(
    method: str, net: DenseNet, data: TaskData, history: TrainHistory, rank: int
) -> float:
    """Bias of each method's final projection on the eval-set gradient, averaged over layers.

    Full Adam has no projection (0). LoRA does not project gradients (NaN). GaLore's basis is
    recomputed from the full training-set gradient at the final weights.
    """
    if method == "full":
        return 0.0
    if method == "lora":
        return math.nan
    eval_grads = backward(net, forward(net, data.eval)[1])
    if method == "galore":
        train_grads = backward(net, forward(net, data.train)[1])
        return float(
            np.mean(
                [
                    heldout_bias_galore(galore_project(g, rank).P, [e])
                    for g, e in zip(train_grads, eval_grads)
                ]
            )
        )
    pairs = [periods[-1].pair for periods in history.periods]
    return float(np.mean([mean_relative_bias(p, [g]) for p, g in zip(pairs, eval_grads)]))


def run_method(
    method: str,
    base: DenseNet,
    data: TaskData,
    cfg: TrainConfig,
    opt_factor: int = 3,
    *,
    threads: int = 1,
) -> MethodResult:
    """Train a copy of ``base`` with ``method``. ``lsp_frozen`` never refits its projectors."""
    net = base.copy()
    if method == "lsp":
        history = train_lsp(net, data, cfg, threads=threads)
    elif method == "lsp_frozen":
        frozen = dataclasses.replace(cfg, fit_projectors=False)
        history = train_lsp(net, data, frozen, threads=threads)
        history.method = method
    else:
        history = train_baseline(method, net, data, cfg)  # type:ignore
    return MethodResult(
        method,
        history,
        net,
        _extra_memory(method, net, cfg, opt_factor),
        _heldout_bias(method, net, data, history, cfg.rank),
    )


def compare_methods(
    task: SyntheticTask, cfg: TrainConfig, compare: CompareConfig, threads: int = 1
) -> list[MethodResult]:
    """Every method from the same student and data. Results keep the configured order."""
    data = make_task(task)
    base = make_student(task)

    def run(method: str) -> MethodResult:
        return run_method(method, base, data, cfg, compare.opt_factor)

    if threads > 1:
        with ThreadPoolExecutor(threads, "lspkit_compare") as executor:
            return list(executor.map(run, compare.methods))
    return [run(method) for method in compare.methods]


def comparison_frame(results: Sequence[MethodResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (
                r.method,
                r.extra_memory,
                r.history.final_train_loss,
                r.history.final_eval_loss,
                r.heldout_bias,
            )
            for r in results
        ],
        columns=COMPARE_COLUMNS,
    )
