"""Command line entry point: ``lspkit <command> [--config PATH] [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
from pathlib import Path
from typing import Callable, Optional, Sequence

import pandas as pd
from rich.logging import RichHandler

from . import __version__
from .bench import (
    bias_bench,
    compare_methods,
    comparison_frame,
    corpus_for,
    fit_layer,
    mean_relative_bias,
    run_method,
    split_corpus,
)
from .config import METHODS, RunConfig, load_run_config, resolve_threads
from .consts import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK
from .errors import InvalidConfig, LSPKitError, NumericAbort, OutputExists
from .plot import bias_plot, fit_curve, history_plot, loss_curves, write_html
from .projector import save_projector
from .reports import (
    fresh_output_dir,
    write_frame,
    write_json,
    write_run_metadata,
    write_weights,
)
from .schedule_sim import load_profile, simulate, summarize
from .schedule_sim.plot import plot_trace
from .schedule_sim.policies import Policy
from .schedule_sim.profile import resolve_profile_path
from .toy_models import make_student, make_task
from .utils.chat import humanize_bytes, humanize_seconds, key_value_table, plain_table
from .utils.meta import get_lsp_logger, verbosity_to_level

log = get_lsp_logger(__name__)

Command = Callable[[argparse.Namespace, RunConfig, Path], None]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="run config JSON (defaults otherwise)")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", type=Path, help="output directory, must be new or empty")
    parser.add_argument("--plot", action="store_true", help="also write HTML figures")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="more logging (repeatable)"
    )


def _add_train_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--d", type=int, help="subspace size")
    parser.add_argument("--r", type=int, help="non-zeros per projector row")
    parser.add_argument("--alpha", type=float, help="relative bias threshold")
    parser.add_argument("--check-freq", type=int, help="steps between bias checks")
    parser.add_argument("--steps", type=int, help="total training steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lspkit", description="Learned sparse subspace fine-tuning toolkit."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one method on a synthetic task")
    _add_common(train)
    _add_train_overrides(train)
    train.add_argument("--method", choices=METHODS, help="training method")
    train.add_argument(
        "--identity-proj", action="store_true", help="identity projectors (needs d == m == n)"
    )

    fit = sub.add_parser("fit", help="fit one projector pair per layer to a gradient corpus")
    _add_common(fit)
    _add_train_overrides(fit)

    bench = sub.add_parser("bias-bench", help="sweep projector sizes and report their bias")
    _add_common(bench)

    sim = sub.add_parser("sim", help="simulate an offload schedule on a timing profile")
    _add_common(sim)
    sim.add_argument("--profile", help="profile JSON path or bundled profile name")
    sim.add_argument("--policy", choices=[p.value for p in Policy])
    sim.add_argument("--d", type=int, help="compressed payload size for lsp_layerwise")
    sim.add_argument("--iters", type=int, help="iterations to simulate")
    sim.add_argument("--transition", type=int, help="override the transition layer")

    compare = sub.add_parser("compare", help="train every configured method side by side")
    _add_common(compare)
    _add_train_overrides(compare)
    return parser


def _apply_overrides(args: argparse.Namespace, cfg: RunConfig) -> RunConfig:
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    train = {
        key: value
        for key, value in (
            ("d", getattr(args, "d", None) if args.command != "sim" else None),
            ("r", getattr(args, "r", None)),
            ("alpha", getattr(args, "alpha", None)),
            ("check_freq", getattr(args, "check_freq", None)),
            ("total_steps", getattr(args, "steps", None)),
        )
        if value is not None
    }
    if getattr(args, "identity_proj", False):
        train["projector_init"] = "identity"
    if train:
        cfg = cfg.with_train(**train)
    if getattr(args, "method", None):
        cfg = cfg.replace(method=args.method)
    if args.command == "sim":
        sim = {
            key: getattr(args, key)
            for key in ("profile", "policy", "d", "iters", "transition")
            if getattr(args, key) is not None
        }
        if sim:
            try:
                cfg = cfg.replace(sim=dataclasses.replace(cfg.sim, **sim))
            except InvalidConfig as e:
                raise e.prefixed("sim") from None
    return cfg


# commands


def cmd_train(args: argparse.Namespace, cfg: RunConfig, out: Path) -> None:
    data = make_task(cfg.task)
    base = make_student(cfg.task)
    try:
        result = run_method(
            cfg.method, base, data, cfg.train, cfg.compare.opt_factor, threads=resolve_threads()
        )
    except NumericAbort as e:
        if e.history is not None:
            write_frame(e.history.to_frame(), out / "history.csv")
        raise
    history = result.history
    write_frame(history.to_frame(), out / "history.csv")
    if history.checks:
        write_frame(history.checks_frame(), out / "checks.csv")
    write_weights(out / "weights", result.net.weights)
    if args.plot:
        write_html(history_plot(history.to_frame()), out / "history.html")
    print(
        key_value_table(
            f"train: {cfg.method}",
            {
                "Steps": str(len(history)),
                "Final train loss": f"{history.final_train_loss:.6g}",
                "Final eval loss": f"{history.final_eval_loss:.6g}",
                "Refresh steps": str(len(history.refresh_steps)),
                "Extra memory (scalars)": f"{result.extra_memory:,}",
            },
        )
    )


def cmd_fit(args: argparse.Namespace, cfg: RunConfig, out: Path) -> None:
    train = cfg.train
    fit_cfg = dataclasses.replace(train.fit, alpha=train.alpha)
    corpus = corpus_for(cfg.task, train, cfg.bench.corpus_steps, cfg.bench.corpus_every)
    rows = []
    for i, grads in enumerate(corpus):
        fit_set, held_out = split_corpus(grads)
        result = fit_layer(fit_set, train.d, train.r, fit_cfg, cfg.seed, i)
        save_projector(out / f"layer{i}_P.txt", result.fitted.P)
        save_projector(out / f"layer{i}_Q.txt", result.fitted.Q)
        curve = result.report.loss_curve_frame()
        write_frame(curve, out / f"fit_layer{i}.csv")
        if args.plot:
            write_html(fit_curve(curve, i), out / f"fit_layer{i}.html")
        m, n = grads[0].shape
        rows.append(
            (
                i,
                m,
                n,
                train.d,
                train.r,
                result.report.steps,
                int(result.report.success),
                mean_relative_bias(result.initial, fit_set),
                mean_relative_bias(result.fitted, fit_set),
                mean_relative_bias(result.initial, held_out),
                mean_relative_bias(result.fitted, held_out),
            )
        )
    columns = [
        "layer",
        "m",
        "n",
        "d",
        "r",
        "steps",
        "success",
        "initial_train_bias",
        "train_bias",
        "initial_heldout_bias",
        "heldout_bias",
    ]
    write_frame(pd.DataFrame(rows, columns=columns), out / "fit.csv")
    summary = [(r[0], r[5], r[8], r[10]) for r in rows]
    print(plain_table(summary, ["layer", "steps", "train_bias", "heldout_bias"]))


def cmd_bias_bench(args: argparse.Namespace, cfg: RunConfig, out: Path) -> None:
    df = bias_bench(cfg.task, cfg.train, cfg.bench)
    write_frame(df, out / "bias_bench.csv")
    if args.plot:
        write_html(bias_plot(df), out / "bias_bench.html")
    grouped = df.groupby(["method", "r", "d"], dropna=False, as_index=False)
    median = grouped["heldout_bias"].median()
    print(plain_table(median.values.tolist(), list(median.columns)))


def cmd_sim(args: argparse.Namespace, cfg: RunConfig, out: Path) -> None:
    sim = cfg.sim
    profile_path = resolve_profile_path(sim.profile)
    profile = load_profile(profile_path)
    trace = simulate(profile, sim.policy, sim.iters, d=sim.d, transition=sim.transition)
    summary = summarize(trace, profile, sim.d)
    trace.save_csv(out / "trace.csv")
    write_json(summary, out / "summary.json")
    if args.plot:
        write_html(plot_trace(trace), out / "trace.html")
    table = {
        "Iteration time": humanize_seconds(summary["iter_time"]),
        "Closed form": humanize_seconds(summary["closed_form"]),
        "Gap": f"{summary['closed_form_gap']:.3%}",
    }
    for resource, util in summary["utilization"].items():
        table[f"{resource} utilization"] = f"{util:.1%}"
    for resource, moved in summary["traffic_bytes"].items():
        table[f"{resource} traffic per iteration"] = humanize_bytes(moved)
    print(key_value_table(f"sim: {sim.policy} on {profile.name}", table))


def cmd_compare(args: argparse.Namespace, cfg: RunConfig, out: Path) -> None:
    results = compare_methods(cfg.task, cfg.train, cfg.compare, threads=resolve_threads())
    for result in results:
        write_frame(result.history.to_frame(), out / f"history_{result.method}.csv")
    df = comparison_frame(results)
    write_frame(df, out / "comparison.csv")
    if args.plot:
        frames = {r.method: r.history.to_frame() for r in results}
        write_html(loss_curves(frames, "eval_loss"), out / "comparison.html")
    print(plain_table(df.values.tolist(), list(df.columns)))


COMMANDS: dict[str, Command] = {
    "train": cmd_train,
    "fit": cmd_fit,
    "bias-bench": cmd_bias_bench,
    "sim": cmd_sim,
    "compare": cmd_compare,
}


def setup_logging(verbosity: int) -> None:
    """Send this package's logs through rich. Calling again replaces the handler."""
    logger = logging.getLogger("lspkit")
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    logger.addHandler(RichHandler(show_path=False, rich_tracebacks=False))
    logger.setLevel(verbosity_to_level(verbosity))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        cfg = _apply_overrides(args, load_run_config(args.config))
        out = fresh_output_dir(args.out or cfg.out or Path("runs") / args.command)
        inputs = [args.config] if args.config else []
        if args.command == "sim":
            inputs.append(resolve_profile_path(cfg.sim.profile))
        COMMANDS[args.command](args, cfg, out)
        write_run_metadata(out, args.command, cfg.to_dict(), __version__, inputs)
    except NumericAbort as e:
        log.error("Numeric abort: %s", e)
        return EXIT_NUMERIC
    except (OutputExists, OSError) as e:
        log.error("I/O error: %s", e)
        return EXIT_IO
    except LSPKitError as e:
        log.error("Configuration error: %s", e)
        return EXIT_CONFIG
    return EXIT_OK
