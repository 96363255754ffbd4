"""Run configuration documents: one JSON object per command, every section optional.

Unknown keys are rejected with their dotted path. The top-level ``seed`` is pushed down into
every nested seed so one number controls a whole run.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Optional, Union

import psutil

from .consts import THREADS_ENV
from .errors import InvalidConfig
from .projector import FitConfig
from .schedule_sim.policies import Policy
from .toy_models import SyntheticTask
from .trainer import TrainConfig
from .utils.jsonio import read_json
from .utils.meta import get_lsp_logger

log = get_lsp_logger(__name__)

Method = Literal["lsp", "lsp_frozen", "full", "lora", "galore"]
METHODS = ("lsp", "lsp_frozen", "full", "lora", "galore")


@dataclass(frozen=True)
class SimConfig:
    """``d`` of None sends full gradients in the layer-wise schedule."""

    profile: str = "llama7b-4090"
    policy: str = "lsp_layerwise"
    iters: int = 4
    d: Optional[int] = None
    transition: Optional[int] = None

    def __post_init__(self) -> None:
        if self.policy not in {p.value for p in Policy}:
            raise InvalidConfig("policy", f"unknown policy {self.policy!r}")
        if self.iters < 1:
            raise InvalidConfig("iters", "must be >= 1")
        if self.d is not None and self.d < 1:
            raise InvalidConfig("d", "must be >= 1")
        if self.transition is not None and self.transition < 0:
            raise InvalidConfig("transition", "must be >= 0")


def _bench_fit() -> FitConfig:
    return FitConfig(alpha=0.05, max_steps=300, timeout_steps=300, normalize_targets=True)


@dataclass(frozen=True)
class BenchConfig:
    """Bias sweep over ``d_values × r_values × seeds``.

    The gradient corpus is recorded every ``corpus_every`` steps of a ``corpus_steps`` long
    full-Adam run; alternate gradients are held out.
    """

    d_values: tuple[int, ...] = (8, 16, 32, 64)
    r_values: tuple[int, ...] = (4,)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    corpus_steps: int = 200
    corpus_every: int = 10
    opt_factor: int = 3
    galore: bool = True
    fit: FitConfig = field(default_factory=_bench_fit)

    def __post_init__(self) -> None:
        for key in ("d_values", "r_values", "seeds"):
            values = tuple(int(x) for x in getattr(self, key))
            object.__setattr__(self, key, values)
            if not values:
                raise InvalidConfig(key, "must not be empty")
        if any(d < 1 for d in self.d_values) or any(r < 1 for r in self.r_values):
            raise InvalidConfig("d_values", "d and r values must be >= 1")
        if any(s < 0 for s in self.seeds):
            raise InvalidConfig("seeds", "must be >= 0")
        if self.corpus_every < 1:
            raise InvalidConfig("corpus_every", "must be >= 1")
        if self.corpus_steps < 2 * self.corpus_every:
            raise InvalidConfig("corpus_steps", "must record at least two gradients")
        if self.opt_factor < 1:
            raise InvalidConfig("opt_factor", "must be >= 1")

    @property
    def grid_size(self) -> int:
        return len(self.d_values) * len(self.r_values) * len(self.seeds)


@dataclass(frozen=True)
class CompareConfig:
    methods: tuple[str, ...] = ("full", "lsp", "lsp_frozen", "lora", "galore")
    opt_factor: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise InvalidConfig("methods", "must not be empty")
        for method in self.methods:
            if method not in METHODS:
                raise InvalidConfig("methods", f"unknown method {method!r}")
        if len(set(self.methods)) != len(self.methods):
            raise InvalidConfig("methods", "must not repeat a method")
        if self.opt_factor < 1:
            raise InvalidConfig("opt_factor", "must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs. ``out`` defaults to ``runs/<command>``."""

    seed: int = 0
    out: Optional[str] = None
    method: str = "lsp"
    task: SyntheticTask = field(default_factory=SyntheticTask)
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise InvalidConfig("seed", "must be >= 0")
        if self.method not in METHODS:
            raise InvalidConfig("method", f"unknown method {self.method!r}")
        seed = self.seed
        object.__setattr__(self, "task", dataclasses.replace(self.task, seed=seed))
        fit = dataclasses.replace(self.train.fit, seed=seed)
        object.__setattr__(self, "train", dataclasses.replace(self.train, seed=seed, fit=fit))

    def replace(self, **changes: Any) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def with_train(self, **changes: Any) -> RunConfig:
        """Copy with ``train`` fields changed, re-validated with their dotted path."""
        try:
            return self.replace(train=dataclasses.replace(self.train, **changes))
        except InvalidConfig as e:
            raise e.prefixed("train") from None

    def to_dict(self) -> dict[str, Any]:
        """Plain JSON-able echo, without ``out`` so identical runs echo identically."""
        data = _to_plain(dataclasses.asdict(self))
        data.pop("out", None)
        return data


def _to_plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    return value


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_scalar(hint: Any, value: Any, key: str) -> None:
    origin = typing.get_origin(hint)
    if origin is Union:
        args = typing.get_args(hint)
        if value is None and type(None) in args:
            return
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif hint is str or origin is Literal:
        ok = isinstance(value, str)
    elif origin is tuple:
        ok = isinstance(value, (list, tuple))
    else:
        ok = True
    if not ok:
        raise InvalidConfig(key, f"wrong type {type(value).__name__}")


T = typing.TypeVar("T")


def build_dataclass(cls: type[T], data: Any, path: str = "") -> T:
    """Instantiate ``cls`` from a JSON object, recursing into nested dataclass fields."""
    if not isinstance(data, dict):
        raise InvalidConfig(path or "<root>", "must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}  # type:ignore
    for key in sorted(data):
        if key not in names:
            raise InvalidConfig(_join(path, key), "unknown key")

    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        hint = hints[key]
        dotted = _join(path, key)
        if dataclasses.is_dataclass(hint):
            kwargs[key] = build_dataclass(hint, value, dotted)  # type:ignore
            continue
        _check_scalar(hint, value, dotted)
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except InvalidConfig as e:
        raise e.prefixed(path) from None
    except (TypeError, ValueError) as e:
        raise InvalidConfig(path or "<root>", str(e)) from e


def load_run_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Read a run config, or the defaults when ``path`` is None."""
    if path is None:
        return RunConfig()
    path = Path(path)
    cfg = build_dataclass(RunConfig, read_json(path))
    log.debug("Loaded config %s: %r", path, cfg)
    return cfg


def resolve_threads() -> int:
    """Worker threads: ``LSP_KIT_THREADS`` if set, else the physical core count."""
    raw = os.environ.get(THREADS_ENV)
    if raw is not None:
        try:
            threads = int(raw)
        except ValueError:
            raise InvalidConfig(THREADS_ENV, f"not an integer: {raw!r}") from None
        if threads < 1:
            raise InvalidConfig(THREADS_ENV, "must be >= 1")
        return threads
    return max(psutil.cpu_count(logical=False) or 1, 1)
