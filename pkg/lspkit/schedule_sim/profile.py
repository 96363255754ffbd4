"""Timing profiles: per-layer compute times, transfer sizes, bandwidths and memory sizes."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NamedTuple, Optional, Union

import numpy as np

from ..errors import InfeasibleProfile
from ..utils.jsonio import read_json

PROFILE_DIR = Path(__file__).parent / "profiles"

UNITS = {"time": "s", "size": "bytes", "bandwidth": "bytes/s"}

PER_LAYER_FIELDS = (
    "fwd_gpu",
    "bwd_gpu",
    "upd_gpu",
    "fwd_cpu",
    "bwd_cpu",
    "upd_cpu",
    "grad_bytes",
    "delta_bytes",
)
SCALAR_FIELDS = (
    "bandwidth_d2h",
    "bandwidth_h2d",
    "duplex",
    "mem_total",
    "mem_gpu",
    "scalar_bytes",
    "matrices_per_layer",
    "bucket_layers",
)


@dataclass(frozen=True)
class TimingProfile:
    """Per-layer times in seconds, sizes in bytes and bandwidths in bytes per second.

    Per-layer fields accept a scalar (same for every layer) or one value per layer and are
    stored as tuples. ``scalar_bytes`` and ``matrices_per_layer`` size the compressed
    payload: each layer sends ``matrices_per_layer · d² · scalar_bytes`` bytes each way.
    ``bucket_layers`` is how many layers the offload-everything schedules group per
    gradient transfer.
    """

    n_layers: int
    fwd_gpu: tuple[float, ...]
    bwd_gpu: tuple[float, ...]
    upd_gpu: tuple[float, ...]
    fwd_cpu: tuple[float, ...]
    bwd_cpu: tuple[float, ...]
    upd_cpu: tuple[float, ...]
    grad_bytes: tuple[float, ...]
    delta_bytes: tuple[float, ...]
    bandwidth_d2h: float
    bandwidth_h2d: float
    duplex: bool = True
    mem_total: float = 0.0
    mem_gpu: float = 0.0
    scalar_bytes: int = 8
    matrices_per_layer: int = 2
    bucket_layers: int = 1
    name: str = "custom"

    def __post_init__(self) -> None:
        if int(self.n_layers) < 1:
            raise InfeasibleProfile("n_layers must be >= 1")
        object.__setattr__(self, "n_layers", int(self.n_layers))
        for key in PER_LAYER_FIELDS:
            raw = getattr(self, key)
            values = np.asarray(raw, dtype=np.float64)
            if values.ndim == 0:
                values = np.full(self.n_layers, float(values))
            if values.shape != (self.n_layers,):
                raise InfeasibleProfile(
                    f"{key} has {values.size} entries but the profile has {self.n_layers} layers"
                )
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise InfeasibleProfile(f"{key} must be finite and >= 0")
            object.__setattr__(self, key, tuple(float(v) for v in values))
        for key in ("bandwidth_d2h", "bandwidth_h2d"):
            value = float(getattr(self, key))
            if not np.isfinite(value) or value <= 0:
                raise InfeasibleProfile(f"{key} must be > 0, got {value}")
            object.__setattr__(self, key, value)
        for key in ("mem_total", "mem_gpu"):
            if float(getattr(self, key)) < 0:
                raise InfeasibleProfile(f"{key} must be >= 0")
        if self.scalar_bytes < 1 or self.matrices_per_layer < 1 or self.bucket_layers < 1:
            raise InfeasibleProfile(
                "scalar_bytes, matrices_per_layer and bucket_layers must be >= 1"
            )

    def __repr__(self) -> str:
        return f"<TimingProfile name={self.name} n_layers={self.n_layers} duplex={self.duplex}>"

    def replace(self, **changes: Any) -> TimingProfile:
        return dataclasses.replace(self, **changes)

    def lsp_payload(self, d: int) -> float:
        """Bytes one layer sends each way when its gradient is compressed to ``d × d``."""
        return float(self.matrices_per_layer * d * d * self.scalar_bytes)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"name": self.name, "units": dict(UNITS)}
        data["n_layers"] = self.n_layers
        for key in PER_LAYER_FIELDS:
            values = getattr(self, key)
            data[key] = values[0] if len(set(values)) == 1 else list(values)
        for key in SCALAR_FIELDS:
            data[key] = getattr(self, key)
        return data


class Totals(NamedTuple):
    """Per-iteration aggregates, summed over layers."""

    fwd: float
    bwd: float
    upd_gpu: float
    upd_cpu: float
    d2h: float
    h2d: float


def totals(profile: TimingProfile) -> Totals:
    return Totals(
        sum(profile.fwd_gpu),
        sum(profile.bwd_gpu),
        sum(profile.upd_gpu),
        sum(profile.upd_cpu),
        sum(profile.grad_bytes) / profile.bandwidth_d2h,
        sum(profile.delta_bytes) / profile.bandwidth_h2d,
    )


class LayerCosts(NamedTuple):
    """Seconds for one layer's offload, host update and upload."""

    offload: float
    upd: float
    upload: float


def lsp_layer_costs(profile: TimingProfile, layer: int, d: Optional[int]) -> LayerCosts:
    """Costs of one layer's pipeline with a ``d × d`` payload (or full size when ``d`` is None).

    The host update scales with the payload relative to the full gradient.
    """
    if d is None:
        return LayerCosts(
            profile.grad_bytes[layer] / profile.bandwidth_d2h,
            profile.upd_cpu[layer],
            profile.delta_bytes[layer] / profile.bandwidth_h2d,
        )
    payload = profile.lsp_payload(d)
    full = profile.grad_bytes[layer]
    upd = profile.upd_cpu[layer] * payload / full if full > 0 else profile.upd_cpu[layer]
    return LayerCosts(payload / profile.bandwidth_d2h, upd, payload / profile.bandwidth_h2d)


def profile_from_dict(data: dict[str, Any], source: str = "<profile>") -> TimingProfile:
    """Build a profile from its JSON document. ``units`` must be present and exact."""
    units = data.get("units")
    if units != UNITS:
        raise InfeasibleProfile(f"{source}: 'units' must be exactly {UNITS}, got {units}")
    allowed = {"name", "units", "n_layers", "source", *PER_LAYER_FIELDS, *SCALAR_FIELDS}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise InfeasibleProfile(f"{source}: unknown key(s) {', '.join(unknown)}")
    required = ("n_layers", *PER_LAYER_FIELDS, "bandwidth_d2h", "bandwidth_h2d")
    missing = [k for k in required if k not in data]
    if missing:
        raise InfeasibleProfile(f"{source}: missing key(s) {', '.join(missing)}")
    kwargs = {k: v for k, v in data.items() if k not in ("units", "source")}
    try:
        return TimingProfile(**kwargs)
    except (TypeError, ValueError) as e:
        raise InfeasibleProfile(f"{source}: {e}") from e


def bundled_profiles() -> list[str]:
    return sorted(p.stem for p in PROFILE_DIR.glob("*.json"))


def resolve_profile_path(name_or_path: Union[str, Path]) -> Path:
    """A path as given if it exists, else a bundled profile by name (``.json`` optional)."""
    path = Path(name_or_path)
    if path.is_file():
        return path
    bundled = PROFILE_DIR / (path.name if path.suffix == ".json" else f"{path.name}.json")
    if bundled.is_file():
        return bundled
    raise FileNotFoundError(
        f"no profile file {name_or_path} (bundled: {', '.join(bundled_profiles())})"
    )


def load_profile(name_or_path: Union[str, Path]) -> TimingProfile:
    path = resolve_profile_path(name_or_path)
    return profile_from_dict(read_json(path), str(path))


def uniform_profile(n_layers: int, **fields: Any) -> TimingProfile:
    """Profile with every unspecified time and size at zero, and unit bandwidths."""
    base: dict[str, Any] = {key: 0.0 for key in PER_LAYER_FIELDS}
    base.update(bandwidth_d2h=1.0, bandwidth_h2d=1.0)
    base.update(fields)
    return TimingProfile(n_layers=n_layers, **base)
