"""Task graphs for each offload schedule."""

from __future__ import annotations

from enum import Enum
from typing import Optional

from ..errors import ContractViolation
from .engine import CPU, D2H, GPU, H2D, SYNC, Scheduler
from .profile import TimingProfile, lsp_layer_costs


class Policy(str, Enum):
    SWAP_ONLY = "swap_only"
    ZERO = "zero"
    ZERO_DELAYED = "zero_delayed"
    LSP_LAYERWISE = "lsp_layerwise"

    @classmethod
    def parse(cls, value: "str | Policy") -> Policy:
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(p.value for p in cls)
            raise ContractViolation(f"unknown policy {value!r} (choose from {choices})") from None


def _scheduler(profile: TimingProfile) -> tuple[Scheduler, int, int]:
    """A scheduler plus the resource ids for the two transfer directions.

    Without duplex both directions land on one ``link`` resource.
    """
    duplex = profile.duplex
    names = {GPU: "gpu", CPU: "cpu", D2H: "d2h" if duplex else "link", SYNC: "sync"}
    if duplex:
        names[H2D] = "h2d"
    return Scheduler(names), D2H, H2D if duplex else D2H


def _forward(
    sched: Scheduler, profile: TimingProfile, t: int, first_deps: list[int]
) -> int:
    prev = -1
    for layer in range(profile.n_layers):
        deps = first_deps if layer == 0 else [prev]
        prev = sched.add(GPU, profile.fwd_gpu[layer], "fwd", layer, t, deps)
    return prev


def build_zero(profile: TimingProfile, iters: int, delayed: bool = False) -> Scheduler:
    """Offload every gradient, update on the host, upload every delta.

    Gradients leave in buckets of ``bucket_layers`` as backward finishes them. The host
    waits for the whole gradient before updating (deepest layer first) and each delta is
    applied on the device once uploaded. The next forward waits for every apply, unless
    ``delayed``: then it only waits for the applies of two iterations back, so the host
    update of step t overlaps device compute of step t+1.
    """
    sched, d2h, h2d = _scheduler(profile)
    n = profile.n_layers
    applied: list[int] = []
    last_bwd = -1
    for t in range(iters):
        deps = [last_bwd] if last_bwd >= 0 else []
        lag = 2 if delayed else 1
        if t >= lag:
            deps.append(applied[t - lag])
        prev = _forward(sched, profile, t, deps)

        offloads = []
        bucket: list[int] = []
        for layer in reversed(range(n)):
            prev = sched.add(GPU, profile.bwd_gpu[layer], "bwd", layer, t, [prev])
            bucket.append(layer)
            if len(bucket) == profile.bucket_layers or layer == 0:
                nbytes = sum(profile.grad_bytes[j] for j in bucket)
                offloads.append(
                    sched.add(
                        d2h,
                        nbytes / profile.bandwidth_d2h,
                        "offload",
                        layer,
                        t,
                        [prev],
                        nbytes=nbytes,
                    )
                )
                bucket = []
        last_bwd = prev

        barrier = sched.add(SYNC, 0.0, "gathered", -1, t, offloads)
        applies = []
        for layer in reversed(range(n)):
            upd = sched.add(CPU, profile.upd_cpu[layer], "upd", layer, t, [barrier])
            nbytes = profile.delta_bytes[layer]
            up = sched.add(
                h2d, nbytes / profile.bandwidth_h2d, "upload", layer, t, [upd], nbytes=nbytes
            )
            applies.append(sched.add(GPU, profile.upd_gpu[layer], "apply", layer, t, [up]))
        applied.append(sched.add(SYNC, 0.0, "applied", -1, t, applies))
    return sched


def swap_volume(profile: TimingProfile) -> float:
    return max(0.0, profile.mem_total - profile.mem_gpu)


def build_swap_only(profile: TimingProfile, iters: int) -> Scheduler:
    """All compute on the device; what does not fit is swapped in and out every iteration.

    The swapped bytes are split evenly across layers. A layer's swap-in must follow its
    previous swap-out, and its update needs both its gradient and its swap-in.
    """
    sched, d2h, h2d = _scheduler(profile)
    n = profile.n_layers
    chunk = swap_volume(profile) / n
    swapped_out: list[int] = [-1] * n
    done = -1
    for t in range(iters):
        prev = _forward(sched, profile, t, [done] if done >= 0 else [])
        updates = []
        for layer in reversed(range(n)):
            prev = sched.add(GPU, profile.bwd_gpu[layer], "bwd", layer, t, [prev])
            deps = [swapped_out[layer]] if swapped_out[layer] >= 0 else []
            swap_in = sched.add(
                h2d, chunk / profile.bandwidth_h2d, "swap_in", layer, t, deps, nbytes=chunk
            )
            upd = sched.add(GPU, profile.upd_gpu[layer], "upd", layer, t, [prev, swap_in])
            swapped_out[layer] = sched.add(
                d2h, chunk / profile.bandwidth_d2h, "swap_out", layer, t, [upd], nbytes=chunk
            )
            updates.append(upd)
        done = sched.add(SYNC, 0.0, "updated", -1, t, updates)
    return sched


def lcfs_layers(n_layers: int, transition: int) -> set[int]:
    """Layers served last-come-first-serve: all but the first ``transition`` in backward order."""
    transition = min(max(transition, 0), n_layers)
    return {layer for layer in range(n_layers) if n_layers - 1 - layer >= transition}


def build_lsp_layerwise(
    profile: TimingProfile, iters: int, d: Optional[int], transition: int
) -> Scheduler:
    """Per-layer pipeline: offload, host update and upload start as soon as a layer's
    backward is done, and a layer's next forward waits only for its own apply.

    Layers past ``transition`` in backward order are served last-come-first-serve.
    """
    sched, d2h, h2d = _scheduler(profile)
    n = profile.n_layers
    late = lcfs_layers(n, transition)
    costs = [lsp_layer_costs(profile, layer, d) for layer in range(n)]
    payloads = [
        profile.grad_bytes[layer] if d is None else profile.lsp_payload(d) for layer in range(n)
    ]
    applied: list[int] = [-1] * n
    last_bwd = -1
    for t in range(iters):
        prev = -1
        for layer in range(n):
            deps = [prev] if layer > 0 else ([last_bwd] if last_bwd >= 0 else [])
            if applied[layer] >= 0:
                deps.append(applied[layer])
            prev = sched.add(GPU, profile.fwd_gpu[layer], "fwd", layer, t, deps)
        for layer in reversed(range(n)):
            prev = sched.add(GPU, profile.bwd_gpu[layer], "bwd", layer, t, [prev])
            lcfs = layer in late
            cost = costs[layer]
            nbytes = payloads[layer]
            off = sched.add(
                d2h, cost.offload, "offload", layer, t, [prev], lcfs=lcfs, nbytes=nbytes
            )
            upd = sched.add(CPU, cost.upd, "upd", layer, t, [off], lcfs=lcfs)
            up = sched.add(h2d, cost.upload, "upload", layer, t, [upd], lcfs=lcfs, nbytes=nbytes)
            applied[layer] = sched.add(
                GPU, profile.upd_gpu[layer], "apply", layer, t, [up], lcfs=lcfs
            )
        last_bwd = prev
    return sched
