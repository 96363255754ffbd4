"""Closed-form iteration times for the simulated schedules."""

from __future__ import annotations

import math
from typing import Optional

from ..errors import ContractViolation
from .policies import Policy, swap_volume
from .profile import TimingProfile, lsp_layer_costs, totals


def closed_form_zero(profile: TimingProfile) -> float:
    """FWD + max(BWD, gradient offload) + max(host update, delta upload), summed over layers."""
    tot = totals(profile)
    return tot.fwd + max(tot.bwd, tot.d2h) + max(tot.upd_cpu, tot.h2d)


def closed_form_zero_delayed(profile: TimingProfile) -> float:
    """Steady state when the host update of one step overlaps device compute of the next.

    The slowest of device work (applies included), host update and the link. Without
    duplex the two transfer totals add up.
    """
    tot = totals(profile)
    link = max(tot.d2h, tot.h2d) if profile.duplex else tot.d2h + tot.h2d
    return max(tot.fwd + tot.bwd + tot.upd_gpu, tot.upd_cpu, link)


def closed_form_lsp(profile: TimingProfile, d: Optional[int]) -> float:
    """The largest of: device compute plus the tail after backward, total offload, total
    upload and total host update. Without duplex the two transfer totals add up.

    The tail is whichever is longer: the first layer's pipeline and apply, or applying every
    layer. With free applies it is just the first layer's pipeline.
    """
    tot = totals(profile)
    costs = [lsp_layer_costs(profile, layer, d) for layer in range(profile.n_layers)]
    first = costs[0]
    offload = sum(c.offload for c in costs)
    upload = sum(c.upload for c in costs)
    upd = sum(c.upd for c in costs)
    pipeline = first.offload + first.upload + first.upd + profile.upd_gpu[0]
    terms = [tot.fwd + tot.bwd + max(pipeline, tot.upd_gpu), upd]
    if profile.duplex:
        terms += [offload, upload]
    else:
        terms.append(offload + upload)
    return max(terms)


def closed_form_swap_only(profile: TimingProfile) -> float:
    tot = totals(profile)
    volume = swap_volume(profile)
    if profile.duplex:
        comm = max(volume / profile.bandwidth_d2h, volume / profile.bandwidth_h2d)
    else:
        comm = volume / profile.bandwidth_d2h + volume / profile.bandwidth_h2d
    return max(tot.fwd + tot.bwd + tot.upd_gpu, comm)


def closed_form(profile: TimingProfile, policy: "str | Policy", d: Optional[int] = None) -> float:
    policy = Policy.parse(policy)
    if policy is Policy.ZERO:
        return closed_form_zero(profile)
    if policy is Policy.ZERO_DELAYED:
        return closed_form_zero_delayed(profile)
    if policy is Policy.SWAP_ONLY:
        return closed_form_swap_only(profile)
    return closed_form_lsp(profile, d)


def transition_layer(profile: TimingProfile, d: Optional[int] = None) -> int:
    """How many layers, in backward order, can be served first-come-first-serve.

    Uses per-layer costs averaged over layers. Past this layer the pipeline cannot drain
    before backward ends, so later layers switch to last-come-first-serve and the layers
    the next forward needs first get priority. All-zero pipeline costs give 0.
    """
    n = profile.n_layers
    costs = [lsp_layer_costs(profile, layer, d) for layer in range(n)]
    offload = sum(c.offload for c in costs) / n
    upload = sum(c.upload for c in costs) / n
    upd = sum(c.upd for c in costs) / n
    slowest = max(offload, upload, upd)
    if slowest <= 0:
        return 0
    value = n - (totals(profile).bwd - (offload + upload + upd)) / slowest
    return int(math.floor(min(max(value, 0.0), float(n))))


def min_communication(profile: TimingProfile) -> float:
    """Bytes that must cross the link each way per iteration when nothing is offloaded."""
    if profile.mem_total < profile.mem_gpu:
        raise ContractViolation(
            f"mem_total ({profile.mem_total:g}) is smaller than mem_gpu ({profile.mem_gpu:g})"
        )
    return profile.mem_total - profile.mem_gpu


def cpu_layer_overhead(profile: TimingProfile, layer: int = 0) -> float:
    """Seconds for one layer's forward and backward on the host."""
    return profile.fwd_cpu[layer] + profile.bwd_cpu[layer]
