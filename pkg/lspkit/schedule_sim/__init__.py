"""Discrete-event simulation of offloaded training schedules."""

from typing import Optional

from ..errors import ContractViolation
from ..utils.meta import get_lsp_logger
from .closed_form import (
    closed_form,
    closed_form_lsp,
    closed_form_swap_only,
    closed_form_zero,
    closed_form_zero_delayed,
    cpu_layer_overhead,
    min_communication,
    transition_layer,
)
from .engine import Event, Scheduler
from .policies import Policy, build_lsp_layerwise, build_swap_only, build_zero
from .profile import TimingProfile, load_profile, profile_from_dict, uniform_profile
from .trace import ScheduleTrace

log = get_lsp_logger(__name__)

__all__ = [
    "Event",
    "Policy",
    "ScheduleTrace",
    "Scheduler",
    "TimingProfile",
    "closed_form",
    "closed_form_lsp",
    "closed_form_swap_only",
    "closed_form_zero",
    "closed_form_zero_delayed",
    "cpu_layer_overhead",
    "load_profile",
    "min_communication",
    "profile_from_dict",
    "simulate",
    "summarize",
    "transition_layer",
    "uniform_profile",
]


def simulate(
    profile: TimingProfile,
    policy: "str | Policy",
    iters: int = 4,
    *,
    d: Optional[int] = None,
    transition: Optional[int] = None,
) -> ScheduleTrace:
    """Run ``iters`` training iterations of ``policy`` on ``profile``.

    ``d`` sets the compressed payload of the layer-wise schedule (None sends full gradients)
    and ``transition`` overrides its first-come-first-serve layer count.
    """
    policy = Policy.parse(policy)
    if iters < 1:
        raise ContractViolation(f"iters must be >= 1, got {iters}")
    if d is not None and d < 1:
        raise ContractViolation(f"d must be >= 1, got {d}")
    if policy is Policy.ZERO:
        sched = build_zero(profile, iters)
    elif policy is Policy.ZERO_DELAYED:
        sched = build_zero(profile, iters, delayed=True)
    elif policy is Policy.SWAP_ONLY:
        sched = build_swap_only(profile, iters)
    else:
        if transition is None:
            transition = transition_layer(profile, d)
        sched = build_lsp_layerwise(profile, iters, d, transition)
    log.verbose("Simulating %s on %r: %d tasks", policy.value, profile, len(sched))
    trace = ScheduleTrace(policy.value, iters, tuple(sched.run()), transition, d)
    trace.check_exclusive()
    if policy is Policy.SWAP_ONLY and profile.mem_total >= profile.mem_gpu:
        bound = min_communication(profile)
        for resource, moved in trace.traffic().items():
            # non-duplex links carry both directions
            if moved < bound * (1 - 1e-9):
                raise ContractViolation(
                    f"swap traffic on {resource} ({moved:g} B) is below {bound:g} B"
                )
    return trace


def summarize(
    trace: ScheduleTrace, profile: TimingProfile, d: Optional[int] = None
) -> dict:
    """Trace summary with the matching closed form, its relative gap and the schedule knobs."""
    summary = trace.summary()
    expected = closed_form(profile, trace.policy, d)
    summary["closed_form"] = expected
    summary["closed_form_gap"] = (
        (trace.iter_time - expected) / trace.iter_time if trace.iter_time > 0 else 0.0
    )
    if trace.policy == Policy.LSP_LAYERWISE.value:
        summary["d"] = d
        summary["transition_layer"] = trace.transition
    if trace.policy == Policy.SWAP_ONLY.value:
        summary["min_communication"] = min_communication(profile)
    summary["profile"] = profile.name
    return summary
