import numpy as np
import pytest

from lspkit.errors import ContractViolation, InfeasibleProfile
from lspkit.schedule_sim import (
    Policy,
    Scheduler,
    closed_form,
    closed_form_lsp,
    closed_form_zero,
    closed_form_zero_delayed,
    cpu_layer_overhead,
    load_profile,
    min_communication,
    profile_from_dict,
    simulate,
    summarize,
    transition_layer,
    uniform_profile,
)
from lspkit.schedule_sim.engine import GPU
from lspkit.schedule_sim.policies import lcfs_layers
from lspkit.schedule_sim.profile import bundled_profiles, lsp_layer_costs, totals
from lspkit.schedule_sim.trace import load_trace_frame

from .consts import (
    LLAMA_CPU_LAYER_OVERHEAD_S,
    LLAMA_D2H_PER_ITER_S,
    LLAMA_HOST_UPDATE_S,
    LLAMA_LSP_D,
    LLAMA_MIN_COMMUNICATION,
    LLAMA_PROFILE,
    LLAMA_SWAP_SHARED_LINK_S,
)

POLICIES = [p.value for p in Policy]


def random_profile(rng, d=64):
    """Uniform layers with offload-everything costs well above backward, and a compressed
    payload whose pipeline stays below it."""
    n = int(rng.integers(64, 97))
    b = rng.uniform(1e-3, 4e-3)
    f = rng.uniform(0.5e-3, 2e-3)
    a = rng.uniform(0.0, 0.005 * (f + b))
    c_full = rng.uniform(0.5, 30.0) * b
    u_full = rng.uniform(1.0, 40.0) * b
    c_lsp = rng.uniform(0.01, 0.3) * b
    u_lsp = rng.uniform(0.01, 0.5) * b
    ratio = min(c_lsp / c_full, u_lsp / u_full)
    payload = 2 * d * d * 8
    grad_bytes = payload / ratio
    bandwidth = grad_bytes / c_full
    return uniform_profile(
        n,
        fwd_gpu=f,
        bwd_gpu=b,
        upd_gpu=a,
        upd_cpu=u_full,
        grad_bytes=grad_bytes,
        delta_bytes=grad_bytes,
        bandwidth_d2h=bandwidth,
        bandwidth_h2d=bandwidth,
        name="random",
    )


def wide_profile(rng, d=64):
    """Few layers, applies as costly as backward and transfers that may undercut compute."""
    n = int(rng.integers(2, 17))
    b = rng.uniform(1e-3, 4e-3)
    f = rng.uniform(0.5e-3, 2e-3)
    a = rng.uniform(0.0, 1.0) * b
    c_full = rng.uniform(0.05, 30.0) * b
    h_full = rng.uniform(0.05, 30.0) * b
    u_full = rng.uniform(0.05, 40.0) * b
    ratio = rng.uniform(0.01, 1.0)
    grad_bytes = 2 * d * d * 8 / ratio
    return uniform_profile(
        n,
        fwd_gpu=f,
        bwd_gpu=b,
        upd_gpu=a,
        upd_cpu=u_full,
        grad_bytes=grad_bytes,
        delta_bytes=grad_bytes,
        bandwidth_d2h=grad_bytes / c_full,
        bandwidth_h2d=grad_bytes / h_full,
        duplex=bool(rng.random() < 0.7),
        name="wide",
    )


# engine


def test_scheduler_orders_fcfs_before_lcfs():
    sched = Scheduler({GPU: "gpu"})
    sched.add(GPU, 1.0, "a", 0, 0)
    sched.add(GPU, 1.0, "b", 1, 0, lcfs=True)
    sched.add(GPU, 1.0, "c", 2, 0, lcfs=True)
    sched.add(GPU, 1.0, "d", 3, 0)
    events = sched.run()
    assert [e.label for e in events] == ["a", "d", "c", "b"]
    assert [e.start for e in events] == [0.0, 1.0, 2.0, 3.0]


def test_scheduler_dependencies_may_point_forward():
    sched = Scheduler({GPU: "gpu", 1: "cpu"})
    first = sched.add(GPU, 2.0, "late", 0, 0, [1])
    sched.add(1, 3.0, "early", 0, 0)
    events = {e.label: e for e in sched.run()}
    assert first == 0
    assert events["late"].start == 3.0
    assert events["late"].ready == 3.0


def test_scheduler_rejects_cycles_and_bad_tasks():
    sched = Scheduler({GPU: "gpu"})
    sched.add(GPU, 1.0, "a", 0, 0, [1])
    sched.add(GPU, 1.0, "b", 1, 0, [0])
    with pytest.raises(ContractViolation):
        sched.run()

    sched = Scheduler({GPU: "gpu"})
    sched.add(GPU, 1.0, "a", 0, 0, [5])
    with pytest.raises(ContractViolation):
        sched.run()
    with pytest.raises(ContractViolation):
        sched.add(GPU, -1.0, "neg", 0, 0)
    with pytest.raises(ContractViolation):
        sched.add(7, 1.0, "nowhere", 0, 0)


# policies


@pytest.mark.parametrize("policy", POLICIES)
def test_compute_only_profile(policy):
    profile = uniform_profile(6, fwd_gpu=1.0, bwd_gpu=2.0, upd_gpu=0.5)
    trace = simulate(profile, policy, iters=3)
    assert trace.iter_time == pytest.approx(6 * 3.5)
    # the device never idles when it is the only busy resource
    gpu = trace.events_on("gpu")
    assert all(b.start == pytest.approx(a.end) for a, b in zip(gpu, gpu[1:]))


def test_simulate_rejects_bad_arguments():
    profile = uniform_profile(2, fwd_gpu=1.0)
    with pytest.raises(ContractViolation):
        simulate(profile, "zero", iters=0)
    with pytest.raises(ContractViolation):
        simulate(profile, "fifo")
    with pytest.raises(ContractViolation):
        simulate(profile, "lsp_layerwise", d=0)


def test_simulation_is_deterministic():
    profile = load_profile(LLAMA_PROFILE)
    a = simulate(profile, "lsp_layerwise", iters=3, d=LLAMA_LSP_D)
    b = simulate(profile, "lsp_layerwise", iters=3, d=LLAMA_LSP_D)
    assert a.events == b.events


def test_llama_zero_host_update():
    trace = simulate(load_profile(LLAMA_PROFILE), "zero", iters=2)
    assert trace.busy_time("cpu") == pytest.approx(LLAMA_HOST_UPDATE_S)
    assert trace.busy_time("d2h") == pytest.approx(LLAMA_D2H_PER_ITER_S)


def test_llama_zero_matches_closed_form():
    profile = load_profile(LLAMA_PROFILE)
    trace = simulate(profile, "zero", iters=3)
    # one layer of pipeline fill on each side of the host update is outside the closed form
    assert trace.iter_time >= closed_form_zero(profile)
    assert trace.iter_time == pytest.approx(closed_form_zero(profile), rel=0.02)


def test_llama_swap_only_on_a_shared_link():
    profile = load_profile(LLAMA_PROFILE).replace(duplex=False)
    trace = simulate(profile, "swap_only", iters=2)
    assert trace.busy_time("link") == pytest.approx(LLAMA_SWAP_SHARED_LINK_S)
    assert trace.traffic()["link"] == pytest.approx(2 * LLAMA_MIN_COMMUNICATION)


def test_swap_only_duplex_traffic():
    profile = load_profile(LLAMA_PROFILE)
    trace = simulate(profile, "swap_only", iters=2)
    traffic = trace.traffic()
    assert traffic["d2h"] == pytest.approx(LLAMA_MIN_COMMUNICATION)
    assert traffic["h2d"] == pytest.approx(LLAMA_MIN_COMMUNICATION)


def test_lsp_dependencies_hold():
    profile = load_profile(LLAMA_PROFILE)
    trace = simulate(profile, "lsp_layerwise", iters=3, d=LLAMA_LSP_D)
    by_key = {(e.label, e.layer, e.iteration): e for e in trace.events}
    for t in range(3):
        for layer in range(profile.n_layers):
            off = by_key["offload", layer, t]
            upd = by_key["upd", layer, t]
            up = by_key["upload", layer, t]
            apply = by_key["apply", layer, t]
            assert off.start >= by_key["bwd", layer, t].end
            assert upd.start >= off.end
            assert up.start >= upd.end
            assert apply.start >= up.end
            if t + 1 < 3:
                assert by_key["fwd", layer, t + 1].start >= apply.end


def test_llama_transition_layer_beats_pure_fcfs():
    profile = load_profile(LLAMA_PROFILE)
    n = profile.n_layers
    tl = transition_layer(profile, LLAMA_LSP_D)
    assert 0 <= tl <= n
    chosen = simulate(profile, "lsp_layerwise", iters=4, d=LLAMA_LSP_D, transition=tl)
    fcfs = simulate(profile, "lsp_layerwise", iters=4, d=LLAMA_LSP_D, transition=n)
    assert chosen.iter_time <= fcfs.iter_time * (1 + 1e-12)
    assert chosen.iter_time <= simulate(profile, "zero", iters=4).iter_time


def test_zero_delayed_overlaps_host_update():
    profile = uniform_profile(4, fwd_gpu=1.0, bwd_gpu=1.0, upd_cpu=3.0)
    delayed = simulate(profile, "zero_delayed", iters=8)
    assert delayed.iter_time == pytest.approx(closed_form_zero_delayed(profile))
    assert delayed.iter_time == pytest.approx(12.0)
    assert delayed.iter_time <= simulate(profile, "zero", iters=8).iter_time


def test_llama_zero_delayed_uses_both_link_directions():
    profile = load_profile(LLAMA_PROFILE)
    trace = simulate(profile, "zero_delayed", iters=4)
    assert {"d2h", "h2d"} <= set(trace.resources)
    assert "link" not in trace.resources
    assert trace.busy_time("d2h", 1) == pytest.approx(LLAMA_D2H_PER_ITER_S)
    assert trace.busy_time("h2d", 1) == pytest.approx(LLAMA_D2H_PER_ITER_S)
    assert closed_form_zero_delayed(profile) == pytest.approx(LLAMA_HOST_UPDATE_S)
    assert trace.iter_time == pytest.approx(closed_form_zero_delayed(profile), rel=0.02)

    shared = simulate(profile.replace(duplex=False), "zero_delayed", iters=2)
    assert "link" in shared.resources
    assert not {"d2h", "h2d"} & set(shared.resources)


def test_zero_delayed_duplex_beats_a_shared_link():
    profile = uniform_profile(4, fwd_gpu=0.5, bwd_gpu=0.5, grad_bytes=2.0, delta_bytes=2.0)
    shared = profile.replace(duplex=False)
    assert closed_form_zero_delayed(profile) == pytest.approx(8.0)
    assert closed_form_zero_delayed(shared) == pytest.approx(16.0)
    duplex_time = simulate(profile, "zero_delayed", iters=8).iter_time
    shared_time = simulate(shared, "zero_delayed", iters=8).iter_time
    assert duplex_time >= closed_form_zero_delayed(profile) - 1e-9
    assert shared_time >= closed_form_zero_delayed(shared) - 1e-9
    assert duplex_time < shared_time


def test_lcfs_layers():
    assert lcfs_layers(4, 0) == {0, 1, 2, 3}
    assert lcfs_layers(4, 4) == set()
    assert lcfs_layers(4, 1) == {0, 1, 2}  # the deepest layer goes first in backward
    assert lcfs_layers(4, 9) == set()


# closed forms


def test_closed_form_zero_examples():
    comm_bound = uniform_profile(
        3, fwd_gpu=1.0, bwd_gpu=1.0, upd_cpu=1.0, grad_bytes=10.0, delta_bytes=20.0
    )
    assert closed_form_zero(comm_bound) == pytest.approx(3.0 + 30.0 + 60.0)
    no_comm = uniform_profile(3, fwd_gpu=1.0, bwd_gpu=2.0, upd_cpu=4.0)
    assert closed_form_zero(no_comm) == pytest.approx(3.0 + 6.0 + 12.0)


def test_closed_form_lsp_examples():
    single = uniform_profile(
        1, fwd_gpu=1.0, bwd_gpu=2.0, upd_cpu=3.0, grad_bytes=4.0, delta_bytes=5.0
    )
    assert closed_form_lsp(single, None) == pytest.approx(1.0 + 2.0 + 4.0 + 5.0 + 3.0)
    host_bound = uniform_profile(
        8, fwd_gpu=1.0, bwd_gpu=1.0, upd_cpu=100.0, grad_bytes=1.0, delta_bytes=1.0
    )
    assert closed_form_lsp(host_bound, None) == pytest.approx(800.0)
    assert closed_form(host_bound, "lsp_layerwise") == closed_form_lsp(host_bound, None)


def test_transition_layer_examples():
    assert transition_layer(uniform_profile(5, bwd_gpu=1.0)) == 0
    # backward total equals one layer's pipeline
    balanced = uniform_profile(4, bwd_gpu=0.25, grad_bytes=0.5, delta_bytes=0.25, upd_cpu=0.25)
    assert transition_layer(balanced) == 4


def test_min_communication():
    profile = load_profile(LLAMA_PROFILE)
    assert min_communication(profile) == LLAMA_MIN_COMMUNICATION
    assert min_communication(profile.replace(mem_total=profile.mem_gpu)) == 0.0
    with pytest.raises(ContractViolation):
        min_communication(profile.replace(mem_total=1.0))


def test_cpu_layer_overhead():
    assert cpu_layer_overhead(load_profile(LLAMA_PROFILE)) == pytest.approx(
        LLAMA_CPU_LAYER_OVERHEAD_S
    )


def _check_agreement(profiles):
    for profile in profiles:
        zero = simulate(profile, "zero", iters=3)
        lsp = simulate(profile, "lsp_layerwise", iters=3, d=64)
        assert abs(zero.iter_time - closed_form_zero(profile)) <= 0.02 * zero.iter_time
        assert abs(lsp.iter_time - closed_form_lsp(profile, 64)) <= 0.02 * lsp.iter_time
        assert lsp.iter_time <= zero.iter_time


def test_random_profiles_agree_with_closed_forms():
    rng = np.random.default_rng(2024)
    _check_agreement(random_profile(rng) for _ in range(100))


@pytest.mark.slow
def test_random_profiles_agree_with_closed_forms_at_scale():
    rng = np.random.default_rng(1)
    _check_agreement(random_profile(rng) for _ in range(1000))


def _check_lower_bounds(profiles):
    for profile in profiles:
        zero = simulate(profile, "zero", iters=3)
        lsp = simulate(profile, "lsp_layerwise", iters=3, d=64)
        zero.check_exclusive()
        lsp.check_exclusive()
        assert zero.iter_time >= closed_form_zero(profile) * (1 - 1e-9)
        # the next forward of layer 0 waits for layer 0's whole pipeline
        first = lsp_layer_costs(profile, 0, 64)
        tot = totals(profile)
        pipeline = first.offload + first.upd + first.upload + profile.upd_gpu[0]
        assert lsp.iter_time >= (tot.fwd + tot.bwd + pipeline) * (1 - 1e-9)
        assert 0 <= lsp.transition <= profile.n_layers


def test_wide_profiles_respect_closed_form_lower_bounds():
    rng = np.random.default_rng(7)
    _check_lower_bounds(wide_profile(rng) for _ in range(200))


@pytest.mark.slow
def test_wide_profiles_respect_closed_form_lower_bounds_at_scale():
    rng = np.random.default_rng(8)
    _check_lower_bounds(wide_profile(rng) for _ in range(2000))


@pytest.mark.slow
def test_swap_traffic_meets_lower_bound():
    rng = np.random.default_rng(3)
    for _ in range(200):
        profile = random_profile(rng)
        mem_gpu = rng.uniform(1e9, 2e10)
        profile = profile.replace(
            mem_gpu=mem_gpu,
            mem_total=mem_gpu + rng.uniform(0, 5e10),
            duplex=bool(rng.random() < 0.5),
        )
        trace = simulate(profile, "swap_only", iters=2)
        bound = min_communication(profile)
        assert all(moved >= bound * (1 - 1e-9) for moved in trace.traffic().values())


# profiles and traces


def test_bundled_profiles_load():
    assert {"llama7b-4090", "gpt2-1.3b-a1000"} <= set(bundled_profiles())
    llama = load_profile(LLAMA_PROFILE)
    assert llama.n_layers == 32
    assert llama.upd_cpu == (0.06,) * 32
    laptop = load_profile("gpt2-1.3b-a1000.json")
    assert laptop.n_layers == 40
    with pytest.raises(FileNotFoundError):
        load_profile("no-such-profile")


def test_profile_round_trip_through_dict():
    profile = load_profile(LLAMA_PROFILE)
    again = profile_from_dict(profile.to_dict())
    assert again == profile


@pytest.mark.parametrize(
    "change",
    [
        {"units": {"time": "ms", "size": "bytes", "bandwidth": "bytes/s"}},
        {"bandwidth_d2h": 0},
        {"fwd_gpu": [0.1, 0.2]},
        {"bwd_gpu": -1.0},
        {"colour": "red"},
        {"n_layers": 0},
    ],
)
def test_profile_validation(change):
    data = load_profile(LLAMA_PROFILE).to_dict()
    data.update(change)
    with pytest.raises(InfeasibleProfile):
        profile_from_dict(data)


def test_profile_needs_units():
    data = load_profile(LLAMA_PROFILE).to_dict()
    del data["units"]
    with pytest.raises(InfeasibleProfile):
        profile_from_dict(data)


def test_exclusive_check_catches_overlap():
    trace = simulate(uniform_profile(2, fwd_gpu=1.0, bwd_gpu=1.0), "zero", iters=1)
    trace.check_exclusive()
    bad = trace.events[0]
    overlapping = type(trace)(
        trace.policy,
        trace.iters,
        (*trace.events, type(bad)(bad.resource, "ghost", 0, 0, bad.start, bad.end, 0.0)),
    )
    with pytest.raises(ContractViolation):
        overlapping.check_exclusive()


def test_trace_csv(tmp_path):
    profile = load_profile(LLAMA_PROFILE)
    trace = simulate(profile, "lsp_layerwise", iters=2, d=LLAMA_LSP_D)
    trace.save_csv(tmp_path / "trace.csv")
    assert (tmp_path / "trace.csv").read_text().splitlines()[-1].startswith("# iter_time=")
    frame = load_trace_frame(tmp_path / "trace.csv")
    assert len(frame) == len(trace.events)
    assert frame["end"].max() == trace.makespan


def test_summary():
    profile = load_profile(LLAMA_PROFILE)
    trace = simulate(profile, "lsp_layerwise", iters=3, d=LLAMA_LSP_D)
    summary = summarize(trace, profile, LLAMA_LSP_D)
    assert summary["closed_form"] == pytest.approx(closed_form_lsp(profile, LLAMA_LSP_D))
    assert abs(summary["closed_form_gap"]) <= 0.02
    assert summary["transition_layer"] == trace.transition
    assert summary["profile"] == LLAMA_PROFILE
    assert set(summary["utilization"]) == {"gpu", "cpu", "d2h", "h2d"}
