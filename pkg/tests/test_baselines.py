import numpy as np
import pytest

from lspkit.baselines import (
    equal_memory_rank,
    galore_basis,
    galore_project,
    gradient_corpus,
    heldout_bias_galore,
    memory_estimate,
    train_baseline,
)
from lspkit.errors import ContractViolation
from lspkit.toy_models import SyntheticTask, make_student, make_task
from lspkit.trainer import TrainConfig

from .consts import LSP_MEMORY_2048_R4, SMALL_TASK_DIMS

SMALL_TASK = SyntheticTask(dims=SMALL_TASK_DIMS, n_train=128, n_eval=32, seed=5)


def test_lsp_memory_example():
    estimate = memory_estimate("lsp", 2048, 2048, 4)
    assert estimate.total == LSP_MEMORY_2048_R4
    assert estimate.opt_state_count == 0


@pytest.mark.parametrize("m, n, r, beta", [(64, 64, 4, 3), (100, 30, 7, 3), (16, 48, 2, 2)])
def test_memory_formulas(m, n, r, beta):
    assert memory_estimate("full", m, n, r, beta).total == (1 + beta) * m * n
    assert memory_estimate("lora", m, n, r, beta).total == m * n + beta * (m + n) * r
    assert memory_estimate("galore", m, n, r, beta).total == m * n + (m + beta * n) * r
    assert memory_estimate("lsp", m, n, r, beta).total == m * n + (m + n) * r


def test_memory_ordering_at_low_rank():
    totals = {k: memory_estimate(k, 512, 512, 8).total for k in ("full", "lora", "galore", "lsp")}
    assert totals["lsp"] < totals["galore"] < totals["lora"] < totals["full"]


def test_memory_rejects_bad_input():
    with pytest.raises(ContractViolation):
        memory_estimate("lsp", 0, 4, 1)
    with pytest.raises(ContractViolation):
        memory_estimate("adafactor", 4, 4, 1)  # type:ignore


def test_equal_memory_rank():
    # LSP with r=4 on 64x64 stores 512 extra scalars, a GaLore rank costs 64 + 3*64
    assert equal_memory_rank(64, 64, 4) == 2
    assert equal_memory_rank(8, 8, 100) == 8


def test_galore_projection_is_best_rank_k():
    g = np.random.default_rng(0).standard_normal((9, 6))
    s = np.linalg.svd(g, compute_uv=False)
    for k in (1, 3, 6):
        proj = galore_project(g, k)
        assert proj.P.shape == (9, k)
        assert np.allclose(proj.P.T @ proj.P, np.eye(k), atol=1e-10)
        residual = np.linalg.norm(g - proj.P @ proj.compressed) ** 2
        assert residual == pytest.approx(np.sum(s[k:] ** 2), abs=1e-9)
    with pytest.raises(ContractViolation):
        galore_project(g, 7)


def test_galore_basis_over_corpus():
    corpus = list(np.random.default_rng(1).standard_normal((4, 6, 5)))
    assert heldout_bias_galore(galore_basis(corpus, 6), corpus) == pytest.approx(0.0, abs=1e-10)
    assert 0.0 < heldout_bias_galore(galore_basis(corpus, 2), corpus) < 1.0
    with pytest.raises(ContractViolation):
        galore_basis([], 2)
    with pytest.raises(ContractViolation):
        heldout_bias_galore(np.eye(6)[:, :2], [np.zeros((6, 5))])


@pytest.mark.parametrize("kind", ["full", "lora", "galore"])
def test_baselines_train(kind):
    cfg = TrainConfig(d=4, r=2, rank=2, lr=1e-2, total_steps=40, check_freq=10, eval_every=10)
    net = make_student(SMALL_TASK)
    history = train_baseline(kind, net, make_task(SMALL_TASK), cfg)
    assert history.method == kind
    assert len(history) == 40
    assert history.final_eval_loss < history.eval_loss[0]
    if kind == "galore":
        assert [s for s, r in zip(history.steps, history.refreshed) if r] == [0, 10, 20, 30]


@pytest.mark.parametrize("steps", [1, 5])
def test_lora_moves_weights_by_a_low_rank_product(steps):
    cfg = TrainConfig(rank=2, lr=1e-2, total_steps=steps)
    net = make_student(SMALL_TASK)
    before = [w.copy() for w in net.weights]
    train_baseline("lora", net, make_task(SMALL_TASK), cfg)
    # W0 stays frozen, so W - W0 = ABᵀ has rank at most 2 however far A and B move
    for w0, w in zip(before, net.weights):
        s = np.linalg.svd(w - w0, compute_uv=False)
        assert s[0] > 0.0
        # subtracting W0 back out leaves rounding at the scale of W0, not of ABᵀ
        assert np.all(s[2:] <= 1e-8 * max(s[0], np.abs(w0).max()))


def test_baseline_rank_must_fit():
    cfg = TrainConfig(rank=7, total_steps=1)
    with pytest.raises(ContractViolation):
        train_baseline("lora", make_student(SMALL_TASK), make_task(SMALL_TASK), cfg)
    with pytest.raises(ContractViolation):
        train_baseline("sgd", make_student(SMALL_TASK), make_task(SMALL_TASK), cfg)  # type:ignore


def test_gradient_corpus():
    cfg = TrainConfig(seed=2)
    data = make_task(SMALL_TASK)
    corpus = gradient_corpus(make_student(SMALL_TASK), data, cfg, steps=10, every=3)
    assert len(corpus) == len(SMALL_TASK_DIMS) - 1
    assert all(len(layer) == 4 for layer in corpus)  # steps 0, 3, 6, 9
    assert [g.shape for g in (layer[0] for layer in corpus)] == make_student(SMALL_TASK).shapes
    again = gradient_corpus(make_student(SMALL_TASK), data, cfg, steps=10, every=3)
    assert all(np.array_equal(a, b) for a, b in zip(corpus[1], again[1]))
    with pytest.raises(ContractViolation):
        gradient_corpus(make_student(SMALL_TASK), data, cfg, steps=0)


@pytest.mark.slow
def test_full_rank_lora_matches_full_adam():
    task = SyntheticTask(dims=(16, 16, 16), n_train=512, n_eval=128)
    cfg = TrainConfig(rank=16, lr=3e-3, total_steps=4000, eval_every=500)
    data = make_task(task)
    full = train_baseline("full", make_student(task), data, cfg)
    lora = train_baseline("lora", make_student(task), data, cfg)
    assert lora.final_eval_loss <= 1.05 * full.final_eval_loss
