import numpy as np
import pytest

from lspkit.errors import ContractViolation, InvalidConfig, NumericAbort
from lspkit.projector import identity_pair, init_pair, to_dense
from lspkit.subspace_opt import (
    SubspaceOptState,
    adam_step,
    load_state,
    reproject_state,
    save_state,
    transfer_matrices,
)

from .consts import ADAM_ONE_STEP_DELTA


def test_adam_first_step_from_zero():
    state = SubspaceOptState.zeros(3)
    new, delta = adam_step(state, np.ones((3, 3)))
    assert new.step == 1
    assert np.allclose(delta, ADAM_ONE_STEP_DELTA, rtol=1e-12)
    assert state.step == 0  # input untouched


def test_adam_sign_follows_gradient():
    grad = np.array([[2.0, -3.0], [0.5, -0.1]])
    _, delta = adam_step(SubspaceOptState.zeros((2, 2)), grad)
    assert np.array_equal(np.sign(delta), np.sign(grad))


def test_adam_constant_gradient_settles_on_sign():
    grad = np.array([[0.3, -2.0], [5.0, -0.01]])
    state = SubspaceOptState.zeros((2, 2))
    for _ in range(1000):
        state, delta = adam_step(state, grad)
    assert state.step == 1000
    assert np.allclose(delta, np.sign(grad), atol=1e-3)


def test_adam_rectangular_state():
    state = SubspaceOptState.zeros((4, 2))
    rng = np.random.default_rng(0)
    for _ in range(3):
        state, delta = adam_step(state, rng.standard_normal((4, 2)))
    assert state.step == 3
    assert delta.shape == (4, 2)
    assert np.all(state.V >= 0)


def test_adam_rejects_bad_input():
    state = SubspaceOptState.zeros(2)
    with pytest.raises(ContractViolation):
        adam_step(state, np.ones((3, 3)))
    with pytest.raises(NumericAbort):
        adam_step(state, np.array([[np.nan, 0.0], [0.0, 0.0]]))


@pytest.mark.parametrize("key, value", [("beta1", 1.0), ("beta2", 0.0), ("eps", 0.0), ("lr", -1)])
def test_state_rejects_bad_hyperparameters(key, value):
    with pytest.raises(InvalidConfig):
        SubspaceOptState.zeros(2, **{key: value})


def test_transfer_matrices_match_dense():
    old = init_pair(6, 5, 4, 2, seed=0)
    new = init_pair(6, 5, 4, 2, seed=1)
    t_p, t_q = transfer_matrices(old, new)
    assert np.allclose(t_p, to_dense(new.P).T @ to_dense(old.P))
    assert np.allclose(t_q, to_dense(old.Q).T @ to_dense(new.Q))


def test_reprojection_between_identity_pairs_is_a_no_op():
    rng = np.random.default_rng(2)
    state = SubspaceOptState(rng.standard_normal((4, 4)), rng.random((4, 4)), step=7)
    moved = reproject_state(state, identity_pair(4), identity_pair(4))
    assert np.array_equal(moved.M, state.M)
    assert np.array_equal(moved.V, state.V)
    assert moved.step == 7


@pytest.mark.parametrize("mode", ["entrywise", "matrix"])
def test_reprojection_keeps_second_moment_non_negative(mode):
    rng = np.random.default_rng(3)
    old = init_pair(8, 7, 4, 2, seed=3)
    new = init_pair(8, 7, 4, 2, seed=4)
    state = SubspaceOptState(rng.standard_normal((4, 4)), rng.random((4, 4)), step=5)
    moved = reproject_state(state, old, new, mode)
    t_p, t_q = transfer_matrices(old, new)
    assert np.allclose(moved.M, t_p @ state.M @ t_q)
    assert np.all(moved.V >= 0.0)
    assert moved.step == 5


def test_reprojection_rejects_mismatched_widths():
    state = SubspaceOptState.zeros(4)
    with pytest.raises(ContractViolation):
        reproject_state(state, init_pair(6, 6, 4, 2, 0), init_pair(6, 6, 3, 2, 0))
    with pytest.raises(ContractViolation):
        reproject_state(state, init_pair(6, 6, 4, 2, 0), init_pair(6, 5, 4, 2, 0))
    with pytest.raises(ContractViolation):
        reproject_state(state, init_pair(6, 6, 3, 2, 0), init_pair(6, 6, 3, 2, 1))
    with pytest.raises(ContractViolation):
        reproject_state(state, init_pair(6, 6, 4, 2, 0), init_pair(6, 6, 4, 2, 1), "cubic")


def test_state_checkpoint(tmp_path):
    rng = np.random.default_rng(4)
    state = SubspaceOptState(rng.standard_normal((3, 3)), rng.random((3, 3)), 12, lr=3e-4)
    save_state(tmp_path / "opt", state)
    loaded = load_state(tmp_path / "opt")
    assert loaded.step == 12
    assert loaded.lr == 3e-4
    assert np.array_equal(loaded.M, state.M)
    assert np.array_equal(loaded.V, state.V)
