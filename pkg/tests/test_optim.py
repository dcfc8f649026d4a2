import numpy as np
import pytest

from vym.checkpoint import load_params, restore_into, save_params
from vym.optim import OptimizerState, optimizer_step, zero_grads
from vym.tensor import Parameter


def test_zero_grad_leaves_parameter_unchanged():
    p = Parameter("w", np.array([1.0, -2.0]))
    p.tensor.grad = np.zeros(2)
    state = OptimizerState()
    optimizer_step([p], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_step_count_increments_once_per_call():
    p = Parameter("w", np.ones(3))
    p.tensor.grad = np.ones(3)
    state = OptimizerState()
    for expected in (1, 2, 3):
        optimizer_step([p], state)
        assert state.step_count == expected


def test_missing_grad_rejected():
    p = Parameter("w", np.ones(2))
    with pytest.raises(ValueError, match="no gradient"):
        optimizer_step([p], OptimizerState())


def test_grads_unchanged_by_step_and_cleared_explicitly():
    p = Parameter("w", np.ones(2))
    p.tensor.grad = np.array([0.5, -0.5])
    optimizer_step([p], OptimizerState())
    np.testing.assert_array_equal(p.grad, [0.5, -0.5])
    zero_grads([p])
    assert p.grad is None


def test_quadratic_bowl_convergence():
    # f(w) = w^2, grad = 2w; 200 Adam steps at lr 0.1 from w0=1
    p = Parameter("w", np.array([1.0]))
    state = OptimizerState(learning_rate=0.1)
    for _ in range(200):
        p.tensor.grad = 2.0 * p.data
        optimizer_step([p], state)
        p.zero_grad()
    assert abs(p.data[0]) < 0.05


def test_moment_buffers_match_parameter_shapes():
    p = Parameter("w", np.ones((2, 3)))
    p.tensor.grad = np.ones((2, 3))
    state = OptimizerState()
    optimizer_step([p], state)
    assert state.m["w"].shape == (2, 3)
    assert state.v["w"].shape == (2, 3)


def test_checkpoint_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(11)
    params = [
        Parameter("encoder0.conv2.kernel", rng.normal(size=(4, 3, 3, 3))),
        Parameter("head.out.bias", rng.normal(size=1) * 1e-17),
    ]
    path = tmp_path / "ckpt.npz"
    save_params(path, params)
    loaded = load_params(path)
    for p in params:
        assert loaded[p.name].dtype == np.float64
        assert np.array_equal(
            loaded[p.name].view(np.uint64), p.data.view(np.uint64)
        ), "round-trip must be bitwise"


def test_restore_into_validates_shape(tmp_path):
    p = Parameter("w", np.zeros((2, 2)))
    save_params(tmp_path / "c.npz", {"w": np.ones((3, 3))})
    with pytest.raises(ValueError, match="shape"):
        restore_into([p], load_params(tmp_path / "c.npz"))
    save_params(tmp_path / "c2.npz", {"w": np.full((2, 2), 7.0)})
    restore_into([p], load_params(tmp_path / "c2.npz"))
    np.testing.assert_array_equal(p.data, 7.0)
