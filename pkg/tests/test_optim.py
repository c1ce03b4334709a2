import numpy as np
import pytest

from drmea.optim import OptimizerState, adam_step, annealed_lr, sgd_momentum_step


def test_adam_zero_grad_keeps_params():
    p = {"w": np.array([[1.0, -2.0]])}
    new, state = adam_step(p, {"w": np.zeros((1, 2))}, OptimizerState())
    assert np.array_equal(new["w"], p["w"]) and state.t == 1


def test_adam_first_step_closed_form():
    eps = 1e-8
    new, _ = adam_step({"w": np.array([[0.5]])}, {"w": np.array([[1.0]])}, OptimizerState(), lr=0.1, eps_opt=eps)
    assert new["w"][0, 0] == 0.5 - 0.1 * (1 / (1 + eps))


def test_adam_three_steps_vs_loop(rng):
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    p = {"w": rng.standard_normal((2, 3))}
    grads = [rng.standard_normal((2, 3)) for _ in range(3)]
    state = OptimizerState()
    cur = p
    for g in grads:
        cur, state = adam_step(cur, {"w": g}, state, lr, b1, b2, eps)
    w, m, v = p["w"].copy(), np.zeros((2, 3)), np.zeros((2, 3))
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    assert np.array_equal(cur["w"], w)
    assert state.m["w"].shape == p["w"].shape and state.v["w"].shape == p["w"].shape


def test_annealed_lr():
    assert annealed_lr(0.003, 0.0) == 0.003
    assert annealed_lr(0.003, 1.0, 10, 0.75) == pytest.approx(0.003 * 11 ** -0.75)
    assert 11 ** -0.75 == pytest.approx(0.16556, abs=1e-5)


def test_sgd_velocity_drift_only():
    p = {"w": np.array([[1.0]])}
    state = OptimizerState(m={"w": np.array([[0.2]])})
    new, st = sgd_momentum_step(p, {"w": np.zeros((1, 1))}, state, 0.5, weight_decay=0.0, momentum=0.9)
    assert new["w"][0, 0] == pytest.approx(1.0 + 0.9 * 0.2)
    assert st.m["w"][0, 0] == pytest.approx(0.18)


def test_sgd_step_with_decay():
    p = {"w": np.array([[2.0]])}
    new, _ = sgd_momentum_step(p, {"w": np.array([[1.0]])}, OptimizerState(), 0.0, lr0=0.1,
                               momentum=0.9, weight_decay=0.5)
    assert new["w"][0, 0] == pytest.approx(2.0 - 0.1 * (1.0 + 1.0))


def test_sgd_progress_domain():
    with pytest.raises(ValueError):
        sgd_momentum_step({}, {}, OptimizerState(), 1.5)
