import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctxfusion import tensor as T
from ctxfusion.optim import (
    DEFAULT_LR,
    KINDS,
    NonFiniteGradientError,
    Optimizer,
    make_state,
    mse,
    mse_loss,
    optimizer_step,
    rmse,
)

EPS = 1e-8


def one_step(kind, g, theta=0.0, lr=None):
    th = np.array([theta])
    optimizer_step(make_state(kind, lr=lr), [th], [np.array([g])])
    return th[0] - theta


def test_default_learning_rates():
    assert DEFAULT_LR == {"adam": 0.001, "nadam": 0.001, "adamax": 0.002}


def test_adamax_single_step(backend):
    state = make_state("adamax")
    th = np.zeros(1)
    optimizer_step(state, [th], [np.ones(1)])
    assert state.t == 1
    np.testing.assert_allclose(state.m[0], [0.1], rtol=0, atol=1e-15)
    np.testing.assert_allclose(state.v[0], [1.0], rtol=0, atol=0)
    assert abs(th[0] - (-0.002)) < 1e-12


def test_adam_single_step(backend):
    assert abs(one_step("adam", 1.0) - (-0.001 / (1 + EPS))) < 1e-12


def test_nadam_single_step(backend):
    # m = 0.1, v = 0.001: m_bar = 0.9 * 0.1 / (1 - 0.81) + 0.1 / 0.1, v_hat = 1
    m_bar = 0.09 / 0.19 + 1.0
    assert abs(one_step("nadam", 1.0) - (-0.001 * m_bar / (1 + EPS))) < 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_zero_gradient_from_fresh_state(kind, backend):
    assert one_step(kind, 0.0, theta=0.7) == 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_zero_learning_rate_is_bit_identical(kind, backend, rng):
    th = rng.normal(size=20)
    before = th.copy()
    state = make_state(kind, lr=0.0)
    for _ in range(3):
        optimizer_step(state, [th], [rng.normal(size=20)])
    assert np.array_equal(th, before)


def test_adamax_u_never_grows_under_small_gradients(backend):
    state = make_state("adamax")
    th = np.zeros(3)
    optimizer_step(state, [th], [np.array([4.0, -4.0, 2.0])])
    for _ in range(50):
        u_before = state.v[0].copy()
        g = np.array([0.5, -0.5, 0.1])
        assert np.all(state.beta2 * u_before >= np.abs(g))
        optimizer_step(state, [th], [g])
        assert np.all(state.v[0] <= u_before)


def test_non_finite_gradient_names_parameter():
    with pytest.raises(NonFiniteGradientError, match="head.out.W"):
        optimizer_step(make_state("adam"), [np.zeros(2)], [np.array([1.0, np.nan])], ["head.out.W"])


def test_bad_hyperparameters():
    with pytest.raises(ValueError):
        make_state("sgd")
    with pytest.raises(ValueError):
        make_state("adam", beta1=1.0)


def test_optimizer_skips_missing_grads():
    w = T.tensor(np.ones(2), requires_grad=True)
    opt = Optimizer({"w": w}, "adam")
    opt.step()
    assert np.array_equal(w.data, np.ones(2))


def test_losses():
    assert mse([0.2, 0.4], [0.2, 0.4]) == 0.0
    assert mse([0, 1], [1, 0]) == 1.0 and rmse([0, 1], [1, 0]) == 1.0
    assert mse([0, 0.5], [0.5, 1]) == 0.25 and rmse([0, 0.5], [0.5, 1]) == 0.5
    with pytest.raises(ValueError):
        mse([1, 2], [1])


def test_mse_loss_gradient(rng):
    pred = T.tensor(rng.normal(size=(5, 1)), requires_grad=True)
    y = rng.normal(size=5)
    assert T.grad_check(lambda p: mse_loss(p, y), pred) < 1e-8


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-3, 3)), st.integers(0, 2**31))
def test_rmse_squared_is_mse(y, seed):
    y_hat = np.random.default_rng(seed).normal(size=y.shape)
    assert abs(rmse(y, y_hat) ** 2 - mse(y, y_hat)) < 1e-12
