from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import draw, fd_relative_errors
from metanav.nn import MLP, Adam, forward, init_params, mlp_apply, mlp_grad


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("n_in,n_out,act", [(80, 7, "tanh"), (87, 1, "linear")],
                         ids=["actor", "critic"])
def test_gradients_match_finite_differences(seed, n_in, n_out, act):
    rng = np.random.default_rng(seed)
    params, x, up = draw(rng, n_in, n_out)
    assert max(fd_relative_errors(params, x, up, act, rng, coords_per_tensor=20)) < 1e-4


def test_input_gradient_matches_finite_differences(rng):
    params, x, up = draw(rng, 10, 3, hidden=(16, 16), batch=1)
    _, acts = forward(params, x, "tanh")
    from metanav.nn import backward
    _, gx = backward(params, acts, up, "tanh")
    for j in range(10):
        e = np.zeros_like(x)
        e[0, j] = 1e-6
        fd = (np.sum(up * mlp_apply(params, x + e, "tanh"))
              - np.sum(up * mlp_apply(params, x - e, "tanh"))) / 2e-6
        assert gx[0, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_zero_weights_give_zero_output(rng):
    params = [np.zeros_like(p) for p in init_params((80, 256, 256, 7), rng)]
    assert np.all(mlp_apply(params, rng.normal(size=(3, 80))) == 0.0)
    assert np.all(mlp_apply(params, rng.normal(size=(3, 80)), "tanh") == 0.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-10, 10), st.integers(0, 1000))
def test_upstream_linearity(c, seed):
    rng = np.random.default_rng(seed)
    params, x, up = draw(rng, 12, 3, hidden=(8, 8))
    g1 = mlp_grad(params, x, up, "tanh")
    gc = mlp_grad(params, x, c * up, "tanh")
    for a, b in zip(g1, gc):
        np.testing.assert_allclose(b, c * a, rtol=1e-12, atol=1e-12)


def test_actor_output_bounded(rng):
    net = MLP.create(80, 7, rng, output_activation="tanh")
    out = net(rng.normal(scale=100.0, size=(50, 80)))
    assert np.all(np.abs(out) <= 1.0)


def test_shape_errors(rng):
    params = init_params((4, 3, 2), rng)
    with pytest.raises(ValueError):
        forward(params, np.zeros((1, 5)))
    _, acts = forward(params, np.zeros((1, 4)))
    from metanav.nn import backward
    with pytest.raises(ValueError):
        backward(params, acts, np.zeros((1, 3)))


def test_soft_update(rng):
    a = MLP.create(3, 2, rng, hidden=(4,))
    b = MLP.create(3, 2, rng, hidden=(4,))
    t = a.copy()
    t.soft_update_from(b, 1.0)
    for p, q in zip(t.params, b.params):
        np.testing.assert_array_equal(p, q)
    t = a.copy()
    t.soft_update_from(b, 0.25)
    for p, pa, pb in zip(t.params, a.params, b.params):
        np.testing.assert_allclose(p, 0.75 * pa + 0.25 * pb, rtol=1e-15)


def test_adam_first_step_is_lr_times_sign():
    p = [np.array([1.0, -2.0, 3.0])]
    opt = Adam(p, lr=0.1)
    opt.step(p, [np.array([5.0, -0.5, 0.0])])
    np.testing.assert_allclose(p[0], [0.9, -1.9, 3.0], atol=1e-7)
    state = opt.state()
    other = Adam(p, lr=0.1)
    other.load_state(state)
    assert other.t == 1
    np.testing.assert_array_equal(other.m[0], opt.m[0])
