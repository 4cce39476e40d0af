import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdfo.numerics import (AdamWState, NonFiniteError, ShapeError, Tape, adamw_step, central_difference_grad,
                           rms_norm)


def test_square_gradient():
    tape = Tape()
    w = tape.param(3.0, "w")
    out = tape.mul(w, w)
    assert tape.backward(out)["w"] == pytest.approx(6.0)


def test_constant_output_has_zero_gradient():
    tape = Tape()
    w = tape.param(3.0, "w")
    out = tape.sum(tape.const(np.array([1.0, 2.0])))
    assert tape.backward(out)["w"] == 0.0


def test_consts_are_not_reported():
    tape = Tape()
    w = tape.param(np.ones(2), "w")
    k = tape.const(np.array([2.0, 3.0]))
    g = tape.backward(tape.sum(tape.mul(w, k)))
    assert set(g) == {"w"}
    np.testing.assert_array_equal(g["w"], [2.0, 3.0])


def test_non_scalar_output_rejected():
    tape = Tape()
    w = tape.param(np.ones(3), "w")
    with pytest.raises(ShapeError):
        tape.backward(tape.tanh(w))


def test_nan_in_forward_rejected():
    tape = Tape()
    with pytest.raises(NonFiniteError):
        tape.param(np.array([1.0, np.nan]), "w")
    w = tape.param(np.array([1000.0]), "w")
    with pytest.raises(NonFiniteError):
        tape.exp(w)
    with pytest.raises(NonFiniteError):
        tape.log(tape.param(np.array([-1.0]), "v"))


def test_shape_mismatch_rejected():
    tape = Tape()
    with pytest.raises(ShapeError):
        tape.add(tape.param(np.ones(2), "a"), tape.param(np.ones(3), "b"))
    with pytest.raises(ShapeError):
        tape.affine(tape.const(np.ones((2, 3))), tape.param(np.ones((2, 2)), "W"), tape.param(np.ones(2), "b"))


def _two_layer(tape, p, x):
    # 17 parameters: W0 (2x3), b0 (3), W1 (3x2), b1 (2)
    W0 = tape.param(p[:6].reshape(2, 3), "W0")
    b0 = tape.param(p[6:9], "b0")
    W1 = tape.param(p[9:15].reshape(3, 2), "W1")
    b1 = tape.param(p[15:17], "b1")
    h = tape.tanh(tape.affine(tape.const(x), W0, b0))
    return tape.sqnorm(tape.affine(h, W1, b1))


def _flat(g):
    return np.concatenate([g["W0"].ravel(), g["b0"], g["W1"].ravel(), g["b1"]])


def test_two_layer_net_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(10):
        p = rng.standard_normal(17)
        x = rng.standard_normal((4, 2))
        tape = Tape()
        auto = _flat(tape.backward(_two_layer(tape, p, x)))

        def f(q):
            t = Tape()
            return float(_two_layer(t, q, x).value)

        fd = central_difference_grad(f, p, 1e-5)
        assert np.linalg.norm(auto - fd) / np.linalg.norm(fd) < 1e-4


def test_every_primitive_matches_finite_differences():
    rng = np.random.default_rng(1)
    p0 = rng.uniform(0.2, 1.0, 5)

    def build(tape, p):
        a = tape.param(p, "p")
        y = tape.add(tape.sigmoid(a), tape.exp(tape.scale(a, 0.5)))
        y = tape.sub(tape.mul(y, tape.log(a)), tape.tanh(a))
        return tape.add(tape.sum(y), tape.inner(a, np.arange(5.0)))

    tape = Tape()
    auto = tape.backward(build(tape, p0))["p"]
    fd = central_difference_grad(lambda q: float(build(Tape(), q).value), p0)
    np.testing.assert_allclose(auto, fd, rtol=1e-7)


def test_backward_is_linear():
    rng = np.random.default_rng(2)
    p = rng.standard_normal(17)
    x = rng.standard_normal((3, 2))
    alpha, beta = 0.7, -1.3

    def grads(build):
        tape = Tape()
        return _flat(tape.backward(build(tape)))

    def f(tape):
        return _two_layer(tape, p, x)

    def g(tape):
        return tape.sum(tape.tanh(tape.param(p[:6].reshape(2, 3), "W0")))

    def combo(tape):
        a = _two_layer(tape, p, x)
        W0 = [n for n in tape.nodes if n.key == "W0"][0]
        b = tape.sum(tape.tanh(W0))
        return tape.add(tape.scale(a, alpha), tape.scale(b, beta))

    gf = grads(f)
    tape = Tape()
    gg = tape.backward(g(tape))["W0"].ravel()
    expected = alpha * gf
    expected[:6] += beta * gg
    np.testing.assert_allclose(grads(combo), expected, atol=1e-12, rtol=0)


def test_replay_is_bit_exact():
    rng = np.random.default_rng(3)
    tape = Tape()
    out = _two_layer(tape, rng.standard_normal(17), rng.standard_normal((5, 2)))
    assert tape.replay(out).tobytes() == out.value.tobytes()
    mid = tape.nodes[6]
    assert tape.replay(mid).tobytes() == mid.value.tobytes()


def test_seed_scales_gradient():
    tape = Tape()
    w = tape.param(2.0, "w")
    out = tape.mul(w, w)
    assert tape.backward(out, seed=3.0)["w"] == pytest.approx(12.0)


# AdamW


def test_adamw_zero_grad_no_decay_is_noop():
    p = np.array([1.0, -2.0])
    new, st = adamw_step(p, np.zeros(2), AdamWState.zeros(2, lr=0.1))
    np.testing.assert_array_equal(new, p)
    assert st.step == 1


def test_adamw_first_step_from_zero():
    new, _ = adamw_step(np.zeros(1), np.ones(1), AdamWState.zeros(1, lr=0.1))
    # m_hat = v_hat = 1, so the step is lr * 1 / (1 + 1e-8)
    assert new[0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-15)


def test_adamw_decoupled_decay():
    new, _ = adamw_step(np.ones(1), np.zeros(1), AdamWState.zeros(1, lr=0.1, weight_decay=0.01))
    assert new[0] == pytest.approx(0.999, abs=1e-15)


def test_adamw_matches_reference_loop():
    # scalar textbook recursion as an independent oracle
    rng = np.random.default_rng(4)
    gs = rng.standard_normal(20)
    lr, b1, b2, eps, wd = 0.01, 0.8, 0.99, 1e-8, 0.1
    theta, m, v = 0.5, 0.0, 0.0
    p = np.array([0.5])
    st = AdamWState.zeros(1, lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
    for k, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * wd * theta - lr * (m / (1 - b1**k)) / (math.sqrt(v / (1 - b2**k)) + eps)
        p, st = adamw_step(p, np.array([g]), st)
    assert p[0] == pytest.approx(theta, rel=1e-12)
    assert st.step == 20


def test_adamw_rejects_bad_input():
    st = AdamWState.zeros(2)
    with pytest.raises(ShapeError):
        adamw_step(np.zeros(2), np.zeros(3), st)
    with pytest.raises(NonFiniteError):
        adamw_step(np.zeros(2), np.array([np.inf, 0.0]), st)


def test_adamw_deterministic_and_pure():
    rng = np.random.default_rng(5)
    p, g = rng.standard_normal(10), rng.standard_normal(10)
    st = AdamWState.zeros(10)
    a, sa = adamw_step(p, g, st)
    b, sb = adamw_step(p, g, st)
    assert a.tobytes() == b.tobytes() and sa.m.tobytes() == sb.m.tobytes()
    assert st.step == 0 and not st.m.any()


# rms norm


def test_rms_norm_examples():
    assert rms_norm([1, 1, 1, 1]) == 1.0
    assert rms_norm(np.zeros(5)) == 0.0
    assert rms_norm([3, 4]) == pytest.approx(math.sqrt(12.5))
    with pytest.raises(ValueError):
        rms_norm([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(-10, 10))
def test_rms_norm_is_absolutely_homogeneous(xs, a):
    x = np.array(xs)
    assert rms_norm(a * x) == pytest.approx(abs(a) * rms_norm(x), rel=1e-9, abs=1e-9)
