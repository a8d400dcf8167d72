import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adjointnet.errors import InvalidArgumentError, TrainingDivergedError
from adjointnet.mlp import (AdamState, OutputTransform, ParamModel, apply_adam_step, backprop,
                            forward, init_model, load_model, param_weight_jacobian, raw_output,
                            save_model)

LN10 = math.log(10.0)
IDENTITY = OutputTransform("affine", 1.0, 0.0)


def _linear(w, b, transform=IDENTITY):
    return ParamModel((1, 1), [np.array([[w]], dtype=float)], [np.array([b], dtype=float)],
                      transform, 0)


def test_glorot_bound_first_layer():
    m = init_model([1, 256, 256, 1], seed=0)
    assert np.all(np.abs(m.weights[0]) <= math.sqrt(6.0 / 257.0))
    assert all(np.all(b == 0) for b in m.biases)


def test_shapes_64_32():
    m = init_model([1, 64, 32, 1])
    assert [w.shape for w in m.weights] == [(64, 1), (32, 64), (1, 32)]


def test_init_deterministic():
    a = init_model([1, 16, 16, 1], seed=5)
    b = init_model([1, 16, 16, 1], seed=5)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert np.array_equal(forward(a, [1.0]), forward(b, [1.0]))


@pytest.mark.parametrize("sizes", [[], [3], [1, 0, 1], [1, -2]])
def test_bad_sizes(sizes):
    with pytest.raises(InvalidArgumentError):
        init_model(sizes)


def test_zero_net_gives_1e_minus_14():
    m = init_model([1, 8, 8, 1], OutputTransform("exp10_scaled", 1.0, -14.0))
    m.weights = [np.zeros_like(w) for w in m.weights]
    assert forward(m, [1.0])[0] == pytest.approx(1e-14, rel=1e-15)


def test_linear_hand_arithmetic():
    assert forward(_linear(2.0, 1.0), [3.0])[0] == 7.0


def test_input_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        forward(init_model([2, 4, 1]), [1.0])


def test_random_models_finite_positive():
    t = OutputTransform("exp10_scaled", 1.0, -14.0)
    for seed in range(1000):
        p = forward(init_model([1, 8, 4, 1], t, seed), [1.0])
        assert np.all(np.isfinite(p)) and np.all(p > 0)


def test_linear_jacobian_is_input():
    jw, jb = param_weight_jacobian(_linear(0.7, -0.2), [3.0])
    assert jw[0][0, 0, 0] == 3.0
    assert jb[0][0, 0] == 1.0


def test_exp10_chain_rule_one_layer():
    a, c, x = 0.3, -14.0, 2.5
    m = _linear(0.4, 0.1, OutputTransform("exp10_scaled", a, c))
    p = forward(m, [x])[0]
    jw, jb = param_weight_jacobian(m, [x])
    # raw = w*x + b, so d raw/dW = x and d raw/db = 1
    assert jw[0][0, 0, 0] == pytest.approx(p * LN10 * a * x, rel=1e-14)
    assert jb[0][0, 0] == pytest.approx(p * LN10 * a, rel=1e-14)


def _fd_jacobian(model, x, h=1e-6):
    """Central differences of forward() w.r.t. every weight and bias."""
    out_w, out_b = [], []
    for group, out in ((model.weights, out_w), (model.biases, out_b)):
        for k, arr in enumerate(group):
            d = np.empty((model.layer_sizes[-1],) + arr.shape)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                fp = forward(model, x)
                arr[idx] = orig - h
                fm = forward(model, x)
                arr[idx] = orig
                d[(slice(None),) + idx] = (fp - fm) / (2 * h)
            out.append(d)
    return out_w, out_b


def _fd_ok(a, f, fmag, h=1e-6, rtol=1e-6):
    """Relative agreement, with an absolute allowance for central-difference roundoff.

    Evaluating f to machine precision leaves an error of about eps*|f|/h in the
    difference quotient; entries smaller than that cannot be resolved by the oracle.
    """
    noise = 10.0 * np.finfo(float).eps * fmag / h
    return np.all(np.abs(a - f) <= rtol * np.maximum(np.abs(a), np.abs(f)) + noise)


@pytest.mark.parametrize("transform", [IDENTITY, OutputTransform("exp10_scaled", 0.1, -14.0),
                                       OutputTransform("affine", 0.5, 0.5)])
@pytest.mark.parametrize("sizes,x", [([1, 6, 5, 1], [1.0]), ([2, 4, 3], [0.3, -1.2])])
def test_jacobian_matches_fd(transform, sizes, x):
    m = init_model(sizes, transform, seed=11)
    m.biases = [np.random.default_rng(1).normal(0, 0.3, b.shape) for b in m.biases]
    jw, jb = param_weight_jacobian(m, x)
    fw, fb = _fd_jacobian(m, x)
    fmag = np.max(np.abs(forward(m, x)))
    for a, f in zip(jw + jb, fw + fb):
        assert _fd_ok(a, f, fmag)


@given(st.integers(0, 10_000))
def test_backprop_scalar_function_fd(seed):
    """d/dW of a weighted sum of p matches central differences."""
    m = init_model([1, 5, 4, 2], OutputTransform("exp10_scaled", 0.2, -1.0), seed)
    c = np.random.default_rng(seed).normal(size=2)
    gw, gb = backprop(m, [1.0], c)
    fw, fb = _fd_jacobian(m, [1.0])
    fmag = np.sum(np.abs(c * forward(m, [1.0])))
    for g, f in zip(gw + gb, fw + fb):
        assert _fd_ok(g, np.tensordot(c, f, axes=1), fmag)


def test_preset_size_jacobian_spot_fd():
    m = init_model([1, 256, 256, 1], OutputTransform("exp10_scaled", 0.1, -14.0), 0)
    jw, _ = param_weight_jacobian(m, [1.0])
    p0 = forward(m, [1.0])[0]
    rng = np.random.default_rng(0)
    for _ in range(20):
        k = int(rng.integers(3))
        idx = tuple(int(rng.integers(s)) for s in m.weights[k].shape)
        orig = m.weights[k][idx]
        h = 1e-6
        m.weights[k][idx] = orig + h
        fp = forward(m, [1.0])[0]
        m.weights[k][idx] = orig - h
        fm = forward(m, [1.0])[0]
        m.weights[k][idx] = orig
        fd = (fp - fm) / (2 * h)
        assert _fd_ok(jw[k][0][idx], fd, p0)


def test_adam_zero_gradient_noop():
    m = init_model([1, 4, 1], seed=2)
    gw = [np.zeros_like(w) for w in m.weights]
    gb = [np.zeros_like(b) for b in m.biases]
    new = apply_adam_step(m, gw, gb, AdamState(), 1e-3)
    for a, b in zip(m.weights + m.biases, new.weights + new.biases):
        assert np.array_equal(a, b)


def test_adam_first_step_closed_form():
    m = init_model([1, 4, 3, 1], seed=2)
    rng = np.random.default_rng(4)
    gw = [rng.normal(size=w.shape) for w in m.weights]
    gb = [rng.normal(size=b.shape) for b in m.biases]
    lr, eps = 1e-3, 1e-8
    new = apply_adam_step(m, gw, gb, AdamState(eps=eps), lr)
    for old, upd, g in zip(m.weights + m.biases, new.weights + new.biases, gw + gb):
        np.testing.assert_allclose(upd - old, -lr * g / (np.abs(g) + eps), rtol=1e-9, atol=1e-18)


def test_adam_constant_gradient_drift():
    m = _linear(0.0, 0.0)
    state = AdamState()
    g = [np.array([[0.5]])], [np.array([-2.0])]
    ws, bs = [0.0], [0.0]
    for _ in range(50):
        m = apply_adam_step(m, *g, state, 1e-2)
        ws.append(m.weights[0][0, 0])
        bs.append(m.biases[0][0])
    assert np.all(np.diff(ws) < 0)
    assert np.all(np.diff(bs) > 0)


def test_adam_nan_gradient():
    m = _linear(1.0, 0.0)
    with pytest.raises(TrainingDivergedError):
        apply_adam_step(m, [np.array([[np.nan]])], [np.array([0.0])], AdamState())


def test_adam_shape_mismatch():
    m = _linear(1.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        apply_adam_step(m, [np.zeros((2, 1))], [np.zeros(1)], AdamState())


def test_transform_inverse():
    for t in (OutputTransform("exp10_scaled", 0.1, -14.0), OutputTransform("affine", 0.5, 0.5)):
        raw = np.array([-3.0, 0.0, 2.5])
        np.testing.assert_allclose(t.inverse(t(raw)), raw, rtol=1e-12, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    m = init_model([1, 7, 3, 1], OutputTransform("affine", 0.5, 0.5), 9)
    m.biases = [b + 0.1 / 3.0 for b in m.biases]
    path = tmp_path / "model.csv"
    save_model(path, m)
    back = load_model(path)
    assert back.layer_sizes == m.layer_sizes and back.transform == m.transform
    for a, b in zip(m.weights + m.biases, back.weights + back.biases):
        assert np.array_equal(a, b)
    assert np.array_equal(raw_output(back, [1.0]), raw_output(m, [1.0]))
