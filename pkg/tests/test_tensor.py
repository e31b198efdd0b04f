import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from avisam import tensor as tn
from avisam.gradsuite import op_cases
from avisam.tensor import (GradientContractError, InputTooShortError, Tensor, backward, check_parameters,
                           finite_diff_check)

CASES = op_cases(np.random.default_rng(0))

floats = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("name", list(CASES))
def test_op_gradients_match_central_differences(name):
    fn, inputs = CASES[name]
    report = check_parameters(fn, inputs, tol=1e-4, max_entries=None)
    assert report.passed, str(report)


def test_negative_control_detects_wrong_gradient():
    x = Tensor(np.linspace(-1, 1, 5))
    f = lambda t: tn.tsum(tn.mul(t, t))
    assert finite_diff_check(f, x).passed
    bad = finite_diff_check(f, x, analytic=3.0 * x.data)
    assert not bad.passed
    assert bad.max_error > 0.1


def test_gradcheck_requires_float64():
    with pytest.raises(TypeError):
        finite_diff_check(lambda t: tn.tsum(t), Tensor(np.ones(3), dtype=np.float32))


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GradientContractError):
        backward(tn.mul(x, 2.0))


def test_gradients_accumulate_until_cleared():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward(tn.tsum(tn.mul(x, x)))
    backward(tn.tsum(tn.mul(x, x)))
    np.testing.assert_allclose(x.grad, 4 * x.data)
    tn.zero_grad([x])
    assert x.grad is None or not np.any(x.grad)


def test_shared_subexpression_gets_both_paths():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)
    y = tn.tanh(x)
    backward(tn.tsum(tn.add(tn.mul(y, y), y)))
    t = np.tanh(x.data)
    np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t), rtol=1e-12)


@given(hnp.arrays(np.float64, (3, 4), elements=floats), hnp.arrays(np.float64, (4,), elements=floats))
def test_broadcast_gradient_sums_over_expanded_axis(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    backward(tn.tsum(tn.add(ta, tb)))
    np.testing.assert_array_equal(tb.grad, np.full(4, 3.0))
    np.testing.assert_array_equal(ta.grad, np.ones((3, 4)))


def test_trailing_axis_broadcast_is_rejected():
    with pytest.raises(ValueError):
        tn.add(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 1))))


@given(hnp.arrays(np.float64, (2, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(x, c):
    p = tn.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(tn.softmax(Tensor(x + c)).data, p, atol=1e-10)


def test_layer_norm_rejects_nonpositive_eps():
    x, g, b = Tensor(np.ones((2, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        tn.layer_norm(x, g, b, eps=0.0)


def test_layer_norm_output_moments(rng):
    x = Tensor(rng.standard_normal((4, 16)) * 5 + 2)
    y = tn.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 1, atol=1e-4)


def test_conv1d_matches_direct_sum(rng):
    x = rng.standard_normal((2, 17))
    k = rng.standard_normal((3, 2, 5))
    out = tn.conv1d(Tensor(x), Tensor(k), stride=3).data
    T = (17 - 5) // 3 + 1
    ref = np.array([[sum(k[o, c] @ x[c, 3 * t:3 * t + 5] for c in range(2)) for t in range(T)] for o in range(3)])
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_conv1d_short_input():
    with pytest.raises(InputTooShortError):
        tn.conv1d(Tensor(np.ones((1, 4))), Tensor(np.ones((2, 1, 5))), stride=1)


@given(st.integers(1, 4), st.integers(2, 7), st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_transposed_conv_is_adjoint_of_conv(stride, L, extra_frames, seed):
    r = np.random.default_rng(seed)
    T = L + stride * extra_frames
    C = 3
    x = r.standard_normal((1, T))
    k = r.standard_normal((C, L))
    fwd = tn.conv1d(Tensor(x), Tensor(k[:, None, :]), stride).data  # [C, T']
    y = r.standard_normal(fwd.shape)
    back = tn.conv_transpose1d(Tensor(y), Tensor(k), stride, T).data  # [T]
    assert np.isclose(np.sum(fwd * y), np.sum(x[0] * back), rtol=1e-10)


def _gru_reference(x, g, reverse=False):
    """Step-by-step GRU in the r/z/n packed convention."""
    B, T, _ = x.shape
    H = g.w_h.shape[0]
    h = np.zeros((B, H))
    out = np.zeros((B, T, H))
    sig = lambda v: 1 / (1 + np.exp(-v))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        gx = x[:, t] @ g.w_x.data + g.b_x.data
        gh = h @ g.w_h.data + g.b_h.data
        r = sig(gx[:, :H] + gh[:, :H])
        z = sig(gx[:, H:2 * H] + gh[:, H:2 * H])
        n = np.tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
        h = (1 - z) * n + z * h
        out[:, t] = h
    return out


@pytest.mark.parametrize("reverse", [False, True])
def test_gru_matches_stepwise_reference(rng, reverse):
    g = tn.init_gru(3, 5, rng, np.float64)
    g.b_x.data[:] = rng.standard_normal(15)
    g.b_h.data[:] = rng.standard_normal(15)
    x = rng.standard_normal((2, 7, 3))
    got = tn.gru(Tensor(x), g.w_x, g.w_h, g.b_x, g.b_h, reverse=reverse).data
    np.testing.assert_allclose(got, _gru_reference(x, g, reverse), rtol=1e-10, atol=1e-12)


def test_recurrent_layer_concatenates_directions(rng):
    p = tn.RecurrentParams(tn.init_gru(3, 4, rng, np.float64), tn.init_gru(3, 4, rng, np.float64))
    x = Tensor(rng.standard_normal((2, 6, 3)))
    assert tn.recurrent_layer(x, p).shape == (2, 6, 8)


def test_getitem_advanced_repeated_index_accumulates():
    x = Tensor(np.arange(3.0), requires_grad=True)
    backward(tn.tsum(tn.getitem(x, np.array([0, 0, 2]))))
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_miniature_pipeline_gradients(seed):
    from avisam.gradsuite import PIPELINE_STEP, miniature_loss, miniature_model

    model = miniature_model(seed)
    report = check_parameters(miniature_loss(model, seed), model.parameters(), tol=1e-4, max_entries=3,
                              seed=seed, step=PIPELINE_STEP)
    assert report.passed, str(report)
