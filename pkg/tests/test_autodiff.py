"""Engine tests: primitive values, exact adjoints, tape semantics."""

import numpy as np
import pytest

from pointfill import autodiff as ad
from pointfill.errors import ContractError, NumericsError, ShapeError


def leaf(data, dtype=np.float64):
    return ad.tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def run_backward(fn, *inputs):
    with ad.Tape() as tape:
        out = fn(*inputs)
    tape.backward(out)
    return out


# --- values ----------------------------------------------------------------


def test_softmax_uniform_logits():
    out = ad.softmax_last(ad.tensor([0.0, 0.0, 0.0], dtype=np.float64))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = ad.tensor(rng.standard_normal((6, 9)) * 30)
    out = ad.softmax_last(x)
    assert (out.data >= 0).all()
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(6), atol=1e-6)


def test_linear_identity():
    x = ad.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=np.float64)
    w = ad.tensor(np.eye(2))
    b = ad.tensor(np.zeros(2))
    np.testing.assert_array_equal(ad.linear(x, w, b).data, x.data)


def test_gather_rows_lookup():
    x = ad.tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    out = ad.gather_rows(x, np.array([2, 0]))
    np.testing.assert_array_equal(out.data, [[5.0, 6.0], [1.0, 2.0]])


def test_gather_rows_out_of_range():
    x = ad.tensor(np.zeros((3, 2)))
    with pytest.raises(IndexError):
        ad.gather_rows(x, np.array([3]))


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        ad.mul(ad.tensor(np.zeros(2)), ad.tensor(np.zeros(3)))


def test_dtype_mismatch_rejected():
    a = ad.tensor(np.zeros(3), dtype=np.float32)
    b = ad.tensor(np.zeros(3), dtype=np.float64)
    with pytest.raises(ContractError):
        ad.add(a, b)


def test_sqrt_negative_raises():
    with pytest.raises(NumericsError):
        ad.sqrt(ad.tensor([-1.0]))


def test_log_softmax_is_log_of_softmax():
    rng = np.random.default_rng(1)
    x = ad.tensor(rng.standard_normal((4, 5)))
    np.testing.assert_allclose(
        ad.log_softmax_last(x).data, np.log(ad.softmax_last(x).data), atol=1e-12
    )


# --- backward --------------------------------------------------------------


def test_backward_sum_of_squares():
    x = leaf([1.0, 2.0, 3.0])
    run_backward(lambda x: ad.reduce_sum(ad.mul(x, x)), x)
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-15)


def test_backward_mean():
    x = leaf(np.arange(4.0))
    run_backward(ad.reduce_mean, x)
    np.testing.assert_allclose(x.grad, [0.25] * 4, atol=1e-15)


def test_backward_requires_scalar():
    x = leaf(np.ones(3))
    with ad.Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_backward_repeated_operand():
    # the same tensor feeding both slots of mul must accumulate both terms
    x = leaf([3.0])
    run_backward(lambda x: ad.reduce_sum(ad.mul(x, x)), x)
    np.testing.assert_allclose(x.grad, [6.0])


def test_backward_unreachable_gets_zeros():
    x = leaf(np.ones(3))
    y = leaf(np.ones(3))
    with ad.Tape() as tape:
        out = ad.reduce_sum(ad.mul(x, 2.0))
        ad.mul(y, 3.0)  # recorded but not reachable from out
    tape.backward(out)
    np.testing.assert_array_equal(y.grad, np.zeros(3))


def test_leaf_grads_accumulate_across_backwards():
    x = leaf([1.0, 2.0])
    for _ in range(2):
        with ad.Tape() as tape:
            out = ad.reduce_sum(ad.mul(x, x))
        tape.backward(out)
    np.testing.assert_allclose(x.grad, [4.0, 8.0])


def test_backward_bitwise_deterministic():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((8, 5))
    grads = []
    for _ in range(2):
        x = leaf(data.copy())
        w = leaf(rng.standard_normal((5, 4)))  # same stream restart below
        rng = np.random.default_rng(7)
        rng.standard_normal((8, 5))
        run_backward(
            lambda x, w: ad.reduce_sum(
                ad.softmax_last(ad.linear(x, w, ad.tensor(np.zeros(4))))
            ),
            x,
            w,
        )
        grads.append(x.grad.copy())
    assert np.array_equal(grads[0], grads[1])


# --- finite differences for every primitive ---------------------------------


def _probed(op, probe_shape, rng):
    """Scalarize ``op`` against a fixed random probe (drawn once)."""
    probe = rng.standard_normal(probe_shape)
    return lambda *args: ad.reduce_sum(
        ad.mul(op(*args), ad.constant(probe, like=args[0]))
    )


def _case_add(rng):
    return (lambda a, b: ad.reduce_sum(ad.add(a, b)),
            [leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((3, 4)))])


def _case_sub_scalar(rng):
    return (lambda a: ad.reduce_sum(ad.sub(1.5, ad.sub(a, 0.5))),
            [leaf(rng.standard_normal(6))])


def _case_mul(rng):
    return (lambda a, b: ad.reduce_sum(ad.mul(a, b)),
            [leaf(rng.standard_normal((2, 5))), leaf(rng.standard_normal((2, 5)))])


def _case_relu(rng):
    x = np.sign(rng.standard_normal(12)) * (0.05 + np.abs(rng.standard_normal(12)))
    return lambda a: ad.reduce_sum(ad.relu(a)), [leaf(x)]


def _case_softmax(rng):
    return _probed(ad.softmax_last, (3, 4), rng), [leaf(rng.standard_normal((3, 4)))]


def _case_log_softmax(rng):
    return _probed(ad.log_softmax_last, (2, 6), rng), [leaf(rng.standard_normal((2, 6)))]


def _case_linear(rng):
    inputs = [
        leaf(rng.standard_normal((4, 2))),
        leaf(rng.standard_normal((2, 3))),
        leaf(rng.standard_normal(3)),
    ]
    return _probed(ad.linear, (4, 3), rng), inputs


def _case_reduce_sum_axis(rng):
    return (_probed(lambda a: ad.reduce_sum(a, axis=1), 3, rng),
            [leaf(rng.standard_normal((3, 5)))])


def _case_reduce_mean_axis(rng):
    return (_probed(lambda a: ad.reduce_mean(a, axis=0), 5, rng),
            [leaf(rng.standard_normal((3, 5)))])


def _case_max_over_axis(rng):
    return (_probed(lambda a: ad.max_over_axis(a, axis=1), 4, rng),
            [leaf(rng.standard_normal((4, 6)))])


def _case_concat(rng):
    return (_probed(lambda a, b: ad.concat([a, b], axis=1), (3, 5), rng),
            [leaf(rng.standard_normal((3, 2))), leaf(rng.standard_normal((3, 3)))])


def _case_gather_rows(rng):
    idx = np.array([1, 1, 0, 3])
    return (_probed(lambda a: ad.gather_rows(a, idx), (4, 2), rng),
            [leaf(rng.standard_normal((4, 2)))])


def _case_reshape_permute(rng):
    op = lambda a: ad.permute(ad.reshape(a, (2, 3, 2)), (1, 0, 2))
    return _probed(op, (3, 2, 2), rng), [leaf(rng.standard_normal((2, 6)))]


def _case_sqrt(rng):
    return (lambda a: ad.reduce_sum(ad.sqrt(ad.add(ad.mul(a, a), 0.5))),
            [leaf(rng.standard_normal(8))])


def _case_repeat_cols(rng):
    return (_probed(lambda a: ad.repeat_cols(a, 3), (5, 3), rng),
            [leaf(rng.standard_normal((5, 1)))])


_PRIMITIVE_CASES = {
    "add": _case_add,
    "sub_scalar": _case_sub_scalar,
    "mul": _case_mul,
    "relu": _case_relu,
    "softmax": _case_softmax,
    "log_softmax": _case_log_softmax,
    "linear": _case_linear,
    "reduce_sum_axis": _case_reduce_sum_axis,
    "reduce_mean_axis": _case_reduce_mean_axis,
    "max_over_axis": _case_max_over_axis,
    "concat": _case_concat,
    "gather_rows": _case_gather_rows,
    "reshape_permute": _case_reshape_permute,
    "sqrt": _case_sqrt,
    "repeat_cols": _case_repeat_cols,
}


@pytest.mark.parametrize("name", sorted(_PRIMITIVE_CASES))
def test_primitive_adjoints_match_finite_differences(name):
    fn, inputs = _PRIMITIVE_CASES[name](np.random.default_rng(hash(name) % 2**32))
    report = ad.grad_check(fn, inputs, eps=1e-5, tol=1e-4)
    assert report.passed, f"{name}: {report.summary()}"


# --- grad_check harness ------------------------------------------------------


def test_grad_check_relu_positive_inputs():
    x = leaf(np.linspace(0.5, 2.0, 8))
    report = ad.grad_check(lambda x: ad.reduce_sum(ad.relu(x)), [x], tol=1e-6)
    assert report.passed
    assert report.max_rel_error < 1e-6


def test_grad_check_softmax_sum_is_constant():
    # softmax rows sum to one, so the scalarized output is constant: both
    # the analytic and the numeric gradient vanish (to roundoff)
    x = leaf(np.random.default_rng(3).standard_normal((3, 4)) * 0.1)
    with ad.Tape() as tape:
        out = ad.reduce_sum(ad.softmax_last(x))
    tape.backward(out)
    assert np.abs(x.grad).max() < 1e-12
    report = ad.grad_check(lambda x: ad.reduce_sum(ad.softmax_last(x)), [x])
    for _, _, analytic, numeric, _ in report.failures:
        assert abs(analytic) < 1e-9 and abs(numeric) < 1e-9


def test_grad_check_flags_with_zero_tolerance():
    x = leaf(np.linspace(1.0, 2.0, 5))
    report = ad.grad_check(lambda x: ad.reduce_sum(ad.mul(x, x)), [x], tol=0.0)
    assert not report.passed and report.failures


def test_grad_check_rejects_float32():
    x = ad.tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(ContractError):
        ad.grad_check(lambda x: ad.reduce_sum(x), [x])


def test_grad_check_nonfinite_raises():
    x = leaf(np.ones(3))

    def fn(x):
        out = ad.reduce_sum(x)
        out.data = np.array(np.inf)
        return out

    with pytest.raises(NumericsError):
        ad.grad_check(fn, [x])
