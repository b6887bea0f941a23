"""Tensor engine: forward values, gradient correctness, graph semantics."""

import mpmath
import numpy as np
import pytest

from cpfm.autodiff import (Tensor, backward, concat, concat_seq, expand_leading,
                           grad_check, layernorm_nobias, log, matmul, narrow,
                           no_grad, normalize_rows, reshape, softmax, swapaxes,
                           tanh, tmean, tsum)
from cpfm.errors import ContractError, DimensionError
from cpfm.optim import Adam, AdamState, adam_step


class TestSoftmax:
    def test_symmetric_pair(self):
        out = softmax(Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_closed_form(self):
        out = softmax(Tensor([np.log(1.0), np.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_large_inputs_stay_finite(self):
        # oracle: arbitrary-precision softmax via mpmath
        vals = [1000.0, 1000.0, 999.0]
        out = softmax(Tensor(vals))
        assert np.isfinite(out.data).all()
        with mpmath.workdps(50):
            exps = [mpmath.e ** mpmath.mpf(v) for v in vals]
            total = sum(exps)
            expected = [float(e / total) for e in exps]
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_rows_sum_to_one(self, rng):
        out = softmax(Tensor(rng.normal(size=(6, 9))), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
        assert (out.data > 0).all() and (out.data < 1).all()

    def test_translation_invariance(self, rng):
        x = rng.normal(size=(4, 7))
        a = softmax(Tensor(x), axis=-1).data
        b = softmax(Tensor(x + 13.5), axis=-1).data
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_axis_out_of_range(self):
        with pytest.raises(DimensionError):
            softmax(Tensor([[1.0, 2.0]]), axis=2)

    def test_non_last_axis(self, rng):
        x = rng.normal(size=(3, 5))
        out = softmax(Tensor(x), axis=0)
        np.testing.assert_allclose(out.data.sum(axis=0), 1.0, atol=1e-12)


class TestConcat:
    def test_prepend_rows(self):
        out = concat_seq(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_empty_prompt_is_identity(self):
        h = Tensor([[3.0, 4.0], [5.0, 6.0]])
        out = concat_seq(Tensor(np.zeros((0, 2))), h)
        np.testing.assert_array_equal(out.data, h.data)

    def test_backward_splits_exactly(self):
        p = Tensor(np.ones((2, 3)), requires_grad=True)
        h = Tensor(np.ones((4, 3)), requires_grad=True)
        out = concat_seq(p, h)
        backward(tsum(out))
        np.testing.assert_array_equal(p.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(h.grad, np.ones((4, 3)))

    def test_gradient_mass_conserved(self, rng):
        p = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        h = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        upstream = rng.normal(size=(7, 3))
        out = tsum(concat_seq(p, h) * Tensor(upstream))
        backward(out)
        assert p.grad.sum() + h.grad.sum() == pytest.approx(upstream.sum(),
                                                            abs=1e-12)

    def test_trailing_dim_mismatch(self):
        with pytest.raises(DimensionError):
            concat_seq(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out = layernorm_nobias(Tensor([[1.0, 1.0, 1.0]]), Tensor(np.ones(3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_already_standardized_row_is_fixed_point(self):
        out = layernorm_nobias(Tensor([[-1.0, 1.0]]), Tensor(np.ones(2)))
        np.testing.assert_array_equal(out.data, [[-1.0, 1.0]])

    def test_hand_computed_row(self):
        # population variance of [0,2,4] is 8/3
        out = layernorm_nobias(Tensor([[0.0, 2.0, 4.0]]), Tensor(np.full(3, 2.0)))
        sigma = np.sqrt(8.0 / 3.0)
        expected = 2.0 * (np.array([0.0, 2.0, 4.0]) - 2.0) / sigma
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12)

    def test_rows_standardized(self, rng):
        x = rng.normal(size=(10, 16)) * 3 + 1
        out = normalize_rows(Tensor(x)).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)

    def test_gain_shape_checked(self):
        with pytest.raises(DimensionError):
            layernorm_nobias(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


class TestBackwardSemantics:
    def test_sum_gradient_is_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
        backward(tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4, 2)))

    def test_mse_at_minimum_has_zero_gradient(self, rng):
        t = rng.normal(size=(5,))
        x = Tensor(t.copy(), requires_grad=True)
        d = x - Tensor(t)
        backward(tmean(d * d))
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)

    def test_reuse_accumulates_by_sum(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x + x * Tensor([3.0])  # d/dx = 2x + 3 = 7
        backward(tsum(y))
        np.testing.assert_allclose(x.grad, [7.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * x)

    def test_no_grad_suppresses_graph(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * x
        assert y._backward_fn is None and not y.requires_grad

    def test_broadcast_add_unbroadcasts(self, rng):
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3,)), requires_grad=True)
        backward(tsum(x + b))
        np.testing.assert_array_equal(b.grad, np.full(3, 4.0))


GRAD_CASES = [
    ("add", lambda t: tsum(t + Tensor(np.linspace(-1, 1, 6).reshape(2, 3))), (2, 3)),
    ("mul", lambda t: tsum(t * t * Tensor(np.full((2, 3), 0.7))), (2, 3)),
    ("tanh", lambda t: tsum(tanh(t)), (2, 3)),
    ("log", lambda t: tsum(log(t * t + Tensor(np.ones((2, 2))))), (2, 2)),
    ("matmul", lambda t: tsum(matmul(t, Tensor(np.arange(6.0).reshape(3, 2)))), (4, 3)),
    ("batched_matmul",
     lambda t: tsum(matmul(t, swapaxes(t, 1, 2))), (2, 3, 4)),
    ("softmax", lambda t: tsum(softmax(t, axis=-1)
                               * Tensor(np.arange(8.0).reshape(2, 4))), (2, 4)),
    ("layernorm", lambda t: tsum(normalize_rows(t)
                                 * Tensor(np.arange(10.0).reshape(2, 5))), (2, 5)),
    ("mean", lambda t: tmean(t * t), (3, 3)),
    ("narrow", lambda t: tsum(narrow(t, 0, 1, 2) * Tensor(np.ones((2, 3)))), (4, 3)),
    ("concat", lambda t: tsum(concat([t, t * Tensor(np.full((2, 2), 2.0))], 0)
                              * Tensor(np.arange(8.0).reshape(4, 2))), (2, 2)),
    ("reshape_swap", lambda t: tsum(swapaxes(reshape(t, (2, 3, 2)), 0, 1)
                                    * Tensor(np.arange(12.0).reshape(3, 2, 2))), (6, 2)),
    ("expand", lambda t: tsum(expand_leading(t, 3)
                              * Tensor(np.arange(18.0).reshape(3, 2, 3))), (2, 3)),
]


@pytest.mark.parametrize("name,fn,shape", GRAD_CASES, ids=[c[0] for c in GRAD_CASES])
def test_gradients_match_central_differences(name, fn, shape):
    for seed in range(3):
        x = np.random.default_rng(seed).normal(size=shape)
        assert grad_check(fn, Tensor(x)) < 1e-4


def test_grad_check_sum_of_squares_tight():
    err = grad_check(lambda t: tsum(t * t), Tensor([3.0]))
    assert err < 1e-8


def test_grad_check_softmax_pick_first():
    err = grad_check(lambda t: tsum(softmax(t) * Tensor([1.0, 0.0])),
                     Tensor([0.1, -0.2]))
    assert err < 1e-6


class TestDeterminism:
    def test_ops_bit_identical(self, rng):
        x = rng.normal(size=(5, 8))
        w = rng.normal(size=(8, 8))
        a = matmul(softmax(Tensor(x), axis=-1), Tensor(w)).data
        b = matmul(softmax(Tensor(x), axis=-1), Tensor(w)).data
        assert np.array_equal(a, b)

    def test_finite_outputs_on_documented_ops(self, rng):
        x = rng.normal(size=(4, 6)) * 50
        for out in (softmax(Tensor(x), axis=-1), normalize_rows(Tensor(x)),
                    tanh(Tensor(x)), matmul(Tensor(x), Tensor(rng.normal(size=(6, 3)))),
                    concat([Tensor(x), Tensor(x)], 0),
                    tmean((Tensor(x) - Tensor(x * 0.5)) * (Tensor(x) - Tensor(x * 0.5)))):
            assert np.isfinite(out.data).all()


class TestAdam:
    def test_zero_grad_leaves_params_unchanged(self):
        p = np.array([1.5, -2.0])
        state = AdamState.for_param(p)
        assert adam_step([p], [np.zeros(2)], [state], lr=0.1)
        np.testing.assert_array_equal(p, [1.5, -2.0])

    def test_first_step_matches_hand_formula(self):
        # bias correction makes the first step equal lr for unit gradient
        p = np.array([1.0])
        state = AdamState.for_param(p)
        adam_step([p], [np.ones(1)], [state], lr=0.1)
        assert p[0] == pytest.approx(1.0 - 0.1, abs=1e-6)
        assert state.step_count == 1

    def test_identical_params_get_identical_updates(self):
        p1, p2 = np.array([0.3]), np.array([0.3])
        s1, s2 = AdamState.for_param(p1), AdamState.for_param(p2)
        g = np.array([0.77])
        adam_step([p1], [g.copy()], [s1], lr=0.01)
        adam_step([p2], [g.copy()], [s2], lr=0.01)
        assert p1[0] == p2[0]

    def test_non_finite_grad_skips_update(self):
        p = np.array([1.0])
        state = AdamState.for_param(p)
        applied = adam_step([p], [np.array([np.nan])], [state], lr=0.1)
        assert not applied
        assert p[0] == 1.0 and state.step_count == 0

    def test_subset_step_only_touches_subset(self, rng):
        a = Tensor(rng.normal(size=(2,)), requires_grad=True)
        b = Tensor(rng.normal(size=(2,)), requires_grad=True)
        before_b = b.data.copy()
        opt = Adam([a, b], lr=0.05)
        backward(tsum(a * a) + tsum(b * b))
        opt.step(subset=[a])
        assert not np.array_equal(a.grad, None)
        np.testing.assert_array_equal(b.data, before_b)
        assert opt.state_for(b).step_count == 0
