from __future__ import annotations

import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from focal import ndmath as nd


class TapeTests(unittest.TestCase):
    def test_backward_of_elementwise_product(self) -> None:
        tape = nd.Tape()
        a = tape.leaf([[1.0, 2.0], [3.0, 4.0]])
        b = tape.leaf([[5.0, 6.0], [7.0, 8.0]])
        grads = nd.backward(tape, nd.sum_all(a * b))
        np.testing.assert_array_equal(grads[a.id], b.value)
        np.testing.assert_array_equal(grads[b.id], a.value)

    def test_broadcast_add_reduces_gradient_to_bias_shape(self) -> None:
        tape = nd.Tape()
        x = tape.leaf(np.arange(6.0).reshape(3, 2))
        bias = tape.leaf([[0.5, -0.5]])
        grads = nd.backward(tape, nd.sum_all(nd.add(x, bias)))
        np.testing.assert_array_equal(grads[bias.id], [[3.0, 3.0]])

    def test_unused_leaf_gets_zero_gradient(self) -> None:
        tape = nd.Tape()
        used = tape.leaf([1.0, 2.0])
        unused = tape.leaf([[3.0]])
        grads = nd.backward(tape, nd.sum_all(nd.scale(used, 2.0)))
        np.testing.assert_array_equal(grads[unused.id], [[0.0]])

    def test_constants_are_not_reported(self) -> None:
        tape = nd.Tape()
        x = tape.leaf([[1.0]])
        c = tape.constant([[2.0]])
        grads = nd.backward(tape, nd.sum_all(x * c))
        self.assertEqual(set(grads), {x.id})

    def test_non_scalar_loss_is_rejected(self) -> None:
        tape = nd.Tape()
        x = tape.leaf([1.0, 2.0])
        with self.assertRaises(nd.NonScalarLossError):
            nd.backward(tape, x)

    def test_non_finite_values_raise_numerical_error(self) -> None:
        tape = nd.Tape()
        with self.assertRaises(nd.NumericalError):
            tape.leaf([1.0, math.inf])
        x = tape.leaf([[0.0]])
        with self.assertRaises(nd.NumericalError):
            nd.log(x)

    def test_operands_from_different_tapes_are_rejected(self) -> None:
        a = nd.Tape().leaf([[1.0]])
        b = nd.Tape().leaf([[1.0]])
        with self.assertRaises(ValueError):
            nd.add(a, b)


class ShapeTests(unittest.TestCase):
    def test_matmul_rejects_mismatched_inner_dimension(self) -> None:
        tape = nd.Tape()
        with self.assertRaisesRegex(nd.ShapeError, r"\(2, 3\) and \(2, 2\)"):
            nd.matmul(tape.leaf(np.zeros((2, 3))), tape.leaf(np.zeros((2, 2))))

    def test_elementwise_rejects_non_broadcastable_shapes(self) -> None:
        tape = nd.Tape()
        with self.assertRaises(nd.ShapeError):
            nd.mul(tape.leaf(np.zeros((2, 3))), tape.leaf(np.zeros((3, 2))))

    def test_concat_cols_requires_equal_rows(self) -> None:
        tape = nd.Tape()
        with self.assertRaises(nd.ShapeError):
            nd.concat_cols([tape.leaf(np.zeros((2, 1))), tape.leaf(np.zeros((3, 1)))])

    def test_gather_rows_checks_range(self) -> None:
        tape = nd.Tape()
        with self.assertRaises(nd.ShapeError):
            nd.gather_rows(tape.leaf(np.zeros((2, 2))), np.array([2]))

    def test_segment_ids_must_be_in_range(self) -> None:
        with self.assertRaises(nd.ShapeError):
            nd.Segments.from_ids([0, 3], 3)


class SoftmaxTests(unittest.TestCase):
    @settings(max_examples=40, deadline=None)
    @given(
        ids=st.lists(st.integers(min_value=0, max_value=4), min_size=1, max_size=30),
        seed=st.integers(min_value=0, max_value=2**16),
    )
    def test_segment_softmax_sums_to_one_per_segment(self, ids: list[int], seed: int) -> None:
        rng = np.random.default_rng(seed)
        seg = nd.Segments.from_ids(ids, 5)
        tape = nd.Tape()
        y = nd.segment_softmax(tape.leaf(rng.normal(0.0, 30.0, (len(ids), 2))), seg).value
        totals = np.zeros((5, 2))
        np.add.at(totals, np.array(ids), y)
        present = seg.counts() > 0
        np.testing.assert_allclose(totals[present], 1.0, rtol=0, atol=1e-12)
        self.assertTrue(np.all(totals[~present] == 0.0))

    def test_segment_softmax_matches_sorted_and_unsorted_paths(self) -> None:
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((6, 3))
        sorted_ids = [0, 0, 1, 1, 1, 2]
        order = np.array([5, 0, 3, 1, 4, 2])
        tape = nd.Tape()
        a = nd.segment_softmax(tape.leaf(logits), nd.Segments.from_ids(sorted_ids, 3)).value
        b = nd.segment_softmax(tape.leaf(logits[order]), nd.Segments.from_ids(np.array(sorted_ids)[order], 3)).value
        np.testing.assert_allclose(a[order], b, rtol=0, atol=1e-15)

    def test_softmax_masked_zeroes_unmasked_entries(self) -> None:
        tape = nd.Tape()
        y = nd.softmax_masked(tape.leaf([1.0, 500.0, 2.0]), [True, False, True]).value
        self.assertEqual(y[1], 0.0)
        self.assertAlmostEqual(float(y.sum()), 1.0, places=15)

    def test_softmax_masked_rejects_empty_mask(self) -> None:
        tape = nd.Tape()
        with self.assertRaises(nd.EmptyMaskError):
            nd.softmax_masked(tape.leaf([1.0, 2.0]), [False, False])

    def test_softmax_rows_is_shift_invariant(self) -> None:
        tape = nd.Tape()
        x = np.array([[1.0, 2.0, 3.0]])
        a = nd.softmax_rows(tape.leaf(x)).value
        b = nd.softmax_rows(tape.leaf(x + 1000.0)).value
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


class ElementwiseTests(unittest.TestCase):
    def test_log1p_exp_is_stable_for_large_inputs(self) -> None:
        tape = nd.Tape()
        y = nd.log1p_exp(tape.leaf([[1000.0, -1000.0, 0.0]])).value
        self.assertEqual(y[0, 0], 1000.0)
        self.assertEqual(y[0, 1], 0.0)
        self.assertAlmostEqual(y[0, 2], math.log(2.0), places=15)

    def test_sigmoid_value_saturates_without_overflow(self) -> None:
        np.testing.assert_array_equal(nd.sigmoid_value(np.array([-1000.0, 1000.0])), [0.0, 1.0])

    def test_power_with_zero_exponent_is_constant(self) -> None:
        tape = nd.Tape()
        x = tape.leaf([[0.0, 2.0]])
        y = nd.power(x, 0.0)
        np.testing.assert_array_equal(y.value, [[1.0, 1.0]])
        np.testing.assert_array_equal(nd.backward(tape, nd.sum_all(y))[x.id], [[0.0, 0.0]])

    def test_dropout_at_rate_zero_is_identity(self) -> None:
        tape = nd.Tape()
        x = tape.leaf([[1.0, 2.0]])
        self.assertIs(nd.dropout(x, 0.0, np.random.default_rng(0)), x)

    def test_cosine_of_zero_vector_is_rejected(self) -> None:
        tape = nd.Tape()
        with self.assertRaises(nd.ZeroVectorError):
            nd.cosine(tape.leaf([0.0, 0.0]), tape.leaf([1.0, 0.0]))

    def test_cosine_rows_flags_zero_rows(self) -> None:
        tape = nd.Tape()
        cos, zero = nd.cosine_rows(tape.leaf([[1.0, 0.0], [0.0, 0.0]]), tape.leaf([[2.0, 0.0], [1.0, 1.0]]))
        np.testing.assert_array_equal(zero, [False, True])
        np.testing.assert_allclose(cos.value, [[1.0], [0.0]])


class GradCheckTests(unittest.TestCase):
    def test_composite_expression_matches_finite_differences(self) -> None:
        rng = np.random.default_rng(1)

        def f(tape: nd.Tape, x: nd.Var, w: nd.Var) -> nd.Var:
            h = nd.tanh(nd.matmul(x, w))
            return nd.sum_all(nd.mul(nd.softmax_rows(h), nd.sigmoid(h)))

        err = nd.grad_check(f, [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])
        self.assertLessEqual(err, 1e-6)

    def test_segment_ops_match_finite_differences(self) -> None:
        rng = np.random.default_rng(2)
        seg = nd.Segments.from_ids([1, 0, 1, 2, 0], 3)
        weights = rng.standard_normal((3, 2))

        def f(tape: nd.Tape, x: nd.Var) -> nd.Var:
            return nd.sum_all(nd.mul(nd.segment_sum(nd.segment_softmax(x, seg), seg), weights))

        self.assertLessEqual(nd.grad_check(f, rng.standard_normal((5, 2))), 1e-6)

    def test_grad_check_detects_a_wrong_gradient(self) -> None:
        def wrong(tape: nd.Tape, x: nd.Var) -> nd.Var:
            # value of x^2 with the gradient of x
            return tape._record(np.array((x.value**2).sum()), (x.id,), lambda g: (g * np.ones_like(x.value),))

        self.assertGreater(nd.grad_check(wrong, np.array([3.0])), 1.0)


if __name__ == "__main__":
    unittest.main()
