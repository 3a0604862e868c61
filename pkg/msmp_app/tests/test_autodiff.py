import numpy as np
from django.test import SimpleTestCase

from .. import autodiff as ad
from ..autodiff import Tape, backward, constant, gradient_check
from ..exceptions import ShapeError, TapeError
from .support import conditioned_points


def _total(t: ad.Tensor) -> ad.Tensor:
    """Sum of every entry, as a scalar."""
    while t.data.ndim:
        t = ad.reduce_sum(t)
    return t


def _weighted(op, weights: np.ndarray):
    """Scalar f(x) = sum(op(x) * weights), so each output entry gets its own upstream gradient."""
    return lambda x: _total(ad.mul(op(x), constant(weights)))


class ElementaryOpsTest(SimpleTestCase):
    def test_add(self):
        out = ad.add(constant([1.0, 2.0]), constant([3.0, 4.0]))
        np.testing.assert_array_equal(out.numpy(), [4.0, 6.0])

    def test_identity_matmul(self):
        out = constant([[1.0, 2.0]]) @ constant(np.eye(2))
        np.testing.assert_array_equal(out.numpy(), [[1.0, 2.0]])

    def test_reduce_max(self):
        out = ad.reduce_max(constant([[1.0, 9.0], [3.0, 2.0]]), axis=0)
        np.testing.assert_array_equal(out.numpy(), [3.0, 9.0])

    def test_constants_stay_off_tape(self):
        out = constant([1.0]) * constant([2.0])
        self.assertIsNone(out.tape)

    def test_values_are_read_only(self):
        out = constant([1.0, 2.0])
        with self.assertRaises(ValueError):
            out.data[0] = 5.0
        copy = out.numpy()
        copy[0] = 5.0
        self.assertEqual(out.data[0], 1.0)

    def test_segment_sum(self):
        rows = constant([[1.0, 0.0], [2.0, 1.0], [4.0, 4.0]])
        out = ad.segment_sum(rows, np.array([1, 0, 1]), 3)
        np.testing.assert_array_equal(out.numpy(), [[2.0, 1.0], [5.0, 4.0], [0.0, 0.0]])

    def test_segment_max_routes_gradient_to_first_tie(self):
        tape = Tape()
        rows = tape.leaf([[3.0, 1.0], [3.0, 5.0]])
        out = ad.segment_max(rows, np.array([0, 0]), 1)
        np.testing.assert_array_equal(out.numpy(), [[3.0, 5.0]])
        grad = backward(tape, _total(out))[rows.node_id]
        np.testing.assert_array_equal(grad, [[1.0, 0.0], [0.0, 1.0]])


class BackwardTest(SimpleTestCase):
    def test_sum_of_squares(self):
        tape = Tape()
        x = tape.leaf([1.0, 2.0])
        grads = backward(tape, ad.reduce_sum(x * x))
        np.testing.assert_array_equal(grads[x.node_id], [2.0, 4.0])

    def test_sigmoid_slope_at_zero(self):
        tape = Tape()
        x = tape.leaf([0.0])
        grads = backward(tape, ad.reduce_sum(ad.sigmoid(x)))
        self.assertAlmostEqual(float(grads[x.node_id][0]), 0.25, places=15)

    def test_reused_value_accumulates(self):
        tape = Tape()
        x = tape.leaf([3.0])
        y = x + x
        grads = backward(tape, ad.reduce_sum(y * x))
        self.assertEqual(float(grads[x.node_id][0]), 12.0)

    def test_untouched_leaf_gets_zeros(self):
        tape = Tape()
        x = tape.leaf([1.0, 2.0])
        unused = tape.leaf([[1.0, 1.0, 1.0]])
        grads = backward(tape, ad.reduce_sum(x))
        np.testing.assert_array_equal(grads[unused.node_id], np.zeros((1, 3)))

    def test_stack_unstack(self):
        tape = Tape()
        x = tape.leaf([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        weights = np.arange(6.0).reshape(3, 2)
        rebuilt = ad.stack(ad.unstack(x))
        np.testing.assert_array_equal(rebuilt.numpy(), x.numpy())
        grads = backward(tape, _total(rebuilt * constant(weights)))
        np.testing.assert_array_equal(grads[x.node_id], weights)

    def test_loss_must_be_scalar(self):
        tape = Tape()
        x = tape.leaf([1.0, 2.0])
        with self.assertRaises(TapeError):
            backward(tape, x * x)

    def test_loss_from_another_tape(self):
        other = Tape()
        loss = ad.reduce_sum(other.leaf([1.0]))
        with self.assertRaises(TapeError):
            backward(Tape(), loss)

    def test_mixing_tapes(self):
        with self.assertRaises(TapeError):
            Tape().leaf([1.0]) + Tape().leaf([2.0])


class ShapeErrorTest(SimpleTestCase):
    def test_no_broadcasting(self):
        with self.assertRaises(ShapeError):
            constant([1.0, 2.0]) + constant([1.0, 2.0, 3.0])
        with self.assertRaises(ShapeError):
            constant(np.ones((2, 2))) * constant(np.ones(2))

    def test_matmul_conformance(self):
        with self.assertRaises(ShapeError):
            constant(np.ones((2, 3))) @ constant(np.ones((2, 3)))
        with self.assertRaises(ShapeError):
            constant(np.ones(3)) @ constant(np.ones((3, 1)))

    def test_structural(self):
        cases = {
            "concat of nothing": lambda: ad.concat([]),
            "concat of mismatched rows": lambda: ad.concat([constant(np.ones((2, 2))), constant(np.ones((3, 3)))]),
            "slice past the end": lambda: ad.slice_range(constant(np.ones(3)), 1, 4),
            "reshape to wrong size": lambda: ad.reshape(constant(np.ones(4)), (3,)),
            "stack of nothing": lambda: ad.stack([]),
            "row out of range": lambda: ad.take_row(constant(np.ones((2, 2))), 2),
            "gather out of range": lambda: ad.gather_rows(constant(np.ones((2, 2))), np.array([0, 2])),
            "repeat a matrix": lambda: ad.repeat_rows(constant(np.ones((2, 2))), 3),
            "mean over nothing": lambda: ad.reduce_mean(constant(np.ones((0, 2)))),
            "max over nothing": lambda: ad.reduce_max(constant(np.ones((0, 2)))),
            "empty segment": lambda: ad.segment_max(constant(np.ones((2, 2))), np.array([0, 0]), 2),
            "segment ids too short": lambda: ad.segment_sum(constant(np.ones((3, 2))), np.array([0, 1]), 2),
            "log of zero": lambda: ad.log(constant([1.0, 0.0])),
            "row factors too short": lambda: ad.scale_rows(constant(np.ones((3, 2))), np.ones(2)),
        }
        for name, call in cases.items():
            with self.subTest(name), self.assertRaises(ShapeError):
                call()


POINTS = 100
RELATIVE_BOUND = 1e-5


def _signed(rng: np.random.Generator, shape, low: float, high: float) -> np.ndarray:
    return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _draw(rng: np.random.Generator, shape=(3, 2)) -> np.ndarray:
    x = _signed(rng, shape, 0.2, 1.5)
    # keep clear of the clip bounds
    return np.where(np.abs(np.abs(x) - 0.9) < 1e-3, x * 1.01, x)


class GradientCheckTest(SimpleTestCase):
    def assertGradientsAgree(self, name: str, f, seed: int):
        rng = np.random.default_rng(seed)
        for i, point in enumerate(conditioned_points(f, lambda: _draw(rng), POINTS)):
            error = gradient_check(f, point)
            self.assertLess(error, RELATIVE_BOUND, f"{name} at point {i}: {point.tolist()}")

    def test_sum_is_exact(self):
        self.assertLess(gradient_check(ad.reduce_sum, [1.0, 2.0, 3.0]), 1e-8)

    def test_tanh(self):
        self.assertLess(gradient_check(lambda x: ad.reduce_sum(ad.tanh(x)), [0.3, -0.7]), 1e-7)

    def test_elementwise_and_structural_ops(self):
        rng = np.random.default_rng(11)
        weights = _signed(rng, (3, 2), 0.5, 1.5)
        mixer = constant(_signed(rng, (2, 2), 0.5, 1.5))
        ops = {
            "add": lambda x: x + ad.sigmoid(x),
            "sigmoid": ad.sigmoid,
            "tanh": ad.tanh,
            "relu": ad.relu,
            "selu": ad.selu,
            "abs": ad.absolute,
            "log": lambda x: ad.log(ad.absolute(x)),
            "clip": lambda x: ad.clip(x, -0.9, 0.9),
            "scale": lambda x: ad.scale(x, -2.5),
            "scale_rows": lambda x: ad.scale_rows(x, np.array([1.0, -2.0, 0.5])),
            "mul": lambda x: x * x,
            "sub": lambda x: x - ad.tanh(x),
            "matmul": lambda x: x @ mixer,
            "concat": lambda x: ad.slice_range(ad.concat([x, ad.tanh(x)], axis=1), 1, 3, axis=1),
            "reshape": lambda x: ad.reshape(ad.reshape(x, (2, 3)), (3, 2)),
            "gather": lambda x: ad.gather_rows(x, np.array([2, 0, 2])),
            "repeat": lambda x: ad.repeat_rows(ad.take_row(x, 1), 3),
            "stack": lambda x: ad.stack([ad.take_row(x, 2), ad.tanh(ad.take_row(x, 0)), ad.take_row(x, 1)]),
            "unstack": lambda x: ad.stack(list(reversed(ad.unstack(x)))),
        }
        for seed, (name, op) in enumerate(ops.items()):
            with self.subTest(name):
                self.assertGradientsAgree(name, _weighted(op, weights), seed)

    def test_reductions(self):
        segments = np.array([1, 0, 1])
        ops = {
            "reduce_sum": lambda x: ad.reduce_sum(x, axis=1),
            "reduce_mean": lambda x: ad.reduce_mean(x, axis=0),
            "reduce_max": lambda x: ad.reduce_max(x, axis=0),
            "reduce_min": lambda x: ad.reduce_min(x, axis=1),
            "segment_sum": lambda x: ad.segment_sum(x, segments, 2),
            "segment_max": lambda x: ad.segment_max(x, segments, 2),
            "segment_min": lambda x: ad.segment_min(x, segments, 2),
        }
        for seed, (name, op) in enumerate(ops.items(), start=100):
            with self.subTest(name):
                self.assertGradientsAgree(name, lambda x, op=op: _total(ad.tanh(op(x))), seed)

    def test_small_dense_network(self):
        rng = np.random.default_rng(7)
        kernel = constant(rng.normal(size=(2, 4)))
        head = constant(rng.normal(size=(4, 1)))

        def f(x):
            hidden = ad.tanh(x @ kernel)
            return _total(ad.sigmoid(hidden @ head))

        self.assertGradientsAgree("dense network", f, 200)

    def test_rejects_non_positive_epsilon(self):
        with self.assertRaises(ValueError):
            gradient_check(ad.reduce_sum, [1.0], epsilon=0.0)
