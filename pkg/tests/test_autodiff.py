"""Tensor engine: shape contracts, hand-computed values, and FD oracles."""

import numpy as np
import pytest

import scsnet.autodiff as ad
from scsnet.autodiff import ShapeError, Tape, TapeError, Tensor
from scsnet.gradcheck import op_checks, relative_error


def rand(shape, seed=0, dtype=np.float64):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(rand((2, 3, 6, 7), 1))
        w = np.zeros((3, 3, 1, 1))
        w[np.arange(3), np.arange(3), 0, 0] = 1.0
        out = ad.conv2d(x, Tensor(w), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_shape_arithmetic(self):
        x = Tensor(rand((1, 3, 8, 8)))
        w = Tensor(rand((16, 3, 3, 3)))
        out = ad.conv2d(x, w, Tensor(np.zeros(16)), stride=1, padding=1)
        assert out.shape == (1, 16, 8, 8)

    def test_strided_shape(self):
        x = Tensor(rand((2, 4, 9, 9)))
        out = ad.conv2d(x, Tensor(rand((8, 4, 3, 3))), Tensor(np.zeros(8)), stride=2, padding=1)
        assert out.shape == (2, 8, 5, 5)

    def test_channel_mismatch_names_both_shapes(self):
        x = Tensor(rand((1, 3, 4, 4)))
        w = Tensor(rand((2, 5, 3, 3)))
        with pytest.raises(ShapeError, match=r"Cin=3.*Cin=5"):
            ad.conv2d(x, w, Tensor(np.zeros(2)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            ad.conv2d(Tensor(rand((1, 1, 4, 4))), Tensor(rand((1, 1, 2, 2))), Tensor(np.zeros(1)))


class TestLinear:
    def test_identity(self):
        x = Tensor(rand((4, 5), 2))
        out = ad.linear(x, Tensor(np.eye(5)), Tensor(np.zeros(5)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_shape(self):
        out = ad.linear(Tensor(rand((64, 258))), Tensor(rand((128, 258))), Tensor(np.zeros(128)))
        assert out.shape == (64, 128)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            ad.linear(Tensor(rand((3, 4))), Tensor(rand((2, 5))), Tensor(np.zeros(2)))


class TestSoftmax:
    def test_constant_is_uniform(self):
        out = ad.softmax(Tensor(np.full((3, 7), 4.2)), axis=1)
        np.testing.assert_allclose(out.data, 1 / 7, atol=1e-12)

    def test_hand_case(self):
        # exp-normalize of [0, ln 2] is [1/3, 2/3]
        out = ad.softmax(Tensor(np.array([0.0, np.log(2.0)])), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3, 2 / 3], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_slices_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((3, 4, 5)) * 10)
        axis = int(rng.integers(0, 3))
        out = ad.softmax(x, axis=axis)
        np.testing.assert_allclose(out.data.sum(axis=axis), 1.0, atol=1e-6)
        assert (out.data > 0).all()


class TestBilinearResize:
    def test_constant(self):
        out = ad.bilinear_resize(Tensor(np.full((1, 2, 4, 4), 3.5)), 9, 5)
        np.testing.assert_allclose(out.data, 3.5, atol=1e-12)

    def test_row_interpolation(self):
        row = Tensor(np.array([[[[0.0, 1.0]]]]))
        out = ad.bilinear_resize(row, 1, 3)
        np.testing.assert_array_equal(out.data[0, 0, 0], [0.0, 0.5, 1.0])

    def test_identity_resize(self):
        x = Tensor(rand((1, 3, 5, 6), 3))
        out = ad.bilinear_resize(x, 5, 6)
        np.testing.assert_array_equal(out.data, x.data)

    @pytest.mark.parametrize("size", range(2, 18))
    def test_corner_fixed_points(self, size):
        x = Tensor(rand((1, 1, size, size), size))
        out = ad.bilinear_resize(x, 2 * size + 1, size + 3)
        for oy, iy in ((0, 0), (-1, -1)):
            for ox, ix in ((0, 0), (-1, -1)):
                assert out.data[0, 0, oy, ox] == x.data[0, 0, iy, ix]

    def test_degenerate_single_output_samples_corner(self):
        x = Tensor(rand((1, 1, 4, 4), 9))
        out = ad.bilinear_resize(x, 1, 4)
        np.testing.assert_array_equal(out.data[0, 0, 0], x.data[0, 0, 0])


class TestElementwise:
    def test_sigmoid_zero(self):
        assert ad.sigmoid(Tensor(np.zeros(3))).data[0] == 0.5

    def test_concat_channels_shape(self):
        a, b = Tensor(rand((1, 64, 8, 8))), Tensor(rand((1, 2, 8, 8)))
        assert ad.concat_channels([a, b]).shape == (1, 66, 8, 8)

    def test_concat_channels_mismatch(self):
        with pytest.raises(ShapeError):
            ad.concat_channels([Tensor(rand((1, 2, 4, 4))), Tensor(rand((1, 2, 5, 4)))])

    def test_mixed_dtype_rejected(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(rand((2,)), dtype=np.float32), Tensor(rand((2,)), dtype=np.float64))

    def test_avg_pool(self):
        x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
        out = ad.avg_pool2x2(x)
        np.testing.assert_allclose(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


class TestBackward:
    def test_sum_gives_ones(self):
        with Tape():
            x = Tensor(rand((3, 4), 5), requires_grad=True)
            grads = ad.reduce_sum(x).backward()
        np.testing.assert_array_equal(grads[x], np.ones((3, 4)))

    def test_mean_square_hand_case(self):
        # d/dx mean(x^2) at [1,2,3] is [2/3, 4/3, 2]
        with Tape():
            x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
            loss = ad.reduce_mean(ad.square(x))
            loss.backward()
        np.testing.assert_allclose(x.grad, [2 / 3, 4 / 3, 2.0], atol=1e-12)

    def test_double_backward_errors(self):
        with Tape():
            x = Tensor(np.array([2.0]), requires_grad=True)
            loss = ad.reduce_sum(ad.square(x))
            loss.backward()
            with pytest.raises(TapeError):
                loss.backward()

    def test_non_scalar_backward_errors(self):
        with Tape():
            x = Tensor(rand((2, 2)), requires_grad=True)
            out = ad.square(x)
            with pytest.raises(TapeError):
                out.backward()

    def test_backward_without_tape_errors(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        loss = ad.reduce_sum(x)
        with pytest.raises(TapeError):
            loss.backward()

    def test_shared_input_accumulates(self):
        # x*x contributes twice: d/dx = 2x
        with Tape():
            x = Tensor(np.array([3.0]), requires_grad=True)
            loss = ad.reduce_sum(x * x)
            loss.backward()
        np.testing.assert_allclose(x.grad, [6.0])


class TestGraphSemantics:
    def test_recorded_output_is_frozen(self):
        with Tape():
            x = Tensor(rand((2, 2)), requires_grad=True)
            out = ad.square(x)
            with pytest.raises(ValueError):
                out.data[0, 0] = 1.0

    def test_forward_is_deterministic(self):
        x = rand((2, 3, 8, 8), 11, dtype=np.float32)
        w = rand((4, 3, 3, 3), 12, dtype=np.float32)
        a = ad.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4, dtype=np.float32)), padding=1)
        b = ad.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4, dtype=np.float32)), padding=1)
        assert a.data.tobytes() == b.data.tobytes()

    def test_no_tape_means_no_recording(self):
        x = Tensor(rand((2, 2)), requires_grad=True)
        out = ad.square(x)
        assert out.tape is None

    def test_detach_severs_graph(self):
        with Tape():
            x = Tensor(rand((2, 2), 1), requires_grad=True)
            y = Tensor(rand((2, 2), 2), requires_grad=True)
            mid = ad.square(x).detach()
            loss = ad.reduce_sum(ad.square(mid) + ad.square(y))
            loss.backward()
        assert x.grad is None
        assert y.grad is not None


class TestFiniteDifferenceOracle:
    """Analytic gradients vs central differences (eps=1e-5), f64."""

    def test_primitive_suite_small(self):
        results = op_checks(range(3))
        failures = [r for r in results if not r.passed]
        assert not failures, "\n".join(f"{r.name}: {r.max_rel_err}" for r in failures)

    def test_relative_error_metric(self):
        assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
        assert relative_error(np.array([1.1]), np.array([1.0])) == pytest.approx(0.1)
