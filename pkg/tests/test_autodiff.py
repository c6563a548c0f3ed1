"""Tensor op contracts and gradient checks against central differences."""

import numpy as np
import pytest

from pft_reid import autodiff as ad
from pft_reid.autodiff import Tensor, grad_check


def rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


class TestElementwise:
    def test_hadamard_example(self):
        out = ad.mul(Tensor([2.0, 3.0]), Tensor([0.5, 2.0]))
        assert out.data.tolist() == [1.0, 6.0]

    def test_add_zero_identity_bitwise(self):
        x = rand((4, 5), 0)
        out = ad.add(Tensor(x), Tensor(np.zeros((4, 5))))
        assert np.array_equal(out.data, x)

    def test_backward_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        ad.mul(x, x).sum().backward()
        assert x.grad.tolist() == [2.0, 4.0]

    def test_scale(self):
        out = ad.scale(Tensor([1.0, -2.0]), 3.0)
        assert out.data.tolist() == [3.0, -6.0]

    @pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul])
    def test_shape_mismatch_names_both_shapes(self, op):
        with pytest.raises(ValueError) as err:
            op(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
        assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)

    def test_grad_accumulates_across_uses(self):
        x = Tensor([3.0], requires_grad=True)
        (ad.mul(x, x) + x).sum().backward()  # d(x^2 + x)/dx = 2x + 1
        assert x.grad.tolist() == [7.0]


class TestMatmul:
    def test_identity(self):
        x = rand((2, 2), 1)
        out = ad.matmul(Tensor(np.eye(2)), Tensor(x))
        assert np.allclose(out.data, x)

    def test_row_sums(self):
        out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        assert out.data.tolist() == [[3.0], [7.0]]

    def test_inner_extent_mismatch(self):
        with pytest.raises(ValueError, match="inner extents"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_backward_matches_finite_differences(self):
        # random 3x4 @ 4x2, central-difference oracle at eps=1e-5
        b = rand((4, 2), 2)
        w = rand((3, 2), 3)

        def f(a):
            return ad.mul(ad.matmul(a, Tensor(b)), Tensor(w)).sum()

        assert grad_check(f, Tensor(rand((3, 4), 4))) < 1e-6


class TestSoftmaxAndNorms:
    def test_softmax_uniform(self):
        out = ad.softmax(Tensor([[0.0, 0.0, 0.0]]), axis=1)
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        out = ad.softmax(Tensor(rand((6, 9), 5) * 10), axis=1)
        assert np.all(out.data > 0) and np.all(out.data < 1)
        assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-12

    def test_softmax_invalid_axis(self):
        with pytest.raises(ValueError, match="axis"):
            ad.softmax(Tensor(np.zeros((2, 2))), axis=5)

    def test_softmax_conservation_gradient(self):
        # f = sum(softmax(x)) is constant, so the analytic gradient vanishes
        x = Tensor(rand((3, 7), 6), requires_grad=True)
        ad.softmax(x, axis=1).sum().backward()
        assert np.abs(x.grad).max() < 1e-12

    def test_layer_norm_rows_standardized(self):
        x = Tensor(rand((5, 16), 7) * 3 + 1)
        out = ad.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
        assert np.abs(out.data.mean(axis=1)).max() < 1e-12
        assert np.abs(out.data.var(axis=1) - 1.0).max() < 1e-3  # eps-shrunk

    def test_layer_norm_affine_width_mismatch(self):
        with pytest.raises(ValueError, match="width"):
            ad.layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


class TestShapeSurgery:
    def test_slice_concat_partition_identity(self):
        x = Tensor(rand((10, 4), 8))
        back = ad.concat([x[0:6], x[6:10]], axis=0)
        assert np.array_equal(back.data, x.data)

    def test_reshape_roundtrip_bitwise(self):
        x = Tensor(rand((6, 4), 9))
        assert np.array_equal(x.reshape((3, 8)).reshape((6, 4)).data, x.data)

    def test_reshape_bad_size(self):
        with pytest.raises(ValueError, match="reshape"):
            Tensor(np.zeros((2, 3))).reshape((4, 4))

    def test_slice_gradient_routing(self):
        x = Tensor(rand((5, 3), 10), requires_grad=True)
        x[1:3].sum().backward()
        expect = np.zeros((5, 3))
        expect[1:3] = 1.0
        assert np.array_equal(x.grad, expect)

    def test_slice_rejects_fancy_indexing(self):
        with pytest.raises(ValueError, match="slice"):
            Tensor(np.zeros((4, 4)))[[0, 1]]

    def test_concat_shape_mismatch(self):
        with pytest.raises(ValueError, match="concat"):
            ad.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)

    def test_take_rows_with_duplicates(self):
        x = Tensor(rand((4, 2), 11), requires_grad=True)
        out = ad.take_rows(x, [2, 2, 0])
        assert np.array_equal(out.data, x.data[[2, 2, 0]])
        out.sum().backward()
        assert x.grad[2].tolist() == [2.0, 2.0] and x.grad[0].tolist() == [1.0, 1.0]


class TestCompositePrimitives:
    def test_cross_entropy_label_range(self):
        with pytest.raises(ValueError, match="label"):
            ad.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])

    def test_pairwise_sqdist_values(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]])
        out = ad.pairwise_sqdist(Tensor(x))
        assert np.allclose(out.data, [[0.0, 25.0], [25.0, 0.0]])

    def test_gather_pairs(self):
        m = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        out = ad.gather_pairs(m, [0, 2, 2], [1, 3, 3])
        assert out.data.tolist() == [1.0, 11.0, 11.0]
        out.sum().backward()
        assert m.grad[2, 3] == 2.0 and m.grad[0, 1] == 1.0


OPS_FOR_GRAD_CHECK = {
    "add": lambda x, w: ad.mul(ad.add(x, Tensor(w)), Tensor(w * 0.7 + 0.3)).sum(),
    "add_scalar": lambda x, w: ad.mul(ad.add(x, 1.7), Tensor(w)).sum(),
    "sub": lambda x, w: ad.mul(ad.sub(x, Tensor(w)), Tensor(w + 2.0)).sum(),
    "mul": lambda x, w: ad.mul(ad.mul(x, Tensor(w)), Tensor(w - 0.5)).sum(),
    "scale": lambda x, w: ad.mul(ad.scale(x, 2.5), Tensor(w)).sum(),
    "matmul": lambda x, w: ad.mul(ad.matmul(x, Tensor(w)), Tensor(w.T)).sum(),
    "transpose": lambda x, w: ad.mul(ad.transpose(x), Tensor(w.T)).sum(),
    "add_bias": lambda x, w: ad.mul(ad.add_bias(x, Tensor(w[0])), Tensor(w)).sum(),
    "softmax": lambda x, w: ad.mul(ad.softmax(x, axis=1), Tensor(w)).sum(),
    "layer_norm": lambda x, w: ad.mul(
        ad.layer_norm(x, Tensor(np.ones(x.shape[1])), Tensor(np.zeros(x.shape[1]))), Tensor(w)
    ).sum(),
    "gelu": lambda x, w: ad.mul(ad.gelu(x), Tensor(w)).sum(),
    "relu": lambda x, w: ad.mul(ad.relu(x), Tensor(w)).sum(),
    "sqrt": lambda x, w: ad.mul(ad.sqrt(ad.mul(x, x) + 0.1), Tensor(w)).sum(),
    "sum": lambda x, w: (x.sum() * 1.3),
    "mean": lambda x, w: (x.mean() * 2.0),
    "slice": lambda x, w: ad.mul(x[1:3, 0:2], Tensor(w[1:3, 0:2])).sum(),
    "concat": lambda x, w: ad.mul(ad.concat([x[0:2], x[2:4], x], axis=0), Tensor(np.vstack([w[0:2], w[2:4], w]))).sum(),
    "reshape": lambda x, w: ad.mul(x.reshape((x.size,)), Tensor(w.reshape(-1))).sum(),
    "take_rows": lambda x, w: ad.mul(ad.take_rows(x, [0, 2, 2, 3]), Tensor(w[[0, 2, 2, 3]])).sum(),
    "cross_entropy": lambda x, w: ad.cross_entropy(x, np.arange(x.shape[0]) % x.shape[1]),
    "pairwise_sqdist": lambda x, w: ad.mul(ad.pairwise_sqdist(x), Tensor(w @ w.T)).sum(),
    "gather_pairs": lambda x, w: ad.gather_pairs(
        ad.pairwise_sqdist(x), [0, 1, 2], [3, 2, 0]
    ).sum(),
}


@pytest.mark.parametrize("name", sorted(OPS_FOR_GRAD_CHECK))
@pytest.mark.parametrize("seed", range(10))
def test_grad_check_every_op(name, seed):
    """Module invariant: each differentiable op passes at eps=1e-5, err<1e-4."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 4))
    w = rng.standard_normal((4, 4))
    f = OPS_FOR_GRAD_CHECK[name]
    assert grad_check(lambda t: f(t, w), Tensor(x)) < 1e-4


class TestGradCheck:
    def test_quadratic_is_exact(self):
        f = lambda t: ad.mul(t, t).sum()
        assert grad_check(f, Tensor([1.0, 2.0, 3.0])) < 1e-9

    def test_rejects_nonscalar(self):
        with pytest.raises(ValueError, match="scalar"):
            grad_check(lambda t: t, Tensor([1.0, 2.0]))

    def test_rejects_nonfinite(self):
        def f(t):
            return ad.mul(t, float("nan")).sum()

        with pytest.raises(ValueError, match="non-finite"):
            grad_check(f, Tensor([1.0]))

    def test_backward_requires_scalar_without_seed(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.add(x, 1.0).backward()


class TestForwardFiniteness:
    @pytest.mark.parametrize("seed", range(5))
    def test_softmax_extreme_logits_finite(self, seed):
        x = rand((3, 5), seed) * 500
        out = ad.softmax(Tensor(x), axis=1)
        assert np.isfinite(out.data).all()

    def test_sqrt_rejects_negative(self):
        with pytest.raises(ValueError, match="negative"):
            ad.sqrt(Tensor([-1.0]))
