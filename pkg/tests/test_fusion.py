import numpy as np
import pytest

from rawgat_st import ops
from rawgat_st.fusion import FusionMode, NodeProjection, fuse, fused_dim, project_nodes
from rawgat_st.tensor import Tensor

from gradcheck import check_gradients


def rand(*shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestProjection:
    @pytest.mark.parametrize("n", [14, 23])
    def test_table_shapes(self, n):
        proj = NodeProjection(n, 12, np.random.default_rng(0))
        assert proj(Tensor(rand(n, 32).astype(np.float32))).shape == (12, 32)

    def test_identity(self):
        g = rand(5, 3)
        out = project_nodes(Tensor(g), Tensor(np.eye(5)), Tensor(np.zeros(5)))
        np.testing.assert_array_equal(out.data, g)

    def test_features_untouched(self):
        # each output node is an affine mix of the input nodes, per feature
        g, w, b = rand(4, 3), rand(4, 2, seed=1), rand(2, seed=2)
        out = project_nodes(Tensor(g), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(out, w.T @ g + b[:, None])

    def test_mismatch(self):
        with pytest.raises(ops.ShapeError):
            NodeProjection(14, 12, np.random.default_rng(0))(Tensor(rand(13, 32)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        arrays = [rng.standard_normal((2, 5, 3)), rng.standard_normal((5, 4)), rng.standard_normal(4)]
        assert check_gradients(lambda a: project_nodes(*a), arrays, rng) < 1e-4


class TestFuse:
    def test_modes(self):
        a, b = rand(12, 32), rand(12, 32, seed=1)
        np.testing.assert_array_equal(fuse(Tensor(a), Tensor(b), "add").data, a + b)
        np.testing.assert_array_equal(fuse(Tensor(a), Tensor(b), "mul").data, a * b)
        cat = fuse(Tensor(a), Tensor(b), "concat").data
        assert cat.shape == (12, 64)
        np.testing.assert_array_equal(cat[:, :32], a)

    def test_identities(self):
        a = rand(12, 32)
        np.testing.assert_array_equal(fuse(Tensor(a), Tensor(np.ones_like(a)), "mul").data, a)
        np.testing.assert_array_equal(fuse(Tensor(a), Tensor(np.zeros_like(a)), "add").data, a)

    @pytest.mark.parametrize("mode", ["add", "mul"])
    def test_commutative(self, mode):
        a, b = rand(12, 32), rand(12, 32, seed=1)
        np.testing.assert_array_equal(fuse(Tensor(a), Tensor(b), mode).data, fuse(Tensor(b), Tensor(a), mode).data)

    def test_concat_not_commutative(self):
        a, b = rand(12, 32), rand(12, 32, seed=1)
        assert not np.array_equal(fuse(Tensor(a), Tensor(b), "concat").data, fuse(Tensor(b), Tensor(a), "concat").data)

    def test_errors(self):
        with pytest.raises(ValueError):
            fuse(Tensor(rand(12, 32)), Tensor(rand(12, 32)), "max")
        with pytest.raises(ops.ShapeError):
            fuse(Tensor(rand(12, 32)), Tensor(rand(11, 32)), "add")

    def test_fused_dim(self):
        assert fused_dim("concat", 32) == 64
        assert fused_dim(FusionMode.MUL, 32) == 32

    def test_gradient_split(self):
        a = Tensor(rand(3, 2), requires_grad=True)
        b = Tensor(rand(3, 2, seed=1), requires_grad=True)
        up = rand(3, 2, seed=2)
        fuse(a, b, "mul").backward(up)
        np.testing.assert_allclose(a.grad, up * b.data)
        np.testing.assert_allclose(b.grad, up * a.data)
        a.zero_grad(), b.zero_grad()
        fuse(a, b, "add").backward(up)
        np.testing.assert_array_equal(a.grad, up)
        np.testing.assert_array_equal(b.grad, up)

    @pytest.mark.parametrize("mode", ["add", "mul", "concat"])
    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_fd(self, mode, seed):
        rng = np.random.default_rng(seed)
        arrays = [rng.standard_normal((4, 3)), rng.standard_normal((4, 3))]
        assert check_gradients(lambda a: fuse(a[0], a[1], mode), arrays, rng) < 1e-4
