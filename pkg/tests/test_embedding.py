import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, rel_err
from cvtrack.embedding import (EmbeddingNet, Layer, OptimizerState, downsample_backward,
                               downsample_embedding, embed_backward, embed_forward,
                               optimizer_step)
from cvtrack.errors import InputError, ShapeError, StateError
from cvtrack.gridmath import FeatureGrid


def small_net(rng, dims=(3, 5, 4), relu_last=False):
    layers = []
    for k in range(len(dims) - 1):
        relu = k < len(dims) - 2 or relu_last
        layers.append(Layer(rng.normal(size=dims[k:k + 2]), rng.normal(size=dims[k + 1]), relu))
    return EmbeddingNet(layers)


class TestConstruction:
    def test_default_shape(self):
        net = EmbeddingNet.init(10)
        assert len(net.layers) == 3 and net.output_channels == 128
        assert [l.relu for l in net.layers] == [True, True, False]

    def test_dims_must_chain(self):
        with pytest.raises(ShapeError):
            EmbeddingNet([Layer(np.zeros((2, 3)), np.zeros(3)), Layer(np.zeros((4, 2)), np.zeros(2))])

    def test_bias_length(self):
        with pytest.raises(ShapeError):
            EmbeddingNet([Layer(np.zeros((2, 3)), np.zeros(2))])

    def test_unknown_init_scheme(self):
        with pytest.raises(InputError):
            EmbeddingNet.init(4, scheme="xavier")

    def test_mirrored_init_is_linear(self, rng):
        net = EmbeddingNet.init(6, 16, hidden=8, rng=rng)
        a, b = rng.normal(size=(1, 6)), rng.normal(size=(1, 6))
        np.testing.assert_allclose(net.forward_cells(a + 2 * b),
                                   net.forward_cells(a) + 2 * net.forward_cells(b), atol=1e-12)

    def test_he_init_is_deterministic(self):
        a = EmbeddingNet.init(4, scheme="he", rng=np.random.default_rng(3))
        b = EmbeddingNet.init(4, scheme="he", rng=np.random.default_rng(3))
        for p, q in zip(a.parameters(), b.parameters()):
            assert np.array_equal(p, q)


class TestForward:
    def test_identity_layer(self, rng):
        f = FeatureGrid(rng.normal(size=(3, 3, 4)))
        net = EmbeddingNet([Layer(np.eye(4), np.zeros(4), relu=False)])
        assert np.array_equal(embed_forward(net, f).data, f.data)

    def test_zero_weights(self, rng):
        net = EmbeddingNet([Layer(np.zeros((3, 5)), np.zeros(5), relu=False)])
        assert not embed_forward(net, FeatureGrid(rng.normal(size=(2, 2, 3)))).data.any()

    def test_matches_per_cell_oracle(self, rng):
        net = small_net(rng)
        f = FeatureGrid(rng.normal(size=(4, 4, 3)))
        out = embed_forward(net, f).data
        for r in range(4):
            for c in range(4):
                h = np.maximum(f.data[r, c] @ net.layers[0].weight + net.layers[0].bias, 0)
                h = h @ net.layers[1].weight + net.layers[1].bias
                np.testing.assert_allclose(out[r, c], h, atol=1e-9)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            embed_forward(small_net(rng), FeatureGrid(np.zeros((2, 2, 7))))

    def test_keeps_spatial_dims_and_stride(self, rng):
        out = embed_forward(small_net(rng), FeatureGrid(np.zeros((5, 3, 3)), stride=4))
        assert out.shape == (5, 3, 4) and out.stride == 4

    @settings(max_examples=20)
    @given(st.integers(0, 2**31 - 1))
    def test_spatially_equivariant(self, seed):
        r = np.random.default_rng(seed)
        net = small_net(r)
        f = r.normal(size=(3, 4, 3))
        perm = r.permutation(12)
        out = embed_forward(net, FeatureGrid(f)).data.reshape(12, -1)
        shuffled = FeatureGrid(f.reshape(12, 3)[perm].reshape(3, 4, 3))
        out_p = embed_forward(net, shuffled).data.reshape(12, -1)
        np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


class TestBackward:
    def test_needs_forward(self, rng):
        with pytest.raises(StateError):
            embed_backward(small_net(rng), np.zeros((2, 2, 4)))

    def test_zero_upstream(self, rng):
        net = small_net(rng)
        embed_forward(net, FeatureGrid(rng.normal(size=(3, 3, 3))))
        grads, gx = embed_backward(net, np.zeros((3, 3, 4)))
        assert all(not g.any() for g in grads) and not gx.any()

    def test_linear_layer_outer_product(self, rng):
        net = EmbeddingNet([Layer(rng.normal(size=(3, 2)), np.zeros(2), relu=False)])
        f = rng.normal(size=(2, 2, 3))
        up = rng.normal(size=(2, 2, 2))
        embed_forward(net, FeatureGrid(f))
        grads, _ = embed_backward(net, up)
        expected = sum(np.outer(f[r, c], up[r, c]) for r in range(2) for c in range(2))
        np.testing.assert_allclose(grads[0], expected, atol=1e-12)
        np.testing.assert_allclose(grads[1], up.sum(axis=(0, 1)), atol=1e-12)

    @pytest.mark.parametrize("dims,size", [((3, 4), 2), ((3, 6, 4), 4), ((3, 6, 5, 4), 6)])
    def test_finite_differences(self, rng, dims, size):
        net = small_net(rng, dims)
        f = FeatureGrid(rng.normal(size=(size, size, 3)))
        up = rng.normal(size=(size, size, dims[-1]))

        def loss():
            return float(np.sum(embed_forward(net, f).data * up))

        loss()
        grads, gx = embed_backward(net, up)
        for p, g in zip(net.parameters(), grads):
            assert rel_err(g, central_diff(loss, p)) <= 1e-4
        assert rel_err(gx, central_diff(loss, f.data)) <= 1e-4


class TestOptimizer:
    def test_zero_gradient_keeps_params(self):
        p = [np.array([1.0, -2.0])]
        optimizer_step(OptimizerState(), p, [np.zeros(2)])
        assert p[0].tolist() == [1.0, -2.0]

    def test_first_step_value(self):
        p = [np.array([1.0])]
        state = OptimizerState()
        assert state.learning_rate == 1.25e-4
        optimizer_step(state, p, [np.array([1.0])])
        assert p[0][0] == pytest.approx(1.0 - 1.25e-4, abs=1e-10)
        assert state.step == 1

    def test_descends_on_square(self):
        x = [np.array([1.0])]
        state = OptimizerState(learning_rate=1e-3)
        last = 1.0
        for _ in range(1000):
            optimizer_step(state, x, [2 * x[0]])
            assert abs(x[0][0]) < last
            last = abs(x[0][0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            optimizer_step(OptimizerState(), [np.zeros(2)], [np.zeros(3)])


class TestDownsample:
    def test_constant(self):
        out = downsample_embedding(FeatureGrid(np.full((4, 6, 2), 3.0), stride=4))
        assert out.shape == (2, 3, 2) and np.all(out.data == 3.0) and out.stride == 8

    def test_mean_of_four(self):
        out = downsample_embedding(FeatureGrid(np.array([[0.0, 1.0], [2.0, 3.0]])))
        assert out.data[0, 0, 0] == pytest.approx(1.5)

    def test_block_mean_oracle(self, rng):
        d = rng.normal(size=(6, 4, 3))
        out = downsample_embedding(FeatureGrid(d)).data
        for i in range(3):
            for j in range(2):
                np.testing.assert_allclose(out[i, j], d[2 * i:2 * i + 2, 2 * j:2 * j + 2].mean(axis=(0, 1)))

    def test_odd_rejected(self):
        with pytest.raises(ShapeError):
            downsample_embedding(FeatureGrid(np.zeros((3, 4, 1))))

    def test_backward_is_adjoint(self, rng):
        x, y = rng.normal(size=(4, 6, 2)), rng.normal(size=(2, 3, 2))
        lhs = np.sum(downsample_embedding(FeatureGrid(x)).data * y)
        assert lhs == pytest.approx(np.sum(x * downsample_backward(y)))
