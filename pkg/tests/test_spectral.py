import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specxai.errors import DimensionError, NormalizationError
from specxai.netgraph import Dense, NetworkModel, ReLU, forward
from specxai.spectral import (
    alpha_decomposition,
    change_of_basis,
    feature_average,
    feature_contraction,
    layer_sweep,
    reduce_coefficients,
    split_at,
    sv_similarity,
    symbolic,
)

from netgen import corpus, random_input, random_relu_mlp


class TestSplitAt:
    def test_last_layer_split_leaves_identity_left(self):
        rng = np.random.default_rng(0)
        m = random_relu_mlp(rng, in_dim=4, depth=3)
        x = rng.normal(size=4)
        split = split_at(m, x, len(m.layers), output_index=0)
        np.testing.assert_array_equal(split.L, np.eye(split.L.shape[0]))

    def test_two_layer_linear_split(self):
        rng = np.random.default_rng(1)
        w1, w2 = rng.normal(size=(4, 3)), rng.normal(size=(2, 4))
        m = NetworkModel((3,), (Dense(w1), Dense(w2)))
        split = split_at(m, rng.normal(size=3), 1, output_index=0)
        np.testing.assert_allclose(split.R, w1, atol=1e-12)
        np.testing.assert_allclose(split.L, w2, atol=1e-12)

    def test_reconstruction_at_every_layer(self):
        rng = np.random.default_rng(2)
        m = random_relu_mlp(rng, in_dim=5, depth=4)
        x = rng.normal(size=5)
        y = forward(m, x)[-1]
        for l_s in range(1, len(m.layers) + 1):
            split = split_at(m, x, l_s, output_index=1)
            recon = split.L_hat @ split.c + split.bias
            np.testing.assert_allclose(recon, y, atol=1e-8 * (1 + np.max(np.abs(y))))

    def test_layer_out_of_range(self):
        rng = np.random.default_rng(3)
        m = random_relu_mlp(rng, in_dim=3, depth=2)
        with pytest.raises(DimensionError):
            split_at(m, rng.normal(size=3), 0, output_index=0)
        with pytest.raises(DimensionError):
            split_at(m, rng.normal(size=3), len(m.layers) + 1, output_index=0)

    def test_default_output_index_is_argmax(self):
        rng = np.random.default_rng(4)
        m = random_relu_mlp(rng, in_dim=3, depth=2)
        x = rng.normal(size=3)
        split = split_at(m, x, 1)
        assert split.output_index == int(np.argmax(forward(m, x)[-1]))

    def test_rank_bounded_by_intermediate_width(self):
        rng = np.random.default_rng(5)
        m = NetworkModel(
            (6,),
            (Dense(rng.normal(size=(2, 6))), ReLU(),
             Dense(rng.normal(size=(5, 2)))),
        )
        split = split_at(m, rng.normal(size=6), 2, output_index=0)
        assert split.svd.rank_used <= 2


class TestAlphaDecomposition:
    def test_rank_one_right_operator(self):
        rng = np.random.default_rng(6)
        w = np.outer(rng.normal(size=4), rng.normal(size=3))
        m = NetworkModel((3,), (Dense(w, rng.normal(size=4)),))
        x = rng.normal(size=3)
        split = split_at(m, x, 1, output_index=2)
        decomp = alpha_decomposition(split)
        y_j = forward(m, x)[-1][2]
        assert abs(decomp.alphas[0] - (y_j - decomp.residual_bias)) <= 1e-10
        np.testing.assert_allclose(decomp.alphas[1:], 0.0, atol=1e-10)

    def test_orthogonal_right_operator(self):
        rng = np.random.default_rng(7)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        m = NetworkModel((4,), (Dense(q),))
        x = rng.normal(size=4)
        split = split_at(m, x, 1, output_index=0)
        np.testing.assert_allclose(split.svd.sigma, 1.0, atol=1e-12)
        decomp = alpha_decomposition(split)
        projections = split.svd.V.T @ x
        np.testing.assert_allclose(
            decomp.alphas, decomp.psi * projections, atol=1e-12
        )

    def test_sum_identity_random(self):
        rng = np.random.default_rng(8)
        m = random_relu_mlp(rng, in_dim=5, depth=3)
        x = rng.normal(size=5)
        split = split_at(m, x, 2, output_index=1)
        decomp = alpha_decomposition(split)
        y_j = forward(m, x)[-1][1]
        assert abs(decomp.alphas.sum() + decomp.residual_bias - y_j) <= 1e-8 * (
            1 + abs(y_j)
        )


class TestReduceCoefficients:
    def test_worked_example_mixed(self):
        red = reduce_coefficients([5.0, -3.0, 2.0, -1.0])
        np.testing.assert_array_equal(red.a_hat, [2.0, 1.0])
        np.testing.assert_allclose(red.a_tilde, [2.0 / 3.0, 1.0 / 3.0])
        assert red.iterations == 1
        assert red.spectral_index_map == (0, 2)

    def test_worked_example_already_homogeneous(self):
        red = reduce_coefficients([1.0, 2.0])
        np.testing.assert_array_equal(red.a_hat, [1.0, 2.0])
        np.testing.assert_allclose(red.a_tilde, [1.0 / 3.0, 2.0 / 3.0])
        assert red.iterations == 0

    def test_worked_example_two_passes(self):
        red = reduce_coefficients([5.0, -3.0, -4.0])
        np.testing.assert_array_equal(red.a_hat, [-2.0])
        np.testing.assert_allclose(red.a_tilde, [1.0])
        assert red.iterations == 2
        assert red.a_hat[0] < 0.0

    def test_total_cancellation_warns_empty(self):
        with pytest.warns(UserWarning):
            red = reduce_coefficients([3.0, -3.0])
        assert red.a_hat.size == 0
        assert red.a_tilde.size == 0

    @given(
        st.lists(
            st.floats(min_value=-1e6, max_value=1e6,
                      allow_nan=False, allow_infinity=False),
            min_size=1, max_size=40,
        )
    )
    @settings(max_examples=300, deadline=None)
    def test_reduction_properties(self, values):
        """Conservation, termination, homogeneous sign, unit normalization."""
        alphas = np.array(values)
        red = reduce_coefficients(alphas)
        total = float(alphas.sum())
        scale = float(np.sum(np.abs(alphas))) + 1.0
        # sum preserved at every pass
        for t in red.pass_totals:
            assert abs(t - total) <= 1e-9 * scale
        assert red.iterations <= len(values)
        if red.a_hat.size:
            signs = np.sign(red.a_hat)
            assert np.all(signs == signs[0])
            assert abs(red.a_hat.sum() - total) <= 1e-9 * scale
            assert abs(red.a_tilde.sum() - 1.0) <= 1e-12
            assert all(0 <= k < len(values) for k in red.spectral_index_map)
        else:
            assert abs(total) <= 1e-9 * scale


class TestFeatureContraction:
    def test_single_channel_is_elementwise_product(self):
        phi = np.array([1.0, -2.0, 3.0])
        x = np.array([4.0, 5.0, -6.0])
        cmap = feature_contraction(phi, x)
        np.testing.assert_array_equal(cmap.values, phi * x)

    def test_zero_input_cancels_pixelwise(self):
        phi = np.ones((3, 3, 2))
        cmap = feature_contraction(phi, np.zeros((3, 3, 2)))
        np.testing.assert_array_equal(cmap.values, np.zeros((3, 3)))

    def test_sums_to_full_dot_product(self):
        rng = np.random.default_rng(9)
        phi = rng.normal(size=(5, 4, 3))
        x = rng.normal(size=(5, 4, 3))
        cmap = feature_contraction(phi, x)
        assert cmap.values.shape == (5, 4)
        assert abs(cmap.values.sum() - float(phi.ravel() @ x.ravel())) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            feature_contraction(np.ones((2, 2)), np.ones((3, 2)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_completeness_property(self, seed):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(1, 7)), int(rng.integers(1, 7)),
                 int(rng.integers(1, 5)))
        phi = rng.normal(size=shape)
        x = rng.normal(size=shape)
        cmap = feature_contraction(phi, x)
        full = float(phi.ravel() @ x.ravel())
        assert abs(cmap.values.sum() - full) <= 1e-10 * (1 + abs(full))


class TestFeatureAverage:
    def test_single_channel_identity(self):
        phi = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(feature_average(phi).values, phi)

    def test_constant_ones(self):
        phi = np.ones((4, 4, 3))
        np.testing.assert_array_equal(feature_average(phi).values, np.ones((4, 4)))

    def test_matches_mean_oracle(self):
        rng = np.random.default_rng(10)
        phi = rng.normal(size=(3, 5, 4))
        np.testing.assert_allclose(
            feature_average(phi).values, phi.mean(axis=-1), atol=1e-12
        )


class TestSymbolic:
    def test_single_linear_layer_scalar_output(self):
        rng = np.random.default_rng(11)
        m = NetworkModel((6,), (Dense(rng.normal(size=(1, 6))),))
        x = rng.normal(size=6)
        sym = symbolic(m, x, 1, output_index=0)
        y = forward(m, x)[-1][0]
        assert abs(sym.reconstructed - y) <= 1e-8 * (1 + abs(y))
        assert len(sym.terms) == 1  # rank-one right operator
        for term in sym.terms:
            assert abs(term.map.sum() - 1.0) <= 1e-10

    def test_bias_only_network(self):
        b = np.array([3.0, -1.0])
        m = NetworkModel((2,), (Dense(np.zeros((2, 2)), b),))
        sym = symbolic(m, [1.0, 2.0], 1, output_index=0)
        assert sym.terms == ()
        assert abs(sym.bias_map.sum() - 3.0) <= 1e-12

    def test_reduce_mode_keeps_reconstruction(self):
        rng = np.random.default_rng(12)
        m = random_relu_mlp(rng, in_dim=6, depth=3)
        x = rng.normal(size=6)
        sym = symbolic(m, x, 2, output_index=0, reduce=True)
        y = forward(m, x)[-1][0]
        assert abs(sym.reconstructed - y) <= 1e-7 * (1 + abs(y))
        if sym.terms:
            signs = [np.sign(t.alpha) for t in sym.terms]
            assert len(set(signs)) == 1

    def test_alpha_threshold_folds_into_remainder(self):
        rng = np.random.default_rng(13)
        m = random_relu_mlp(rng, in_dim=6, depth=2)
        x = rng.normal(size=6)
        sym_all = symbolic(m, x, 1, output_index=0)
        sym_cut = symbolic(m, x, 1, output_index=0, alpha_threshold=1e9)
        assert sym_cut.terms == ()
        y = forward(m, x)[-1][0]
        assert abs(sym_cut.reconstructed - y) <= 1e-7 * (1 + abs(y))
        assert len(sym_all.terms) >= len(sym_cut.terms)

    def test_grid_reshaping(self):
        rng = np.random.default_rng(14)
        m = NetworkModel((12,), (Dense(rng.normal(size=(2, 12))),),
                         display_shape=(2, 2, 3))
        x = rng.normal(size=12)
        sym = symbolic(m, x, 1, output_index=0)
        assert sym.bias_map.shape == (2, 2)
        for term in sym.terms:
            assert term.map.shape == (2, 2)


class TestSvSimilarity:
    def test_self_similarity(self):
        v = np.array([0.6, 0.8])
        gram = sv_similarity([v, v])
        np.testing.assert_allclose(gram, np.ones((2, 2)), atol=1e-12)

    def test_orthogonal_basis(self):
        gram = sv_similarity([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        np.testing.assert_allclose(gram, np.eye(2), atol=1e-12)

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(15)
        vecs = []
        for _ in range(5):
            v = rng.normal(size=8)
            vecs.append(v / np.linalg.norm(v))
        gram = sv_similarity(vecs)
        for i in range(5):
            for j in range(5):
                assert abs(gram[i, j] - float(vecs[i] @ vecs[j])) <= 1e-12

    def test_rejects_unnormalized(self):
        with pytest.raises(NormalizationError):
            sv_similarity([np.array([1.0, 1.0])])

    def test_rejects_mixed_dimensions(self):
        with pytest.raises(DimensionError):
            sv_similarity([np.array([1.0]), np.array([1.0, 0.0])])


class TestChangeOfBasis:
    def test_projections_reconstruct_input(self):
        """For a full-rank square operator the basis spans the input."""
        rng = np.random.default_rng(16)
        m = NetworkModel((5,), (Dense(rng.normal(size=(5, 5))),))
        x = rng.normal(size=5)
        split = split_at(m, x, 1, output_index=0)
        proj = change_of_basis(split)
        recon = split.svd.V @ proj
        np.testing.assert_allclose(recon, x, atol=1e-10)


class TestLayerSweep:
    def test_single_layer_model_matches_split(self):
        rng = np.random.default_rng(17)
        m = NetworkModel((4,), (Dense(rng.normal(size=(3, 4)), rng.normal(size=3)),))
        x = rng.normal(size=4)
        sweep = layer_sweep(m, x, output_index=0)
        assert len(sweep) == 1
        split = split_at(m, x, 1, output_index=0)
        np.testing.assert_allclose(sweep[0].spectrum, split.svd.sigma, atol=1e-12)

    def test_deep_linear_net_is_split_invariant(self):
        rng = np.random.default_rng(18)
        dims = [4, 5, 3, 6, 2]
        layers = tuple(
            Dense(rng.normal(size=(dims[i + 1], dims[i])))
            for i in range(len(dims) - 1)
        )
        m = NetworkModel((4,), layers)
        x = rng.normal(size=4)
        y = forward(m, x)[-1]
        sweep = layer_sweep(m, x, output_index=1)
        assert len(sweep) == len(layers)
        for entry in sweep:
            assert entry.error is None
            assert entry.residual <= 1e-8 * (1 + abs(y[1]))

    def test_resource_error_recorded_not_raised(self):
        rng = np.random.default_rng(19)
        m = random_relu_mlp(rng, in_dim=6, depth=3, max_width=24)
        sweep = layer_sweep(m, rng.normal(size=6), output_index=0, budget=16)
        assert any(entry.error for entry in sweep)

    def test_mixed_corpus_reconstruction(self):
        for model, rng in corpus(seed=404, count=8):
            x = random_input(rng, model)
            y = forward(model, x)[-1]
            j = int(np.argmax(y))
            for entry in layer_sweep(model, x, output_index=j):
                if entry.error is None:
                    assert entry.residual <= 1e-7 * (1 + abs(y[j]))
