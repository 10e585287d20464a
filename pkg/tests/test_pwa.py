import numpy as np
import pytest

from specxai.errors import RegionBoundaryError, ResourceError
from specxai.netgraph import Dense, NetworkModel, ReLU, forward
from specxai.pwa import (
    bias_decomposition,
    extract_affine,
    jacobian_check,
    same_region,
)

from netgen import corpus, random_input, random_relu_mlp


def pwa_residual(model, x):
    op = extract_affine(model, x)
    y = forward(model, x)[-1].ravel()
    return float(np.max(np.abs(y - (op.u @ np.asarray(x).ravel() + op.b)))), y


class TestExtractAffine:
    def test_identity_network(self):
        m = NetworkModel((3,), (Dense(np.eye(3)),))
        op = extract_affine(m, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(op.u, np.eye(3))
        np.testing.assert_array_equal(op.b, np.zeros(3))

    def test_dense_relu_hand_derived(self):
        m = NetworkModel(
            (2,),
            (Dense(np.array([[1.0, -1.0], [2.0, 1.0]]), np.array([0.5, -3.0])),
             ReLU()),
        )
        op = extract_affine(m, [1.0, 1.0])
        np.testing.assert_allclose(op.u, [[1.0, -1.0], [0.0, 0.0]])
        np.testing.assert_allclose(op.u @ np.array([1.0, 1.0]), [0.0, 0.0])
        np.testing.assert_allclose(op.b, [0.5, 0.0])
        assert op.boundary  # the second pre-activation is exactly zero

    def test_scalar_relu_negative_input(self):
        m = NetworkModel((1,), (ReLU(),))
        op = extract_affine(m, [-2.0])
        np.testing.assert_array_equal(op.u, [[0.0]])
        np.testing.assert_array_equal(op.b, [0.0])
        assert forward(m, [-2.0])[-1][0] == 0.0

    def test_pwa_identity_on_mixed_corpus(self):
        """f(x) == u @ x + b across all supported architectures."""
        for model, rng in corpus(seed=202, count=40):
            for _ in range(3):
                x = random_input(rng, model)
                resid, y = pwa_residual(model, x)
                assert resid <= 1e-8 * (1.0 + np.max(np.abs(y)))

    def test_element_budget_names_layer(self):
        rng = np.random.default_rng(0)
        m = random_relu_mlp(rng, in_dim=8, depth=3)
        with pytest.raises(ResourceError, match="layer"):
            extract_affine(m, rng.normal(size=8), budget=4)


class TestBiasDecomposition:
    def test_bias_free_network(self):
        rng = np.random.default_rng(1)
        m = random_relu_mlp(rng, in_dim=4, depth=3, bias=False)
        decomp = bias_decomposition(m, rng.normal(size=4))
        assert all(np.all(beta == 0.0) for beta in decomp.betas)
        np.testing.assert_array_equal(decomp.total, np.zeros_like(decomp.total))

    def test_single_dense_layer(self):
        rng = np.random.default_rng(2)
        w, b = rng.normal(size=(3, 2)), rng.normal(size=3)
        m = NetworkModel((2,), (Dense(w, b),))
        decomp = bias_decomposition(m, rng.normal(size=2))
        np.testing.assert_allclose(decomp.betas[0], b, atol=1e-12)
        np.testing.assert_allclose(decomp.total, b, atol=1e-12)

    def test_sum_matches_residual(self):
        """sum of per-layer betas equals f(x) - u @ x."""
        rng = np.random.default_rng(3)
        m = random_relu_mlp(rng, in_dim=5, depth=3)
        x = rng.normal(size=5)
        decomp = bias_decomposition(m, x)
        op = extract_affine(m, x)
        direct = forward(m, x)[-1] - op.u @ x
        np.testing.assert_allclose(decomp.total, direct, atol=1e-10)

    def test_one_beta_per_layer(self):
        rng = np.random.default_rng(4)
        m = random_relu_mlp(rng, in_dim=3, depth=2)
        decomp = bias_decomposition(m, rng.normal(size=3))
        assert len(decomp.betas) == len(m.layers)


class TestJacobianCheck:
    def test_linear_network_any_step(self):
        rng = np.random.default_rng(5)
        m = NetworkModel((4,), (Dense(rng.normal(size=(3, 4)), rng.normal(size=3)),))
        assert jacobian_check(m, rng.normal(size=4), step=0.1) <= 1e-9

    def test_random_relu_mlp(self):
        rng = np.random.default_rng(6)
        m = random_relu_mlp(rng, in_dim=2, depth=3, max_width=16)
        assert jacobian_check(m, rng.normal(size=2), step=1e-5) <= 1e-6

    def test_boundary_input_is_refused(self):
        m = NetworkModel(
            (2,), (Dense(np.eye(2), np.array([0.0, -1.0])), ReLU())
        )
        with pytest.raises(RegionBoundaryError):
            jacobian_check(m, [0.0, 1.0])  # both pre-activations exactly 0


class TestSameRegion:
    def test_identical_inputs(self):
        rng = np.random.default_rng(7)
        m = random_relu_mlp(rng, in_dim=3, depth=2)
        x = rng.normal(size=3)
        assert same_region(m, x, x)

    def test_scalar_relu_sign_flip(self):
        m = NetworkModel((1,), (ReLU(),))
        assert not same_region(m, [1.0], [-1.0])

    def test_equivalence_with_operator_equality(self):
        """same_region <=> operators agree, on 500 input pairs."""
        rng = np.random.default_rng(8)
        m = random_relu_mlp(rng, in_dim=4, depth=3)
        for trial in range(500):
            x1 = rng.normal(size=4)
            if trial % 2 == 0:
                x2 = x1 + rng.normal(size=4) * 1e-7  # usually stays in region
            else:
                x2 = rng.normal(size=4)
            same = same_region(m, x1, x2)
            u1 = extract_affine(m, x1).u
            u2 = extract_affine(m, x2).u
            agree = float(np.max(np.abs(u1 - u2))) < 1e-10
            assert same == agree

    def test_operator_constant_on_segment(self):
        """u is constant at 10 interior points of a same-region segment."""
        rng = np.random.default_rng(9)
        m = random_relu_mlp(rng, in_dim=4, depth=3)
        x1 = rng.normal(size=4)
        x2 = x1 * (1.0 + 1e-4)
        if not same_region(m, x1, x2):
            pytest.skip("perturbation crossed a region boundary")
        u_ref = extract_affine(m, x1).u
        for t in np.linspace(0.0, 1.0, 12)[1:-1]:
            xt = (1 - t) * x1 + t * x2
            np.testing.assert_allclose(extract_affine(m, xt).u, u_ref, atol=1e-10)
