import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfcert import grid1d, models
from mfcert.errors import GrowthGateFailed, InvalidModel, NonFinite, NotStronglyConcave
from mfcert.grid1d import ProductMeasure

points3 = arrays(np.float64, 3, elements=st.floats(-2.5, 2.5))


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


class TestPotentials:
    @pytest.mark.parametrize("make", [models.gaussian_well, models.quartic_well])
    def test_derivatives(self, make):
        V = make(1.3)
        x = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(V.d1(x), (V.eval(x + 1e-6) - V.eval(x - 1e-6)) / 2e-6, atol=1e-6)
        np.testing.assert_allclose(V.d2(x), (V.d1(x + 1e-6) - V.d1(x - 1e-6)) / 2e-6, atol=1e-5)

    def test_mode(self):
        assert models.gaussian_well(2.0, loc=0.7).mode() == pytest.approx(0.7, abs=1e-12)
        assert models.quartic_well().mode() == pytest.approx(0.0, abs=1e-12)

    def test_concavity_gate(self):
        with pytest.raises(NotStronglyConcave):
            models.ScalarPotential(lambda x: 0 * x, lambda x: 0 * x, lambda x: 0 * x, kappa=0.0)
        with pytest.raises(NotStronglyConcave):
            # V'' = -0.5 > -kappa for kappa = 1
            models.ScalarPotential(lambda x: -0.25 * x * x, lambda x: -0.5 * x, lambda x: -0.5 + 0 * x, kappa=1.0)

    def test_growth_gate_and_override(self):
        with pytest.raises(GrowthGateFailed):
            models.quartic_well(1.0, 1.0, growth=(1.0, 0.1))
        with pytest.raises(GrowthGateFailed):
            models.gaussian_well(1.0, growth=(10.0, 0.6))
        V = models.quartic_well(1.0, 1.0, growth=(1.0, 0.1), check_growth=False)
        assert not V.growth_checked

    def test_kernels_validate(self):
        for make in (models.neg_quadratic_kernel, models.neg_sqrt_kernel, models.neg_logcosh):
            K = make(0.5)
            u = np.linspace(-4, 4, 9)
            np.testing.assert_allclose(K.eval(u), K.eval(-u))
            np.testing.assert_allclose(K.d1(u), (K.eval(u + 1e-6) - K.eval(u - 1e-6)) / 2e-6, atol=1e-6)
        with pytest.raises(InvalidModel):
            models.InteractionKernel(lambda u: u, lambda u: 1 + 0 * u, lambda u: 0 * u)
        with pytest.raises(InvalidModel):
            models.InteractionKernel(lambda u: 0.5 * u * u, lambda u: u, lambda u: 1 + 0 * u)

    def test_kernel_scaling(self):
        K = models.neg_logcosh(1.0).scaled(3.0)
        assert K.a == pytest.approx(9.0)
        assert K.eval(np.array(1.0)) == pytest.approx(-3 * math.log(math.cosh(1.0)))

    def test_logcosh_is_stable(self):
        K = models.neg_logcosh(1.0)
        assert np.isfinite(K.eval(np.array(1e4)))
        assert K.eval(np.array(1e4)) == pytest.approx(-(1e4 - math.log(2)))


class TestCouplingMatrix:
    @pytest.mark.parametrize("J", [[[0, 1], [0, 0]], [[0, -1], [-1, 0]], [[1, 0], [0, 0]], [[0, 1, 2]], [[0, np.nan], [np.nan, 0]]])
    def test_rejects(self, J):
        with pytest.raises(InvalidModel):
            models.CouplingMatrix(J)

    def test_trace_and_doubly_stochastic(self):
        from mfcert import graphs

        J = models.CouplingMatrix(graphs.cycle(6))
        assert J.trace_sq == pytest.approx(6 * 0.5)
        assert J.is_doubly_stochastic()
        assert not models.CouplingMatrix(graphs.cycle(6, normalize="none")).is_doubly_stochastic()


class TestPairwise:
    @given(points3)
    def test_gradient_and_cross(self, x):
        m = models.PairwiseGibbs(models.quartic_well(1.0, 0.5), models.neg_sqrt_kernel(), [[0, 1, 0.5], [1, 0, 1], [0.5, 1, 0]])
        np.testing.assert_allclose(m.grad(x), fd_grad(m.f, x), atol=1e-5)
        cross = (m.partial(x + np.array([0, 1e-6, 0]), 0) - m.partial(x - np.array([0, 1e-6, 0]), 0)) / 2e-6
        assert models.cross_ij(m, x, 0, 1) == pytest.approx(cross, abs=1e-5)

    def test_batch_shapes(self, quartic_chain):
        X = np.zeros((4, 5, 3))
        assert quartic_chain.f(X).shape == (4, 5)
        assert quartic_chain.grad(X).shape == (4, 5, 3)

    def test_reductions_match_quadrature(self, quartic_chain):
        g = grid1d.Grid.centered(0.0, 6.0, 129)
        q = ProductMeasure([grid1d.gaussian(0.1 * i, 0.5 + 0.1 * i, g) for i in range(3)])
        X = np.stack(np.meshgrid(g.points, g.points, g.points, indexing="ij"), axis=-1)
        W = np.einsum("a,b,c->abc", q[0].wq, q[1].wq, q[2].wq)
        assert quartic_chain.expect_f(q) == pytest.approx(np.sum(W * quartic_chain.f(X)), abs=1e-10)
        cross = sum(np.sum(W * quartic_chain.cross(X, i, j) ** 2) for i, j in quartic_chain.edges)
        assert quartic_chain.cross_sq_sum(q) == pytest.approx(cross, abs=1e-10)
        # conditional expectation of f given x_1, up to a constant
        cond = quartic_chain.conditional(q, 1)
        brute = np.einsum("abc,a,c->b", quartic_chain.f(X), q[0].wq, q[2].wq)
        d = cond - brute
        assert np.ptp(d) < 1e-9

    def test_cond_var_sum_by_quadrature(self, gauss_pair):
        # d_1 f = -x1 - 0.5 (x1 - x2); conditional variance given x1 is 0.25 Var(x2)
        q = ProductMeasure([grid1d.gaussian(0.0, 0.8), grid1d.gaussian(0.0, 0.6)])
        assert gauss_pair.cond_var_sum(q) == pytest.approx(0.25 * (0.6 + 0.8), rel=1e-9)

    def test_gauss_reductions_match_quadratic(self, gauss_pair, gauss_quadratic):
        y = np.array([0.3, -0.4])
        np.testing.assert_allclose(gauss_pair.gauss_grad(y, 0.7), gauss_quadratic.gauss_grad(y, 0.7), atol=1e-12)
        assert gauss_pair.gauss_f(y, 0.7) == pytest.approx(gauss_quadratic.gauss_f(y, 0.7), abs=1e-12)
        assert gauss_pair.gauss_hess_sq(y, 0.7) == pytest.approx(gauss_quadratic.gauss_hess_sq(), abs=1e-12)

    def test_nonfinite_input(self, quartic_chain):
        with pytest.raises(NonFinite):
            models.eval_f(quartic_chain, [0.0, np.inf, 0.0])


class TestQuadratic:
    def test_not_concave(self):
        with pytest.raises(NotStronglyConcave):
            models.QuadraticModel([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NotStronglyConcave):
            models.QuadraticModel([[1.0, 1.0], [1.0, 1.0]]).kappa()
        with pytest.raises(InvalidModel):
            models.QuadraticModel([[1.0, 0.2], [0.0, 1.0]])

    def test_kappa_is_smallest_eigenvalue(self, gauss_quadratic):
        assert gauss_quadratic.kappa() == pytest.approx(1.0, abs=1e-10)
        assert models.smallest_eigenvalue(np.diag([3.0, 0.5, 2.0])) == pytest.approx(0.5)
        assert models.smallest_eigenvalue(np.zeros((2, 2))) == 0.0

    def test_center_and_constant(self):
        m = models.QuadraticModel([[2.0]], [1.0], c=0.25)
        np.testing.assert_allclose(m.center(), [0.5])
        assert m.f(np.array([0.0])) == pytest.approx(0.25)


class TestBayes:
    def test_posterior_potential(self):
        X = np.array([[1.0, 0.5], [0.0, 1.0], [1.0, 1.0]])
        y = np.array([0.3, -0.2, 1.0])
        m = models.BayesLinReg(X, y, 0.5, models.gaussian_well(1.0))
        b = np.array([0.2, -0.1])
        expect = -0.5 * b @ b - np.sum((y - X @ b) ** 2) / (2 * 0.5)
        assert m.f(b) == pytest.approx(expect)
        np.testing.assert_allclose(m.grad(b), fd_grad(m.f, b), atol=1e-6)
        assert m.kappa() == pytest.approx(1.0 + np.linalg.eigvalsh(X.T @ X)[0] / 0.5, rel=1e-8)
        assert m.cross(b, 0, 1) == pytest.approx(-(X.T @ X)[0, 1] / 0.5)

    def test_validation(self):
        with pytest.raises(InvalidModel):
            models.BayesLinReg(np.eye(2), [1.0, 2.0, 3.0], 1.0, models.gaussian_well())
        with pytest.raises(InvalidModel):
            models.BayesLinReg(np.eye(2), [1.0, 2.0], 0.0, models.gaussian_well())


class TestScaled:
    def test_scales_derivatives(self, quartic_chain):
        s = models.Scaled(quartic_chain, 2.5)
        x = np.array([0.1, -0.3, 0.2])
        assert s.f(x) == pytest.approx(2.5 * quartic_chain.f(x))
        assert s.kappa() == pytest.approx(2.5)
        q = quartic_chain.default_init(129)
        assert s.cross_sq_sum(q) == pytest.approx(6.25 * quartic_chain.cross_sq_sum(q))
        with pytest.raises(InvalidModel):
            models.Scaled(quartic_chain, 0.0)


class TestBlackBox:
    def test_matches_exact_quadratic(self, gauss_quadratic):
        bb = models.quadratic_blackbox(gauss_quadratic.A, mc_samples=40_000, seed=3)
        q = ProductMeasure([grid1d.gaussian(0.2, 0.7), grid1d.gaussian(-0.1, 0.9)])
        v, se = bb.expect_f_se(q)
        assert abs(v - gauss_quadratic.expect_f(q)) < 4 * se
        c, cse = bb.cross_sq_sum_se(q)
        assert c == pytest.approx(0.25)
        assert cse == pytest.approx(0.0, abs=1e-12)
        d = bb.conditional(q, 0) - gauss_quadratic.conditional(q, 0)
        assert np.ptp(d[400:625]) < 0.05

    def test_conditional_is_deterministic(self):
        bb = models.neg_logsumexp_blackbox(3, mc_samples=500)
        q = bb.default_init(129)
        np.testing.assert_array_equal(bb.conditional(q, 1), bb.conditional(q, 1))

    def test_bad_gradient_rejected(self):
        with pytest.raises(InvalidModel):
            models.BlackBox(2, lambda X: -np.sum(np.asarray(X) ** 2, axis=-1), lambda X: -np.asarray(X), lambda X, i, j: 0.0, 1.0)


class TestReference:
    def test_gaussian_reference_model(self):
        g = models.QuadraticModel(np.zeros((2, 2)), [0.5, 0.5])
        ref = models.gaussian_reference(2, 1.0)
        rm = models.ReferenceModel(g, ref)
        assert rm.kappa() == pytest.approx(1.0)
        x = np.array([0.3, -0.2])
        assert rm.f(x) == pytest.approx(0.05 - 0.5 * x @ x - math.log(2 * math.pi))
        with pytest.raises(InvalidModel):
            models.ReferenceModel(g, models.gaussian_reference(3, 1.0))

    def test_grid_reference_kappa(self):
        rho = ProductMeasure([grid1d.gaussian(0.0, 0.5)])
        assert models.Reference(rho).kappa == pytest.approx(2.0, rel=1e-6)
