import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfcert import grid1d, models, oracle
from mfcert.errors import GridOverflow, InvalidModel, NoConvergence
from mfcert.grid1d import Grid, ProductMeasure
from mfcert.mfsolver import (
    SolveOptions,
    cavi_solve,
    cavi_solve_ref,
    conditional_logdensity,
    fixed_point_residual,
    random_init,
    tilt_solve,
    with_options,
)


def spd(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    return B @ B.T / n + 0.5 * np.eye(n)


class TestGaussian:
    def test_pair_fixture(self, gauss_pair):
        res = cavi_solve(gauss_pair)
        np.testing.assert_allclose(res.qstar.variances, [2 / 3, 2 / 3], rtol=1e-9)
        np.testing.assert_allclose(res.qstar.means, 0.0, atol=1e-12)
        # logZ - R_f for the precision [[1.5, -0.5], [-0.5, 1.5]]
        assert res.elbo == pytest.approx(1.4324116, abs=1e-6)
        assert res.converged
        assert res.fixed_point_residual < 1e-8

    @given(st.integers(0, 10_000), st.sampled_from([2, 3, 4]))
    def test_random_precisions(self, seed, n):
        A = spd(seed, n)
        truth = oracle.gaussian_truth(A)
        res = cavi_solve(models.QuadraticModel(A))
        np.testing.assert_allclose(res.qstar.variances, 1 / np.diag(A), rtol=1e-6)
        assert res.elbo == pytest.approx(truth.elbo, abs=1e-7)

    def test_nonzero_mean(self):
        A = spd(1, 3)
        b = np.array([1.0, -2.0, 0.5])
        res = cavi_solve(models.QuadraticModel(A, b))
        np.testing.assert_allclose(res.qstar.means, np.linalg.solve(A, b), atol=1e-7)


class TestAscent:
    @pytest.mark.parametrize("damping", [0.0, 0.5])
    def test_monotone_trace(self, quartic_chain, damping):
        res = cavi_solve(quartic_chain, "random", SolveOptions(seed=4, damping=damping))
        assert np.min(res.increments) >= -1e-9
        assert res.elbo_trace.size == 1 + res.sweeps_used * 3

    def test_schedules_agree(self, quartic_chain):
        gs = cavi_solve(quartic_chain)
        jac = cavi_solve(quartic_chain, opts=SolveOptions(schedule="jacobi"))
        assert jac.elbo_trace.size == jac.sweeps_used + 1
        assert max(grid1d.w2(a, b) for a, b in zip(gs.qstar, jac.qstar)) < 1e-8
        assert jac.elbo == pytest.approx(gs.elbo, abs=1e-10)

    @given(st.integers(0, 1000), st.integers(0, 1000))
    def test_unique_optimizer(self, s1, s2):
        m = models.PairwiseGibbs(models.quartic_well(1.0, 0.5), models.neg_logcosh(1.0), [[0, 1], [1, 0]])
        opts = SolveOptions(grid_points=257)
        a = cavi_solve(m, "random", with_options(opts, seed=s1))
        b = cavi_solve(m, "random", with_options(opts, seed=s2))
        assert max(grid1d.w2(x, y) for x, y in zip(a.qstar, b.qstar)) < 1e-6

    def test_fixed_point_property(self, quartic_chain):
        q = cavi_solve(quartic_chain).qstar
        for i in range(3):
            target = grid1d.normalize(conditional_logdensity(quartic_chain, q, i), q[i].grid)
            np.testing.assert_allclose(target.logq, q[i].logq, atol=1e-8)
        assert fixed_point_residual(quartic_chain, q) < 1e-8

    def test_optimum_beats_other_products(self, quartic_chain):
        from mfcert.certify import elbo

        res = cavi_solve(quartic_chain)
        for seed in range(5):
            assert elbo(quartic_chain, random_init(quartic_chain, seed)) <= res.elbo + 1e-12

    def test_no_convergence(self, quartic_chain):
        with pytest.raises(NoConvergence):
            cavi_solve(quartic_chain, "random", SolveOptions(max_sweeps=1, seed=1))

    def test_window_expansion(self):
        m = models.PairwiseGibbs(models.gaussian_well(1.0, loc=3.0), models.zero_kernel(), [[0, 0], [0, 0]])
        start = ProductMeasure([grid1d.gaussian(0.0, 1.0, Grid(-2.5, 2.5, 257))] * 2)
        res = cavi_solve(m, start)
        assert res.expansions
        np.testing.assert_allclose(res.qstar.means, 3.0, atol=1e-6)

    def test_grid_overflow(self):
        m = models.PairwiseGibbs(models.gaussian_well(1.0, loc=500.0), models.zero_kernel(), [[0.0]])
        start = ProductMeasure([grid1d.gaussian(0.0, 1.0, Grid(-2.0, 2.0, 129))])
        with pytest.raises(GridOverflow):
            cavi_solve(m, start)

    def test_bad_init(self, quartic_chain):
        with pytest.raises(InvalidModel):
            cavi_solve(quartic_chain, "nonsense")
        with pytest.raises(InvalidModel):
            cavi_solve(quartic_chain, ProductMeasure([grid1d.gaussian(0, 1)]))


class TestOptions:
    @pytest.mark.parametrize("kw", [{"damping": 1.0}, {"tol_elbo": 0.0}, {"schedule": "random"}, {"max_sweeps": 0}, {"tilt_step": 0.0}])
    def test_rejects(self, kw):
        with pytest.raises(InvalidModel):
            SolveOptions(**kw)

    def test_roundtrip(self):
        o = SolveOptions(damping=0.3, seed=7)
        assert SolveOptions.from_dict(o.to_dict()) == o
        with pytest.raises(InvalidModel):
            SolveOptions.from_dict({"speed": 1})


class TestReferenceMode:
    def test_gaussian_reference_quadratic(self):
        # e^{g} against N(0,1)^2 with g = -(x1 + x2)^2 / 8: Q* has precision 1 + 1/4 per site
        g = models.QuadraticModel(np.full((2, 2), 0.25))
        res = cavi_solve_ref(g, models.gaussian_reference(2, 1.0))
        np.testing.assert_allclose(res.qstar.variances, 1 / 1.25, rtol=1e-8)
        assert res.mode == "reference"

    def test_grid_reference_equals_lebesgue(self, gauss_pair):
        # rho_i proportional to e^{V}: then e^{f} dx = Z_V^2 e^{g} d(rho x rho)
        V = models.gaussian_well(1.0)
        g = models.PairwiseGibbs(models.ScalarPotential(lambda x: 0 * x, lambda x: 0 * x, lambda x: -1e-9 + 0 * x, 1e-9, check=False),
                                 models.neg_quadratic_kernel(), [[0, 0.5], [0.5, 0]])
        windows = gauss_pair.windows()
        rho = ProductMeasure([grid1d.normalize(V.eval(w.points), w) for w in windows])
        res = cavi_solve_ref(g, rho)
        direct = cavi_solve(gauss_pair)
        shift = sum(r.logZ1 for r in rho)
        assert res.elbo + shift == pytest.approx(direct.elbo, abs=1e-9)


class TestTilt:
    def test_fixture(self):
        m = models.QuadraticModel([[1.0]], [1.0], -0.5)
        res = tilt_solve(m, 1.0)
        assert res.ystar[0] == pytest.approx(0.5, abs=1e-9)
        assert res.value == pytest.approx(-0.75, abs=1e-9)

    @given(st.floats(0.2, 3.0), st.floats(-2, 2), st.floats(0.1, 2.0))
    def test_quadratic_closed_form(self, a, b, t):
        # y = t(-a y + b) gives y = t b / (1 + t a)
        m = models.QuadraticModel([[a]], [b])
        y, value = tilt_solve(m, t)
        assert y[0] == pytest.approx(t * b / (1 + t * a), abs=1e-8)
        expect = -0.5 * a * (y[0] ** 2 + t) + b * y[0] - y[0] ** 2 / (2 * t)
        assert value == pytest.approx(expect, abs=1e-10)

    def test_bad_time(self, gauss_quadratic):
        with pytest.raises(InvalidModel):
            tilt_solve(gauss_quadratic, 0.0)
