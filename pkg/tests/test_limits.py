import math

import numpy as np
import pytest

from mfcert import grid1d, graphs, models
from mfcert.errors import InvalidModel, NotDoublyStochastic, NotNonpositiveKernel
from mfcert.limits import LimitOptions, block_limit, finite_vs_limit, rf_budget_per_site, scalar_limit
from mfcert.mfsolver import SolveOptions, cavi_solve

V4 = models.quartic_well(1.0, 1.0)
KL = models.neg_logcosh(2.0)


class TestScalar:
    def test_gaussian_fixture(self):
        # q has precision 2; value = E V + E K/2 - H(q) = -1/4 - 1/4 + (1 + log pi)/2
        lim = scalar_limit(models.gaussian_well(1.0), models.neg_quadratic_kernel())
        assert lim.q.var == pytest.approx(0.5, rel=1e-8)
        assert lim.value == pytest.approx(-0.5 + 0.5 * (1 + math.log(math.pi)), abs=1e-9)
        assert lim.value == pytest.approx(0.5723649, abs=1e-7)

    def test_random_start_same_limit(self):
        a = scalar_limit(V4, KL)
        b = scalar_limit(V4, KL, LimitOptions(init="random", seed=5))
        assert grid1d.w2(a.q, b.q) < 1e-8
        assert a.value == pytest.approx(b.value, abs=1e-10)

    def test_refinement_stable(self):
        a = scalar_limit(V4, KL)
        b = scalar_limit(V4, KL, LimitOptions(grid_points=2049))
        assert a.value == pytest.approx(b.value, abs=1e-9)

    @pytest.mark.parametrize("name,J", [("complete", graphs.complete(6)), ("cycle", graphs.cycle(7))])
    def test_finite_n_matches(self, name, J):
        lim = scalar_limit(V4, KL)
        cmp = finite_vs_limit(models.PairwiseGibbs(V4, KL, J), lim)
        assert cmp.per_site_gap < 1e-8
        assert cmp.rf_budget_per_site > 0

    def test_needs_doubly_stochastic(self):
        lim = scalar_limit(V4, KL)
        with pytest.raises(NotDoublyStochastic):
            finite_vs_limit(models.PairwiseGibbs(V4, KL, graphs.cycle(5, normalize="none")), lim)

    def test_budget_shrinks_with_degree(self):
        opts = SolveOptions(grid_points=129)
        budgets = []
        for d in (2, 4, 8):
            m = models.PairwiseGibbs(V4, models.neg_logcosh(1.0), graphs.dregular(16, d, seed=1))
            budgets.append(rf_budget_per_site(m, cavi_solve(m, "default", opts).qstar))
        # Tr(J^2)/n = 1/d for row-normalized d-regular J
        np.testing.assert_allclose(budgets, [0.5, 0.25, 0.125], rtol=1e-12)


class TestBlocks:
    def test_one_block_is_scalar(self):
        assert block_limit(V4, KL, [[1.0]]).value == pytest.approx(scalar_limit(V4, KL).value, abs=1e-10)

    def test_block_diagonal_decouples(self):
        b = block_limit(V4, KL, np.diag([1.0, 3.0]))
        expect = 0.5 * (scalar_limit(V4, KL.scaled(0.5)).value + scalar_limit(V4, KL.scaled(1.5)).value)
        assert b.value == pytest.approx(expect, abs=1e-8)

    def test_symmetric_cross_model(self):
        b = block_limit(V4, KL, [[0.0, 2.0], [2.0, 0.0]], LimitOptions(restarts=2))
        assert b.value == pytest.approx(scalar_limit(V4, KL).value, abs=1e-8)
        assert b.restart_spread < 1e-6
        assert grid1d.w2(b.blocks[0], b.blocks[1]) < 1e-8

    def test_mixture_is_normalized(self):
        b = block_limit(V4, KL, [[1.0, 0.5], [0.5, 2.0]])
        assert b.mixture.wq.sum() == pytest.approx(1.0)
        assert b.shift == pytest.approx(grid1d.log_trapz(V4.eval(b.mixture.x), b.mixture.grid))

    def test_validation(self):
        with pytest.raises(InvalidModel):
            block_limit(V4, KL, [[1.0, 0.2], [0.1, 1.0]])
        with pytest.raises(InvalidModel):
            block_limit(V4, KL, [[-1.0]])
        pos = models.InteractionKernel(lambda u: 0.5 * np.exp(-u * u), lambda u: -u * np.exp(-u * u),
                                       lambda u: 0 * u, check=False)
        with pytest.raises(NotNonpositiveKernel):
            block_limit(V4, pos, [[1.0]])


class TestGraphs:
    def test_generators(self):
        assert graphs.cycle(5).sum(axis=1) == pytest.approx(np.ones(5))
        assert graphs.complete(4, normalize="none").sum() == 12
        J = graphs.dregular(10, 3, seed=2, normalize="none")
        np.testing.assert_array_equal(J.sum(axis=1), 3)
        B = graphs.block([2, 3], [[1.0, 0.2], [0.2, 2.0]])
        assert B.shape == (5, 5) and B[0, 1] == 1.0 and B[0, 4] == 0.2 and B[3, 3] == 0.0

    def test_from_spec(self):
        np.testing.assert_allclose(graphs.from_spec({"cycle": 4}), graphs.cycle(4))
        np.testing.assert_allclose(graphs.from_spec({"dregular": {"n": 8, "d": 3, "seed": 1}, "normalize": "none"}).sum(axis=1), 3)
        np.testing.assert_allclose(graphs.from_spec([[0, 1], [1, 0]]), [[0, 1], [1, 0]])

    @pytest.mark.parametrize("bad", [lambda: graphs.cycle(2), lambda: graphs.dregular(5, 3), lambda: graphs.from_spec("cycle"),
                                     lambda: graphs.block([1, 1], [[1, 2], [3, 1]]), lambda: graphs.cycle(4, normalize="l2")])
    def test_rejects(self, bad):
        with pytest.raises(InvalidModel):
            bad()
