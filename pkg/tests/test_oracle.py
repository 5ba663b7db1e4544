import math

import numpy as np
import pytest

from mfcert import grid1d, models, oracle
from mfcert.errors import DimensionTooLarge, NotSPD
from mfcert.mfsolver import cavi_solve

PAIR = np.array([[1.5, -0.5], [-0.5, 1.5]])


class TestGaussianTruth:
    def test_pair_fixture(self):
        t = oracle.gaussian_truth(PAIR)
        assert t.logZ == pytest.approx(1.4913035, abs=1e-7)
        assert t.rf_exact == pytest.approx(0.0588915, abs=1e-7)
        np.testing.assert_allclose(t.marginal_vars, [0.75, 0.75])
        np.testing.assert_allclose(t.qstar_vars, [2 / 3, 2 / 3])

    def test_not_spd(self):
        with pytest.raises(NotSPD):
            oracle.gaussian_truth([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NotSPD):
            oracle.gaussian_truth([[1.0, 0.1], [0.0, 1.0]])


class TestBrute:
    def test_matches_gaussian(self, gauss_pair):
        res = oracle.brute_logZ_detail(gauss_pair)
        assert res.logZ == pytest.approx(1.4913035, abs=1e-7)
        assert res.change < 1e-7

    def test_three_dim_gaussian(self):
        A = np.array([[2.0, 0.3, 0.1], [0.3, 1.5, -0.4], [0.1, -0.4, 1.2]])
        assert oracle.brute_logZ(models.QuadraticModel(A)) == pytest.approx(oracle.gaussian_truth(A).logZ, abs=1e-7)

    def test_dimension_gate(self):
        m = models.QuadraticModel(np.eye(5))
        with pytest.raises(DimensionTooLarge):
            oracle.brute_logZ(m)
        with pytest.raises(DimensionTooLarge):
            oracle.brute_marginal(models.QuadraticModel(np.eye(4)), 0)

    def test_marginal(self, gauss_pair):
        pm = oracle.brute_marginal(gauss_pair, 0)
        assert pm.var == pytest.approx(0.75, rel=1e-6)

    def test_entropic_projection_identity(self, quartic_chain):
        logZ = oracle.brute_logZ(quartic_chain)
        res = cavi_solve(quartic_chain)
        assert logZ - res.elbo == pytest.approx(oracle.kl_q_p(quartic_chain, res.qstar, logZ), abs=1e-6)

    def test_kl_directions_gaussian(self, gauss_quadratic):
        q = cavi_solve(gauss_quadratic).qstar
        t = oracle.gaussian_truth(PAIR)
        assert oracle.kl_q_p(gauss_quadratic, q, t.logZ) == pytest.approx(t.rf_exact, abs=1e-6)
        # H(P|Q) for Gaussians: (1/2)[tr(S_q^-1 S_p) - n + log det S_q - log det S_p]
        Sp = np.linalg.inv(PAIR)
        Sq = np.diag(t.qstar_vars)
        hand = 0.5 * (np.trace(np.linalg.solve(Sq, Sp)) - 2 + math.log(np.linalg.det(Sq) / np.linalg.det(Sp)))
        assert oracle.kl_p_q(gauss_quadratic, q, t.logZ) == pytest.approx(hand, abs=1e-6)

    def test_report(self, gauss_pair):
        rep = oracle.truth_report(gauss_pair)
        assert rep["n"] == 2 and rep["kappa"] == 1.0
        assert len(rep["windows"]) == 2
