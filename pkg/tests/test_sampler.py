import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfcert import grid1d, models
from mfcert.errors import DivergentChain, InvalidModel, LengthMismatch
from mfcert.grid1d import ProductMeasure
from mfcert.mfsolver import cavi_solve
from mfcert.sampler import (
    ChainOptions,
    empirical_w2,
    ess,
    lln_check,
    read_samples,
    sample_gaussian,
    sample_p,
    sample_q,
    write_samples,
)

A = np.array([[2.0, 0.5], [0.5, 1.0]])


@pytest.fixture(scope="module")
def chain():
    return sample_p(models.QuadraticModel(A), ChainOptions(steps=6000, burnin=1000, n_chains=8, seed=3))


class TestMala:
    def test_moments(self, chain):
        cov = np.linalg.inv(A)
        np.testing.assert_allclose(chain.draws.mean(axis=0), 0.0, atol=0.05)
        np.testing.assert_allclose(np.cov(chain.draws.T), cov, atol=0.06)

    def test_diagnostics(self, chain):
        assert chain.n_draws == 8 * 5000
        assert chain.per_chain().shape == (8, 5000, 2)
        assert 0.3 < chain.acceptance <= 1.0
        assert np.all(chain.ess > 500)
        assert chain.summary()["source"] == "mala"

    def test_seeded(self):
        opts = ChainOptions(steps=300, burnin=50, n_chains=2, seed=9)
        a = sample_p(models.QuadraticModel(A), opts)
        b = sample_p(models.QuadraticModel(A), opts)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_divergent_ula(self):
        with pytest.raises(DivergentChain):
            sample_p(models.QuadraticModel(A), ChainOptions(steps=400, burnin=10, step_size=5.0, mala=False, n_chains=2))


class TestOptions:
    @pytest.mark.parametrize("kw", [dict(steps=10, burnin=10), dict(step_size=0.0), dict(n_chains=0), dict(thin=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidModel):
            ChainOptions(**kw)

    def test_from_dict(self):
        assert ChainOptions.from_dict({"steps": 100, "burnin": 5}).steps == 100
        with pytest.raises(InvalidModel):
            ChainOptions.from_dict({"stepz": 1})


class TestExactSamplers:
    def test_sample_q_quantiles(self):
        q = ProductMeasure([grid1d.gaussian(1.0, 0.25), grid1d.gaussian(-2.0, 4.0)])
        s = sample_q(q, 20000, seed=1)
        np.testing.assert_allclose(s.draws.mean(axis=0), [1.0, -2.0], atol=0.05)
        np.testing.assert_allclose(s.draws.var(axis=0), [0.25, 4.0], rtol=0.05)

    def test_sample_gaussian(self):
        s = sample_gaussian(A, 40000, seed=2, mean=[1.0, 0.0])
        np.testing.assert_allclose(np.cov(s.draws.T), np.linalg.inv(A), atol=0.02)
        np.testing.assert_allclose(s.draws.mean(axis=0), [1.0, 0.0], atol=0.02)

    def test_ess_of_iid(self):
        x = np.random.default_rng(0).standard_normal(6400)
        assert 0.5 * 6400 < ess(x)[()] < 2 * 6400


class TestW2:
    def test_shift(self):
        a = np.random.default_rng(1).standard_normal(500)
        assert empirical_w2(a, a + 0.3) == pytest.approx(0.3)

    @given(st.integers(2, 50), st.integers(1, 5))
    def test_length_mismatch(self, n, k):
        with pytest.raises(LengthMismatch):
            empirical_w2(np.zeros(n), np.zeros(n + k))

    def test_too_short(self):
        with pytest.raises(LengthMismatch):
            empirical_w2([1.0], [2.0])


class TestSampleFile:
    def test_round_trip(self, tmp_path):
        d = np.random.default_rng(0).standard_normal((17, 3))
        write_samples(tmp_path / "s.bin", d)
        np.testing.assert_array_equal(read_samples(tmp_path / "s.bin"), d)
        assert (tmp_path / "s.bin").stat().st_size == 8 + 16 + 17 * 3 * 8

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"notasamp" + bytes(16))
        with pytest.raises(InvalidModel):
            read_samples(tmp_path / "x.bin")

    def test_truncated(self, tmp_path):
        write_samples(tmp_path / "s.bin", np.ones((4, 2)))
        raw = (tmp_path / "s.bin").read_bytes()
        (tmp_path / "s.bin").write_bytes(raw[:-8])
        with pytest.raises(InvalidModel):
            read_samples(tmp_path / "s.bin")


class TestLLN:
    def test_bound_holds(self, quartic_chain):
        q = cavi_solve(quartic_chain).qstar
        chk = lln_check(quartic_chain, q, "tanh", ChainOptions(steps=3000, burnin=500, n_chains=4, seed=1))
        assert chk.holds
        lhs, rhs = chk
        assert 0 <= lhs <= rhs
        assert chk.to_dict()["phi"] == "tanh"

    def test_unknown_phi(self, quartic_chain):
        with pytest.raises(InvalidModel):
            lln_check(quartic_chain, cavi_solve(quartic_chain).qstar, "sin")
