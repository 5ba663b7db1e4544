import json

import numpy as np
import pytest

from mfcert import models, specs
from mfcert.errors import GrowthGateFailed, InvalidModel
from mfcert.specs import SpecIOError


class TestFixtures:
    @pytest.mark.parametrize("name,kind,n", [
        ("gaussian_pair", models.PairwiseGibbs, 2),
        ("quartic_chain", models.PairwiseGibbs, 3),
        ("quartic_cycle5", models.PairwiseGibbs, 5),
        ("gaussian_precision", models.QuadraticModel, None),
        ("bayes_p2", models.BayesLinReg, 2),
        ("blackbox_lse", models.Model, 3),
    ])
    def test_load(self, fixtures_dir, name, kind, n):
        m = specs.load_model(fixtures_dir / f"{name}.json")
        assert isinstance(m, kind)
        if n is not None:
            assert m.n == n

    def test_control(self, fixtures_dir):
        prob, sde = specs.build_control(json.loads((fixtures_dir / "control_quadratic.json").read_text()))
        assert (prob.n, prob.T) == (2, 1.0)
        assert prob.gates["growth"] == "pass"
        assert sde["paths"] == 20000

    def test_limits(self, fixtures_dir):
        V, K, W = specs.build_limit(json.loads((fixtures_dir / "limit_scalar.json").read_text()))
        assert W is None
        _, _, W = specs.build_limit(json.loads((fixtures_dir / "limit_blocks.json").read_text()))
        np.testing.assert_allclose(W, [[1.0, 0.5], [0.5, 2.0]])


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(SpecIOError) as ei:
            specs.load_model(tmp_path / "nope.json")
        assert ei.value.code == "E_IO_MODEL"

    def test_bad_json(self, tmp_path):
        (tmp_path / "m.json").write_text("{not json")
        with pytest.raises(SpecIOError) as ei:
            specs.load_model(tmp_path / "m.json")
        assert ei.value.code == "E_PARSE_MODEL"

    @pytest.mark.parametrize("spec", [
        {"V": {}},
        {"type": "spin-glass"},
        {"type": "pairwise", "V": {"name": "nope"}, "J": [[0]]},
        {"type": "pairwise", "V": {"name": "quartic_well", "kappa": 1.0, "oops": 2}, "J": [[0]]},
        {"type": "pairwise", "V": {"name": "gaussian_well"}, "K": {"name": "nope"}, "J": [[0]]},
        {"type": "blackbox-builtin", "name": "nope"},
    ])
    def test_invalid(self, spec):
        with pytest.raises(InvalidModel):
            specs.build_model(spec)

    def test_growth_override(self):
        # quartic growth cannot sit under c1 exp(c2 x^2) with c1 = 1 near the probes
        spec = {"type": "pairwise", "J": [[0]],
                "V": {"name": "quartic_well", "kappa": 1.0, "lam": 1.0, "growth": [1.0, 0.01]}}
        with pytest.raises(GrowthGateFailed):
            specs.build_model(spec)
        assert specs.build_model(spec | {"growth_override": True}).n == 1

    def test_control_missing_field(self):
        with pytest.raises(InvalidModel):
            specs.build_control({"n": 2, "T": 1.0})
