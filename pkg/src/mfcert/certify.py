"""Certified two-sided intervals for log Z from a converged product measure."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import grid1d
from .errors import InvalidModel, SymmetryGateFailed
from .grid1d import ProductMeasure
from .models import BayesLinReg, Model, PairwiseGibbs, ReferenceModel, Scaled, kappa_of

SYMMETRY_TOL = 1e-6
#: Monte Carlo estimates are inflated by this many standard errors
MC_SIGMAS = 3.0


def _estimate(model, name, q):
    """(value, standard error); exact reductions report se = 0."""
    if getattr(model, "monte_carlo", False) and hasattr(model, name + "_se"):
        return getattr(model, name + "_se")(q)
    return getattr(model, name)(q), 0.0


def entropy_sum(q: ProductMeasure) -> float:
    return float(sum(grid1d.entropy(qi) for qi in q))


def elbo_se(model: Model, q: ProductMeasure):
    v, se = _estimate(model, "expect_f", q)
    return v - entropy_sum(q), se


def elbo(model: Model, q: ProductMeasure) -> float:
    """E_Q f - H(Q); a lower bound on log Z for every product Q."""
    return elbo_se(model, q)[0]


def var_bound(model: Model, q: ProductMeasure) -> float:
    v, se = _estimate(model, "cond_var_sum", q)
    return max(v + MC_SIGMAS * se, 0.0) / (2.0 * kappa_of(model))


def cross_bound(model: Model, q: ProductMeasure) -> float:
    v, se = _estimate(model, "cross_sq_sum", q)
    return max(v + MC_SIGMAS * se, 0.0) / kappa_of(model) ** 2


def _pairwise_core(model):
    """Unwrap to the pairwise Gibbs model (and the scale applied to it)."""
    scale = 1.0
    while isinstance(model, Scaled):
        scale *= model.s
        model = model.base
    return (model, scale) if isinstance(model, PairwiseGibbs) else (None, scale)


def symmetry_gap(q: ProductMeasure) -> float:
    m = q.means
    return float(np.max(m) - np.min(m))


def trJ2_bound(model: Model, q: ProductMeasure) -> float:
    """Tr(J^2) a kappa^-2 exp(b^2/kappa), gated on equal marginal means."""
    core, scale = _pairwise_core(model)
    if core is None:
        raise InvalidModel("the trace bound applies to pairwise Gibbs models only")
    gap = symmetry_gap(q)
    if gap > SYMMETRY_TOL:
        raise SymmetryGateFailed(f"marginal means differ by {gap:.3e} > {SYMMETRY_TOL:g}")
    kap = scale * core.kappa()
    a, b = scale * scale * core.K.a, core.K.b
    return core.J.trace_sq * a * math.exp(b * b / kap) / kap**2


@dataclass
class Certificate:
    elbo: float
    var_bound: float
    cross_bound: float
    trJ2_bound: float | None
    logZ_lo: float
    logZ_hi: float
    kappa: float
    n: int
    bound_source: str
    elbo_se: float = 0.0
    gates: dict = field(default_factory=dict)
    bound_ratio: float | None = None

    @property
    def width(self) -> float:
        return self.logZ_hi - self.logZ_lo

    @property
    def rf_bound(self) -> float:
        return self.logZ_hi - self.elbo

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.logZ_lo - slack <= value <= self.logZ_hi + slack

    def to_dict(self):
        return asdict(self)


def certify(model: Model, q: ProductMeasure) -> Certificate:
    kap = kappa_of(model)
    e, e_se = elbo_se(model, q)
    vb = var_bound(model, q)
    cb = cross_bound(model, q)
    gates = {}
    tb = None
    if _pairwise_core(model)[0] is not None:
        try:
            tb = trJ2_bound(model, q)
            gates["trJ2_symmetry"] = "pass"
        except SymmetryGateFailed as exc:
            gates["trJ2_symmetry"] = f"fail: {exc}"
    candidates = {"var_bound": vb, "cross_bound": cb}
    if tb is not None:
        candidates["trJ2_bound"] = tb
    source = min(candidates, key=candidates.get)
    lo = e - MC_SIGMAS * e_se
    return Certificate(
        elbo=e,
        var_bound=vb,
        cross_bound=cb,
        trJ2_bound=tb,
        logZ_lo=lo,
        logZ_hi=e + candidates[source],
        kappa=kap,
        n=model.n,
        bound_source=source,
        elbo_se=e_se,
        gates=gates,
        bound_ratio=(vb / cb) if cb > 0 else None,
    )


@dataclass
class ConcentrationReport:
    lln_rhs: float
    k: int
    w2_budget: float
    bayes_lln_rhs: float | None = None

    def to_dict(self):
        return asdict(self)


def w2_budget(rf: float, kappa: float, n: int, k: int) -> float:
    """Bound on the subset-averaged W2^2 between k-marginals of Q* and P."""
    return 2.0 * rf / (kappa * (n // k))


def bayes_lln_rhs(model: BayesLinReg) -> float:
    s2, k1, k2 = model.sigma2, model.kappa1, model.kappa2
    base = k1 * s2 + k2
    return s2 * (base + math.sqrt(2.0 * model.offdiag_sq_sum)) ** 2 / (model.p * base**3)


def lln_rhs(rf: float, kappa: float, n: int) -> float:
    return (1.0 + math.sqrt(2.0 * max(rf, 0.0))) ** 2 / (kappa * n)


def concentration(model: Model, cert: Certificate, k: int = 1) -> ConcentrationReport:
    n = cert.n
    if not 1 <= k <= n:
        raise InvalidModel(f"k must lie in [1, {n}]")
    rf = max(cert.rf_bound, 0.0)
    core = model.g if isinstance(model, ReferenceModel) else model
    return ConcentrationReport(
        lln_rhs=lln_rhs(rf, cert.kappa, n),
        k=k,
        w2_budget=w2_budget(rf, cert.kappa, n, k),
        bayes_lln_rhs=bayes_lln_rhs(core) if isinstance(core, BayesLinReg) else None,
    )
