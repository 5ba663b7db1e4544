"""Large-n limits: the scalar problem for doubly stochastic couplings and step-graphon block problems."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import grid1d
from .certify import elbo as elbo_of
from .certify import trJ2_bound
from .errors import InvalidModel, NoConvergence, NotDoublyStochastic, NotNonpositiveKernel
from .grid1d import Grid, GridDensity, ProductMeasure
from .mfsolver import SolveOptions, cavi_solve
from .models import InteractionKernel, PairwiseGibbs, ScalarPotential


@dataclass(frozen=True)
class LimitOptions:
    damping: float = 0.5
    tol: float = 1e-9
    max_iter: int = 20_000
    grid_points: int = grid1d.DEFAULT_POINTS
    seed: int = 0
    init: str = "default"
    restarts: int = 0

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise InvalidModel("damping must lie in [0, 1)")
        if not self.tol > 0:
            raise InvalidModel("tol must be positive")

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise InvalidModel(f"unknown limit options: {sorted(extra)}")
        return cls(**d)


def limit_grid(V: ScalarPotential, m: int = grid1d.DEFAULT_POINTS) -> Grid:
    """Same window rule the finite-n solver uses for pairwise models."""
    return Grid.for_kappa(V.kappa, V.mode(), m)


def _random_start(grid: Grid, kappa: float, rng) -> GridDensity:
    sd = 1.0 / math.sqrt(kappa)
    return grid1d.gaussian(grid.center + rng.uniform(-1, 1) * sd, rng.uniform(0.5, 2.0) / kappa, grid)


@dataclass
class ScalarLimit:
    q: GridDensity
    value: float
    residual: float
    iterations: int

    def to_dict(self):
        return {"value": self.value, "residual": self.residual, "iterations": self.iterations, "q": self.q.to_dict()}


def scalar_value(V: ScalarPotential, K: InteractionKernel, q: GridDensity, Kmat=None) -> float:
    """E_q V + (1/2) E_{q x q} K(x - y) - H(q)."""
    if Kmat is None:
        Kmat = grid1d.kernel_matrix(K.eval, q.x, q.x)
    return q.expect(V.eval(q.x)) + 0.5 * float(q.wq @ Kmat @ q.wq) - grid1d.entropy(q)


def scalar_limit(V: ScalarPotential, K: InteractionKernel, opts: LimitOptions | None = None, q0: GridDensity | None = None) -> ScalarLimit:
    """Damped iteration q <- normalize(exp(V + K * q)) to sup-log residual < tol."""
    opts = opts or LimitOptions()
    grid = limit_grid(V, opts.grid_points) if q0 is None else q0.grid
    Kmat = grid1d.kernel_matrix(K.eval, grid.points, grid.points)
    Vx = V.eval(grid.points)
    if q0 is not None:
        q = q0
    elif opts.init == "random":
        q = _random_start(grid, V.kappa, np.random.default_rng(np.random.SeedSequence([opts.seed, 11])))
    else:
        q = grid1d.normalize(Vx, grid)
    residual = math.inf
    for it in range(1, opts.max_iter + 1):
        target = grid1d.normalize(Vx + Kmat @ q.wq, grid)
        residual = float(np.max(np.abs(target.logq - q.logq)))
        if residual < opts.tol:
            q = target
            break
        q = grid1d.normalize((1 - opts.damping) * target.logq + opts.damping * q.logq, grid)
    else:
        raise NoConvergence(f"scalar limit residual {residual:.3e} after {opts.max_iter} iterations")
    return ScalarLimit(q, scalar_value(V, K, q, Kmat), residual, it)


@dataclass
class BlockLimit:
    blocks: list
    weights: np.ndarray
    value: float
    mixture: GridDensity
    shift: float
    graphon_value: float
    residual: float
    iterations: int
    restart_spread: float | None = None
    restart_values: list = field(default_factory=list)

    def to_dict(self):
        return {
            "value": self.value,
            "graphon_value": self.graphon_value,
            "shift": self.shift,
            "weights": self.weights.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "restart_spread": self.restart_spread,
            "restart_values": self.restart_values,
            "blocks": [b.to_dict() for b in self.blocks],
            "mixture": self.mixture.to_dict(),
        }


def _check_nonpositive(K: InteractionKernel, grid: Grid):
    u = np.linspace(-(grid.hi - grid.lo), grid.hi - grid.lo, 2001)
    if np.any(K.eval(u) > 1e-12):
        raise NotNonpositiveKernel(f"kernel {K.name} is positive somewhere on the probe range")


def _block_solve(Vn, Kmat, W, grid, starts, opts):
    m = W.shape[0]
    qs = list(starts)
    residual = math.inf
    for it in range(1, opts.max_iter + 1):
        smooth = [Kmat @ qb.wq for qb in qs]
        targets = [grid1d.normalize(Vn + sum(W[a, b] * smooth[b] for b in range(m)) / m, grid) for a in range(m)]
        residual = max(float(np.max(np.abs(t.logq - q.logq))) for t, q in zip(targets, qs))
        if residual < opts.tol:
            return targets, residual, it
        qs = [grid1d.normalize((1 - opts.damping) * t.logq + opts.damping * q.logq, grid) for t, q in zip(targets, qs)]
    raise NoConvergence(f"block limit residual {residual:.3e} after {opts.max_iter} iterations")


def _graphon_value(Vn, Kmat, W, qs):
    m = W.shape[0]
    single = sum(q.expect(Vn) - grid1d.entropy(q) for q in qs) / m
    pair = sum(W[a, b] * float(qs[a].wq @ Kmat @ qs[b].wq) for a in range(m) for b in range(m))
    return single + 0.5 * pair / m**2


def block_limit(V: ScalarPotential, K: InteractionKernel, weights, opts: LimitOptions | None = None) -> BlockLimit:
    """Step-graphon mean-field problem with m equal blocks.

    V is shifted by c = log of the integral of e^V so that e^V is a probability
    density; ``graphon_value`` is the objective for the shifted V and ``value``
    adds c back, which makes the one-block case coincide with ``scalar_limit``.
    """
    opts = opts or LimitOptions()
    W = np.array(weights, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or np.max(np.abs(W - W.T)) > 1e-12 or np.any(W < 0):
        raise InvalidModel("block weights must be a symmetric nonnegative square matrix")
    m = W.shape[0]
    grid = limit_grid(V, opts.grid_points)
    _check_nonpositive(K, grid)
    Kmat = grid1d.kernel_matrix(K.eval, grid.points, grid.points)
    Vx = V.eval(grid.points)
    shift = grid1d.log_trapz(Vx, grid)
    Vn = Vx - shift
    base = grid1d.normalize(Vn, grid)
    if opts.init == "random":
        rng = np.random.default_rng(np.random.SeedSequence([opts.seed, 13]))
        starts = [_random_start(grid, V.kappa, rng) for _ in range(m)]
    else:
        starts = [base] * m
    qs, residual, iters = _block_solve(Vn, Kmat, W, grid, starts, opts)
    gval = _graphon_value(Vn, Kmat, W, qs)
    spread, values = None, []
    if opts.restarts:
        rng = np.random.default_rng(np.random.SeedSequence([opts.seed, 17]))
        spread = 0.0
        for _ in range(opts.restarts):
            alt, _, _ = _block_solve(Vn, Kmat, W, grid, [_random_start(grid, V.kappa, rng) for _ in range(m)], opts)
            values.append(_graphon_value(Vn, Kmat, W, alt) + shift)
            spread = max(spread, max(grid1d.w2(a, b) for a, b in zip(qs, alt)))
    mix_logw = logsumexp([q.logq for q in qs], axis=0) - math.log(m)
    return BlockLimit(
        blocks=qs,
        weights=W,
        value=gval + shift,
        mixture=grid1d.normalize(mix_logw, grid),
        shift=shift,
        graphon_value=gval,
        residual=residual,
        iterations=iters,
        restart_spread=spread,
        restart_values=values,
    )


@dataclass
class FiniteVsLimit:
    per_site_gap: float
    rf_budget_per_site: float | None
    elbo_per_site: float
    limit_value: float
    qstar: ProductMeasure | None = None

    def __iter__(self):
        return iter((self.per_site_gap, self.rf_budget_per_site))

    def to_dict(self):
        return {
            "per_site_gap": self.per_site_gap,
            "rf_budget_per_site": self.rf_budget_per_site,
            "elbo_per_site": self.elbo_per_site,
            "limit_value": self.limit_value,
        }


def rf_budget_per_site(model: PairwiseGibbs, q: ProductMeasure) -> float:
    return trJ2_bound(model, q) / model.n


def finite_vs_limit(model: PairwiseGibbs, limit: ScalarLimit, q: ProductMeasure | None = None, opts: SolveOptions | None = None) -> FiniteVsLimit:
    """Compare the finite-n mean-field value per site with the scalar limit."""
    if not model.J.is_doubly_stochastic():
        raise NotDoublyStochastic("rows of J must sum to 1 within 1e-10")
    opts = opts or SolveOptions(grid_points=limit.q.grid.m)
    if q is None:
        q = cavi_solve(model, "default", opts).qstar
    e = elbo_of(model, q) / model.n
    return FiniteVsLimit(
        per_site_gap=abs(e - limit.value),
        rf_budget_per_site=rf_budget_per_site(model, q),
        elbo_per_site=e,
        limit_value=limit.value,
        qstar=q,
    )
