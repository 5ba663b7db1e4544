"""Cooperative stochastic control with n players.

For dX^i = alpha_i dt + dB^i on [0, T] with reward E[g(X_T) - (1/2n) sum_i int |alpha_i|^2]:

* V_orig = (1/n) log E_{gamma_T} e^{n g}, the value over all Markov controls;
* V_dstr = (1/n) times the mean-field value of n g against gamma_T, the value
  over distributed controls alpha_i(t, x_i);
* V_det  = (1/n) times the Gaussian-tilt value of n g at time T, the value
  over deterministic controls.

The optimal distributed control is the per-coordinate Follmer drift towards
the mean-field optimizer Q*, which ``simulate`` realizes by Euler-Maruyama.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels, grid1d, oracle
from .certify import certify
from .errors import ClipBudgetExceeded, GrowthGateFailed, InvalidModel, TimeOutOfRange
from .grid1d import GridDensity, ProductMeasure
from .mfsolver import SolveOptions, SolveResult, cavi_solve_ref, tilt_solve
from .models import PROBE_SEED, Model, ReferenceModel, Scaled, gaussian_reference, kappa_of

log = logging.getLogger(__name__)

CLIP_BUDGET = 1e-3
GROWTH_PROBES = 100


class ControlProblem:
    """n players, horizon T, concave terminal reward g.

    ``growth`` = (c1, c2) declares |g(x)| <= c1 exp(c2 |x|^2); it is checked on
    seeded probes and c2 < 1/(2T) is enforced unless ``check_growth`` is off.
    """

    def __init__(self, n: int, T: float, g: Model, growth=None, check_growth=True):
        if not T > 0:
            raise InvalidModel(f"horizon T must be positive, got {T}")
        if g.n != n:
            raise InvalidModel(f"g has dimension {g.n}, problem has n={n}")
        self.n, self.T, self.g = int(n), float(T), g
        self.growth = None if growth is None else tuple(float(v) for v in growth)
        self.gates = {"growth": "undeclared"}
        if self.growth is not None:
            if check_growth:
                self._check_growth()
                self.gates["growth"] = "pass"
            else:
                self.gates["growth"] = "override"

    def _check_growth(self):
        c1, c2 = self.growth
        if not c2 < 1.0 / (2.0 * self.T):
            raise GrowthGateFailed(f"growth exponent c2={c2} must be < 1/(2T) = {1 / (2 * self.T)}")
        rng = np.random.default_rng(PROBE_SEED)
        X = rng.standard_normal((GROWTH_PROBES, self.n)) * 3.0 * math.sqrt(self.T)
        lhs = np.abs(self.g.f(X))
        rhs = c1 * np.exp(c2 * np.sum(X * X, axis=1))
        if np.any(lhs > rhs * (1 + 1e-12)):
            raise GrowthGateFailed("|g| exceeds the declared growth bound on a probe point")

    @property
    def ng(self) -> Model:
        return Scaled(self.g, self.n)

    def reference(self, m: int = grid1d.DEFAULT_POINTS, centers=None):
        return gaussian_reference(self.n, self.T, centers, m)


@dataclass
class Interval:
    lo: float
    hi: float

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi}


def _centers(prob: ControlProblem, opts):
    """Window centres for Q*: the tilt fixed point is a cheap proxy for its means."""
    try:
        return tilt_solve(prob.ng, prob.T, opts).ystar
    except Exception:  # fall back to the origin if the tilt fails to settle
        return np.zeros(prob.n)


def value_dstr(prob: ControlProblem, opts: SolveOptions | None = None, centers=None):
    """(V_dstr, Q*, solve result) from the reference-mode mean-field solve of n g against gamma_T."""
    opts = opts or SolveOptions()
    c = _centers(prob, opts) if centers is None else centers
    ref = prob.reference(opts.grid_points, c)
    res = cavi_solve_ref(prob.ng, ref, opts)
    return res.elbo / prob.n, res.qstar, res


def value_orig(prob: ControlProblem, opts: SolveOptions | None = None, qstar: ProductMeasure | None = None):
    """(1/n) log E_{gamma_T} e^{n g}: brute force for n <= 4, else a certified interval."""
    opts = opts or SolveOptions()
    if prob.n <= oracle.MAX_BRUTE_DIM:
        c = _centers(prob, opts)
        ref = prob.reference(opts.grid_points, c)
        model = ReferenceModel(prob.ng, ref)
        windows = [r.grid for r in ref.rho]
        return oracle.brute_logZ(model, windows) / prob.n
    if qstar is None:
        _, qstar, _ = value_dstr(prob, opts)
    ref = prob.reference(qstar[0].grid.m, [qi.grid.center for qi in qstar])
    cert = certify(ReferenceModel(prob.ng, ref), qstar)
    return Interval(cert.logZ_lo / prob.n, cert.logZ_hi / prob.n)


def value_det(prob: ControlProblem, opts: SolveOptions | None = None):
    """(V_det, y*) with y* = nT E_{N(y*, T)} grad g."""
    res = tilt_solve(prob.ng, prob.T, opts)
    return res.value / prob.n, res.ystar


def gap_bounds(prob: ControlProblem, qstar: ProductMeasure, ystar) -> tuple[float, float]:
    """(n T^2 sum_{i<j} E_Q* |d_ij g|^2, (n T^2 / 2) sum_{i,j} E_{N(y*, T)} |d_ij g|^2)."""
    n, T = prob.n, prob.T
    cross = prob.g.cross_sq_sum(qstar)
    full = prob.g.gauss_hess_sq(np.asarray(ystar, dtype=float), T)
    return n * T * T * cross, 0.5 * n * T * T * full


# ---------------------------------------------------------------------------
# Follmer drift


def _log_h(qi: GridDensity, T: float, y: np.ndarray, logq: np.ndarray) -> np.ndarray:
    """log of dQ_i/dgamma_T at y (up to a constant that cancels in the drift)."""
    return logq + y * y / (2.0 * T)


def follmer_drift(qi: GridDensity, T: float, t: float, x) -> float | np.ndarray:
    """alpha(t, x) = d/dx log E[h(x + B_T - B_t)], h = dq_i / dN(0, T).

    Evaluated as (E_w[Y] - x) / (T - t) with weights w(y) proportional to
    h(y) N(y; x, T - t) on q_i's grid: the exact derivative of the smoothed
    log-density under the trapezoid rule.
    """
    if not 0.0 <= t < T:
        raise TimeOutOfRange(f"t must satisfy 0 <= t < T={T}, got {t}")
    s = T - t
    y = qi.x
    logh = _log_h(qi, T, y, qi.logq) + qi.grid.log_weights
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    a = logh[None, :] - (y[None, :] - xs[:, None]) ** 2 / (2.0 * s)
    a -= a.max(axis=1, keepdims=True)
    w = np.exp(a)
    out = (w @ y / w.sum(axis=1) - xs) / s
    return float(out[0]) if np.ndim(x) == 0 else out


@dataclass
class DriftTable:
    """Drift of one coordinate tabulated at times k*dt (k < N) on a uniform x lattice."""

    values: np.ndarray
    x0: float
    hx: float
    dt: float
    T: float

    @property
    def mx(self):
        return self.values.shape[1]

    def __call__(self, k: int, x):
        x = np.asarray(x, dtype=float)
        pos = (x - self.x0) / self.hx
        j = np.clip(np.floor(pos), 0, self.mx - 2).astype(np.int64)
        fr = np.clip(pos - j, 0.0, 1.0)
        row = self.values[k]
        return row[j] * (1.0 - fr) + row[j + 1] * fr


def drift_table(qi: GridDensity, T: float, dt: float, backend=None) -> DriftTable:
    """Tabulate the Follmer drift of q_i, refining the grid so spacing <= sqrt(dt)/2."""
    steps = int(round(T / dt))
    g = qi.grid
    factor = max(1, int(math.ceil(g.h / (0.5 * math.sqrt(dt)))))
    fine = g.refined(factor) if factor > 1 else g
    y = fine.points
    logq = np.interp(y, g.points, qi.logq)
    logh = _log_h(qi, T, y, logq) + fine.log_weights
    # x lattice: where paths can plausibly be (bridge from 0 to q_i, sd <= sqrt(T))
    mean = qi.mean
    span_lo = min(0.0, mean) - 10.0 * math.sqrt(T)
    span_hi = max(0.0, mean) + 10.0 * math.sqrt(T)
    lo_idx = max(0, int(math.floor((span_lo - fine.lo) / fine.h)))
    hi_idx = min(fine.m - 1, int(math.ceil((span_hi - fine.lo) / fine.h)))
    if hi_idx - lo_idx < 2:
        lo_idx, hi_idx = 0, fine.m - 1
    x0 = fine.lo + lo_idx * fine.h
    mx = hi_idx - lo_idx + 1
    s_vals = T - dt * np.arange(steps)
    vals = _kernels.follmer_lattice(logh, fine.lo, fine.h, s_vals, x0, fine.h, mx, backend=backend)
    return DriftTable(vals, x0, fine.h, dt, T)


def _density_key(qi: GridDensity):
    h = hashlib.sha1(np.ascontiguousarray(qi.logw).tobytes())
    h.update(repr(qi.grid.to_dict()).encode())
    return h.hexdigest()


@dataclass
class SimResult:
    mean: float
    stderr: float
    clips: int
    evaluations: int
    terminal: np.ndarray = field(repr=False)
    backend: str = "numba"

    @property
    def clip_fraction(self) -> float:
        return self.clips / max(self.evaluations, 1)

    def to_dict(self):
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "clips": self.clips,
            "evaluations": self.evaluations,
            "clip_fraction": self.clip_fraction,
            "backend": self.backend,
        }


def step_normals(seed: int, k: int, paths: int, n: int) -> np.ndarray:
    """Counter-based noise: the stream for step k depends only on (seed, k)."""
    bits = np.random.Philox(key=np.uint64(seed % 2**64), counter=[0, 0, 0, k])
    return np.random.Generator(bits).standard_normal((paths, n))


def simulate(prob: ControlProblem, qstar: ProductMeasure, dt: float = 1e-3, paths: int = 20_000, seed: int = 0,
             chunk: int = 32, backend: str | None = None, check_budget: bool = True) -> SimResult:
    """Euler-Maruyama estimate of E[g(X_T) - (1/2n) sum_i int alpha_i^2 dt] under the Follmer drifts of Q*."""
    T, n = prob.T, prob.n
    if not dt <= T / 100 + 1e-15:
        raise InvalidModel(f"dt must be <= T/100, got {dt}")
    if paths < 1000:
        raise InvalidModel(f"need at least 1000 paths, got {paths}")
    if qstar.n != n:
        raise InvalidModel("qstar dimension does not match the problem")
    backend = backend or ("numba" if _kernels.USE_NUMBA else "numpy")
    steps = int(round(T / dt))
    tables: dict = {}
    per_coord = []
    for qi in qstar:
        key = _density_key(qi)
        if key not in tables:
            tables[key] = drift_table(qi, T, dt, backend)
        per_coord.append(tables[key])
    mx = max(t.mx for t in per_coord)
    lattices = np.empty((n, steps, mx))
    for i, tab in enumerate(per_coord):
        lattices[i, :, : tab.mx] = tab.values
        lattices[i, :, tab.mx:] = tab.values[:, -1:]
    x0s = np.array([t.x0 for t in per_coord])
    hxs = np.array([t.hx for t in per_coord])
    try:
        kap = kappa_of(ReferenceModel(prob.ng, prob.reference(qstar[0].grid.m)))
    except Exception:
        kap = 1.0 / T
    clip = 50.0 / math.sqrt(T * kap)
    x = np.zeros((paths, n))
    cost = np.zeros(paths)
    clips = np.zeros(paths, dtype=np.int64)
    for k0 in range(0, steps, chunk):
        kk = range(k0, min(steps, k0 + chunk))
        noise = np.stack([step_normals(seed, k, paths, n) for k in kk])
        _kernels.euler_chunk(x, cost, clips, lattices, x0s, hxs, clip, k0, noise, dt, backend=backend)
    vals = prob.g.f(x) - cost / (2.0 * n)
    total_clips = int(clips.sum())
    res = SimResult(
        mean=float(np.mean(vals)),
        stderr=float(np.std(vals, ddof=1) / math.sqrt(paths)),
        clips=total_clips,
        evaluations=paths * steps * n,
        terminal=x,
        backend=backend,
    )
    if check_budget and res.clip_fraction > CLIP_BUDGET:
        raise ClipBudgetExceeded(f"{res.clip_fraction:.2%} of drift evaluations clipped (budget {CLIP_BUDGET:.1%})")
    return res


@dataclass
class ControlReport:
    v_orig: float | Interval
    v_dstr: float
    v_det: float
    ystar: np.ndarray
    gap_bound: float
    det_gap_bound: float
    sim: SimResult | None = None
    gates: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    solve: SolveResult | None = field(default=None, repr=False)

    def to_dict(self):
        vo = self.v_orig.to_dict() if isinstance(self.v_orig, Interval) else self.v_orig
        return {
            "v_orig": vo,
            "v_dstr": self.v_dstr,
            "v_det": self.v_det,
            "ystar": [float(v) for v in self.ystar],
            "gap_bound": self.gap_bound,
            "det_gap_bound": self.det_gap_bound,
            "sim_objective": None if self.sim is None else self.sim.to_dict(),
            "gates": self.gates,
            "flags": self.flags,
        }


def _ordering_flags(r: ControlReport, tol=1e-5):
    flags = []
    hi = r.v_orig.hi if isinstance(r.v_orig, Interval) else r.v_orig
    lo = r.v_orig.lo if isinstance(r.v_orig, Interval) else r.v_orig
    if r.v_det > r.v_dstr + tol:
        flags.append("v_det exceeds v_dstr")
    if r.v_dstr > hi + tol:
        flags.append("v_dstr exceeds v_orig")
    if lo - r.v_dstr > r.gap_bound + tol:
        flags.append("v_orig - v_dstr exceeds gap_bound")
    if lo - r.v_det > r.det_gap_bound + tol:
        flags.append("v_orig - v_det exceeds det_gap_bound")
    return flags


def run_control(prob: ControlProblem, opts: SolveOptions | None = None, sde: dict | None = None) -> ControlReport:
    opts = opts or SolveOptions()
    v_det, ystar = value_det(prob, opts)
    v_dstr, qstar, res = value_dstr(prob, opts, centers=ystar)
    v_orig = value_orig(prob, opts, qstar)
    gb, dgb = gap_bounds(prob, qstar, ystar)
    sim = None
    if sde:
        sim = simulate(prob, qstar, **sde)
    report = ControlReport(v_orig, v_dstr, v_det, ystar, gb, dgb, sim, dict(prob.gates), solve=res)
    report.flags = _ordering_flags(report)
    for f in report.flags:
        log.warning("ordering check: %s", f)
    return report


def logsumexp_drift(qi: GridDensity, T: float, t: float, x: float) -> float:
    """Central-difference drift of the smoothed log-density; a cross-check for ``follmer_drift``."""
    s = T - t
    eps = 1e-4
    lh = _log_h(qi, T, qi.x, qi.logq) + qi.grid.log_weights

    def smooth(z):
        return logsumexp(lh - (qi.x - z) ** 2 / (2.0 * s))

    return (smooth(x + eps) - smooth(x - eps)) / (2 * eps)
