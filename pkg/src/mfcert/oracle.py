"""Ground truth for tests: Gaussian closed forms and tensor-grid brute force at tiny n."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.special import logsumexp

from . import grid1d
from .errors import DimensionTooLarge, InvalidModel, NotSPD
from .grid1d import Grid, GridDensity, ProductMeasure
from .models import Model, kappa_of

MAX_BRUTE_DIM = 4
MAX_MARGINAL_DIM = 3
#: points per axis tried in turn by the refinement loop
BRUTE_LEVELS = (33, 65, 129, 257)
BRUTE_TOL = 1e-7
#: tensor size above which a level is skipped (257^4 is out of desk reach)
MAX_TENSOR_POINTS = 3e8
SLAB_POINTS = 2_000_000


@dataclass
class GaussianTruth:
    A: np.ndarray
    logZ: float
    qstar_vars: np.ndarray
    rf_exact: float
    marginal_vars: np.ndarray
    pstar_vars: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def elbo(self) -> float:
        return self.logZ - self.rf_exact

    @property
    def w2_sq_sum(self) -> float:
        """sum_i W2^2(P_i, Q*_i) for the centred Gaussians."""
        return float(np.sum((np.sqrt(self.marginal_vars) - np.sqrt(self.qstar_vars)) ** 2))

    def to_dict(self):
        return {
            "logZ": self.logZ,
            "rf_exact": self.rf_exact,
            "qstar_vars": self.qstar_vars.tolist(),
            "marginal_vars": self.marginal_vars.tolist(),
            "pstar_vars": self.pstar_vars.tolist(),
        }


def gaussian_truth(A) -> GaussianTruth:
    """Closed forms for P = N(0, A^{-1}) and its two product projections."""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or np.max(np.abs(A - A.T)) > 1e-12:
        raise NotSPD("A must be a symmetric square matrix")
    try:
        sla.cholesky(A, lower=True)
    except sla.LinAlgError as exc:
        raise NotSPD(f"A is not positive definite: {exc}") from None
    lu, piv = sla.lu_factor(A)
    logdet = float(np.sum(np.log(np.abs(np.diag(lu)))))
    n = A.shape[0]
    d = np.diag(A).copy()
    cov_diag = np.diag(sla.cho_solve(sla.cho_factor(A), np.eye(n))).copy()
    return GaussianTruth(
        A=A,
        logZ=0.5 * n * math.log(2 * math.pi) - 0.5 * logdet,
        qstar_vars=1.0 / d,
        rf_exact=0.5 * (float(np.sum(np.log(d))) - logdet),
        marginal_vars=cov_diag,
        pstar_vars=cov_diag.copy(),
    )


def _check_dim(n, cap):
    if n > cap:
        raise DimensionTooLarge(f"brute force handles n <= {cap}, got n = {n}")


def default_windows(model: Model, m: int) -> list[Grid]:
    return [Grid(g.lo, g.hi, m) for g in model.windows(m)]


def _with_points(windows, m):
    return [Grid(g.lo, g.hi, m) for g in windows]


def _tensor_logsum(model: Model, grids: list[Grid]) -> float:
    """log of the tensor trapezoid sum of e^f, in slabs over the leading axes."""
    n = len(grids)
    pts = [g.points for g in grids]
    lws = [g.log_weights for g in grids]
    # split into an outer loop over the first k axes and a vectorised inner block
    inner = n
    while inner > 1 and math.prod(g.m for g in grids[n - inner:]) > SLAB_POINTS:
        inner -= 1
    outer_axes = range(n - inner)
    inner_mesh = np.stack(np.meshgrid(*pts[n - inner:], indexing="ij"), axis=-1).reshape(-1, inner)
    inner_lw = sum(np.meshgrid(*lws[n - inner:], indexing="ij")).reshape(-1)
    parts = []
    for idx in itertools.product(*(range(grids[a].m) for a in outer_axes)):
        X = np.empty((inner_mesh.shape[0], n))
        for a, k in enumerate(idx):
            X[:, a] = pts[a][k]
        X[:, n - inner:] = inner_mesh
        lw = inner_lw + sum(lws[a][k] for a, k in enumerate(idx))
        parts.append(logsumexp(model.f(X) + lw))
    return float(logsumexp(np.asarray(parts)))


@dataclass
class BruteResult:
    logZ: float
    m: int
    change: float
    windows: list

    def __float__(self):
        return self.logZ

    def to_dict(self):
        return {"logZ": self.logZ, "m": self.m, "refinement_change": self.change, "windows": [g.to_dict() for g in self.windows]}


def brute_logZ_detail(model: Model, windows=None, levels=BRUTE_LEVELS, tol=BRUTE_TOL) -> BruteResult:
    n = model.n
    _check_dim(n, MAX_BRUTE_DIM)
    base = default_windows(model, levels[0]) if windows is None else list(windows)
    if len(base) != n:
        raise InvalidModel(f"need {n} windows, got {len(base)}")
    prev = None
    for m in levels:
        if m**n > MAX_TENSOR_POINTS:
            break
        val = _tensor_logsum(model, _with_points(base, m))
        if prev is not None and abs(val - prev) < tol:
            return BruteResult(val, m, abs(val - prev), _with_points(base, m))
        change = math.inf if prev is None else abs(val - prev)
        prev = val
    return BruteResult(prev, m, change, _with_points(base, m))


def brute_logZ(model: Model, windows=None) -> float:
    """log of the integral of e^f by tensor trapezoid, refined until doubling changes < 1e-7."""
    return brute_logZ_detail(model, windows).logZ


def brute_marginal(model: Model, i: int, windows=None, m_axis: int = grid1d.DEFAULT_POINTS, m_other: int = 129) -> GridDensity:
    """Marginal i of P on a fine grid, integrating the other axes on ``m_other`` points."""
    n = model.n
    _check_dim(n, MAX_MARGINAL_DIM)
    if not 0 <= i < n:
        raise InvalidModel(f"coordinate {i} out of range")
    base = default_windows(model, m_other) if windows is None else list(windows)
    gi = Grid(base[i].lo, base[i].hi, m_axis)
    others = [Grid(base[j].lo, base[j].hi, m_other) for j in range(n) if j != i]
    if others:
        mesh = np.stack(np.meshgrid(*(g.points for g in others), indexing="ij"), axis=-1).reshape(-1, n - 1)
        lw = sum(np.meshgrid(*(g.log_weights for g in others), indexing="ij")).reshape(-1)
    out = np.empty(gi.m)
    for k, xk in enumerate(gi.points):
        if not others:
            out[k] = model.f(np.array([xk]))
            continue
        X = np.insert(mesh, i, xk, axis=1)
        out[k] = logsumexp(model.f(X) + lw)
    return grid1d.normalize(out, gi)


def brute_marginals(model: Model, windows=None, **kw) -> ProductMeasure:
    return ProductMeasure(brute_marginal(model, i, windows, **kw) for i in range(model.n))


def _coarse(qi: GridDensity, target: int = 129) -> tuple[Grid, np.ndarray]:
    """Nested sub-grid of q_i with about ``target`` points, and log q_i there (renormalized)."""
    stride = max(1, (qi.grid.m - 1) // (target - 1))
    while (qi.grid.m - 1) % stride:
        stride -= 1
    g = Grid(qi.grid.lo, qi.grid.hi, (qi.grid.m - 1) // stride + 1)
    lq = qi.logq[::stride]
    return g, lq - grid1d.log_trapz(lq, g)


def _tensor_fields(model, q, target):
    n = q.n
    _check_dim(n, MAX_MARGINAL_DIM)
    coarse = [_coarse(qi, target) for qi in q]
    grids = [c[0] for c in coarse]
    X = np.stack(np.meshgrid(*(g.points for g in grids), indexing="ij"), axis=-1).reshape(-1, n)
    logq = sum(np.meshgrid(*(c[1] for c in coarse), indexing="ij")).reshape(-1)
    w = np.prod(np.meshgrid(*(g.weights for g in grids), indexing="ij"), axis=0).reshape(-1)
    return X, logq, w


def kl_q_p(model: Model, q: ProductMeasure, logZ: float, target: int = 129) -> float:
    """H(Q|P) by tensor quadrature of q log(q/p) on (sub-grids of) Q's grids."""
    X, logq, w = _tensor_fields(model, q, target)
    logp = model.f(X) - logZ
    return float(np.sum(w * np.exp(logq) * (logq - logp)))


def kl_p_q(model: Model, q: ProductMeasure, logZ: float, target: int = 129) -> float:
    """H(P|Q) by tensor quadrature of p log(p/q) on (sub-grids of) Q's grids.

    Q's grids must cover the bulk of P.
    """
    X, logq, w = _tensor_fields(model, q, target)
    logp = model.f(X) - logZ
    p = np.exp(logp)
    # renormalize p on this tensor grid so the quadrature sees a probability
    mass = float(np.sum(w * p))
    return float(np.sum(w * p * (logp - math.log(mass) - logq)) / mass)


def truth_report(model: Model) -> dict:
    res = brute_logZ_detail(model)
    out = res.to_dict()
    out["kappa"] = kappa_of(model)
    out["n"] = model.n
    return out
