"""Concave model families and the mean-field reductions they support.

Every model evaluates ``f`` and its derivatives on batches ``X`` of shape
``(..., n)``. Beyond pointwise evaluation each family implements the
product-measure reductions the solver and the certificates need:

* ``conditional(q, i, x)``: x -> E_Q[f(X) | X_i = x] up to an additive constant
* ``expect_f(q)``: E_Q f
* ``cond_var_sum(q)``: E_Q sum_i Var_Q(d_i f | X_i)
* ``cross_sq_sum(q)``: sum_{i<j} E_Q |d_ij f|^2
* ``gauss_grad / gauss_f / gauss_hess_sq``: the same kind of integrals
  against an isotropic Gaussian N(y, tI), used by the tilt solver.
"""
from __future__ import annotations

import math
import warnings
from collections import OrderedDict

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import linalg as sla
from scipy import optimize

from . import grid1d
from .errors import GrowthGateFailed, InvalidModel, NonFinite, NotStronglyConcave
from .grid1d import Grid, GridDensity, ProductMeasure

PROBE_POINTS = 1001
PROBE_SEED = 20240607
GH_ORDER = 40

_gh_nodes, _gh_weights = hermegauss(GH_ORDER)
_gh_weights = _gh_weights / math.sqrt(2.0 * math.pi)


def gh_expect(func, mean, var):
    """E func(mean + sqrt(var) Z) for Z ~ N(0,1), 40-point Gauss-Hermite.

    ``mean`` may be an array; the node axis is appended last and reduced.
    """
    mean = np.asarray(mean, dtype=float)
    pts = mean[..., None] + math.sqrt(var) * _gh_nodes
    return func(pts) @ _gh_weights


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NonFinite(f"{what} is not finite")
    return value


def smallest_eigenvalue(A, tol=1e-10, max_iter=10_000):
    """Smallest eigenvalue of a symmetric PSD matrix by inverse power iteration.

    Returns 0.0 when A is singular to working precision.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(A, check_finite=True)
    except (sla.LinAlgError, ValueError):
        return 0.0
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(1.0, np.max(np.abs(A))):
        return 0.0
    v = np.random.default_rng(PROBE_SEED).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = float(v @ A @ v)
    for _ in range(max_iter):
        w = sla.lu_solve(lu, v)
        nw = np.linalg.norm(w)
        if not np.isfinite(nw) or nw == 0.0:
            return 0.0
        v = w / nw
        new = float(v @ A @ v)
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    return lam


# ---------------------------------------------------------------------------
# building blocks


class ScalarPotential:
    """A kappa-concave single-site potential V with declared growth constants."""

    def __init__(self, eval, d1, d2, kappa, growth=(0.0, 0.0), name="custom", params=None, check=True, check_growth=True):
        self.eval, self.d1, self.d2 = eval, d1, d2
        self.kappa = float(kappa)
        self.growth = tuple(float(g) for g in growth)
        self.name = name
        self.params = dict(params or {})
        self.growth_checked = bool(check_growth)
        if check:
            self.validate(check_growth=check_growth)

    def validate(self, check_growth=True):
        if not self.kappa > 0:
            raise NotStronglyConcave(f"potential {self.name} declares kappa={self.kappa}")
        x = np.linspace(-12.0 / math.sqrt(self.kappa), 12.0 / math.sqrt(self.kappa), PROBE_POINTS)
        if np.any(self.d2(x) > -self.kappa + 1e-9):
            raise NotStronglyConcave(f"potential {self.name}: V'' > -kappa on the probe grid")
        if check_growth:
            c1, c2 = self.growth
            if not c2 < self.kappa / 2:
                raise GrowthGateFailed(f"growth exponent c2={c2} must be < kappa/2={self.kappa / 2}")
            if np.any(np.abs(self.eval(x)) > c1 * np.exp(c2 * x * x) * (1 + 1e-12)):
                raise GrowthGateFailed(f"|V| exceeds the declared growth bound for {self.name}")

    def mode(self) -> float:
        hw = 12.0 / math.sqrt(self.kappa)
        lo, hi = -hw, hw
        for _ in range(60):
            if self.d1(np.float64(lo)) > 0 and self.d1(np.float64(hi)) < 0:
                break
            lo, hi = 2 * lo, 2 * hi
        return float(optimize.brentq(lambda t: float(self.d1(np.float64(t))), lo, hi, xtol=1e-14))

    def to_dict(self):
        return {"name": self.name, **self.params}


class InteractionKernel:
    """Even concave pair kernel K with |K''|^2 <= a exp(b|x|)."""

    def __init__(self, eval, d1, d2, growth=(1.0, 0.0), name="custom", params=None, check=True, probe_range=50.0):
        self.eval, self.d1, self.d2 = eval, d1, d2
        self.a, self.b = (float(g) for g in growth)
        self.name = name
        self.params = dict(params or {})
        if check:
            self.validate(probe_range)

    @property
    def growth(self):
        return (self.a, self.b)

    def validate(self, probe_range=50.0):
        x = np.linspace(-probe_range, probe_range, PROBE_POINTS)
        if np.max(np.abs(self.eval(x) - self.eval(-x))) > 1e-12 * max(1.0, np.max(np.abs(self.eval(x)))):
            raise InvalidModel(f"kernel {self.name} is not even")
        d2 = self.d2(x)
        if np.any(d2 > 1e-12):
            raise InvalidModel(f"kernel {self.name} is not concave on the probe grid")
        if np.any(d2 * d2 > self.a * np.exp(self.b * np.abs(x)) * (1 + 1e-12) + 1e-300):
            raise GrowthGateFailed(f"|K''|^2 exceeds the declared growth a*exp(b|x|) for {self.name}")

    def scaled(self, s: float) -> "InteractionKernel":
        s = float(s)
        params = dict(self.params)
        params["scale"] = params.get("scale", 1.0) * s
        return InteractionKernel(
            lambda u: s * self.eval(u),
            lambda u: s * self.d1(u),
            lambda u: s * self.d2(u),
            growth=(s * s * self.a, self.b),
            name=self.name,
            params=params,
            check=False,
        )

    def to_dict(self):
        return {"name": self.name, **self.params}


def gaussian_well(kappa=1.0, loc=0.0, growth=None, check_growth=True):
    k, c = float(kappa), float(loc)
    if growth is None:
        # kappa (x-c)^2/2 <= kappa x^2 + kappa c^2 <= (4 + kappa c^2) e^{kappa x^2/4}
        growth = (4.0 + k * c * c, k / 4.0)
    return ScalarPotential(
        lambda x: -0.5 * k * (x - c) ** 2,
        lambda x: -k * (x - c),
        lambda x: np.full_like(np.asarray(x, dtype=float), -k),
        k,
        growth=growth,
        name="gaussian_well",
        params={"kappa": k, "loc": c} if c else {"kappa": k},
        check_growth=check_growth,
    )


def quartic_well(kappa=1.0, lam=1.0, growth=None, check_growth=True):
    k, lm = float(kappa), float(lam)
    if growth is None:
        growth = (2.0 + 8.0 * lm / (k * k), k / 4.0)
    return ScalarPotential(
        lambda x: -0.5 * k * x * x - 0.25 * lm * x**4,
        lambda x: -k * x - lm * x**3,
        lambda x: -k - 3.0 * lm * x * x,
        k,
        growth=growth,
        name="quartic_well",
        params={"kappa": k, "lam": lm},
        check_growth=check_growth,
    )


def neg_quadratic_kernel(scale=1.0):
    s = float(scale)
    return InteractionKernel(
        lambda u: -0.5 * s * u * u,
        lambda u: -s * u,
        lambda u: np.full_like(np.asarray(u, dtype=float), -s),
        growth=(s * s, 0.0),
        name="neg_quadratic_kernel",
        params={"scale": s},
    )


def neg_sqrt_kernel(scale=1.0):
    s = float(scale)
    return InteractionKernel(
        lambda u: -s * np.sqrt(1.0 + u * u),
        lambda u: -s * u / np.sqrt(1.0 + u * u),
        lambda u: -s * (1.0 + u * u) ** -1.5,
        growth=(s * s, 0.0),
        name="neg_sqrt_kernel",
        params={"scale": s},
    )


def _logcosh(u):
    a = np.abs(u)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def neg_logcosh(scale=1.0):
    s = float(scale)
    return InteractionKernel(
        lambda u: -s * _logcosh(u),
        lambda u: -s * np.tanh(u),
        lambda u: -s / np.cosh(np.clip(u, -700, 700)) ** 2,
        growth=(s * s, 0.0),
        name="neg_logcosh",
        params={"scale": s},
    )


def zero_kernel():
    return InteractionKernel(
        lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        growth=(0.0, 0.0),
        name="zero_kernel",
    )


POTENTIALS = {"gaussian_well": gaussian_well, "quartic_well": quartic_well}
KERNELS = {
    "neg_quadratic_kernel": neg_quadratic_kernel,
    "neg_sqrt_kernel": neg_sqrt_kernel,
    "neg_logcosh": neg_logcosh,
    "zero_kernel": zero_kernel,
}


class CouplingMatrix:
    def __init__(self, entries):
        J = np.array(entries, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] < 1:
            raise InvalidModel("coupling matrix must be square")
        if not np.all(np.isfinite(J)):
            raise InvalidModel("coupling matrix has non-finite entries")
        if np.max(np.abs(J - J.T)) > 1e-12:
            raise InvalidModel("coupling matrix must be symmetric")
        if np.any(J < 0):
            raise InvalidModel("coupling matrix entries must be nonnegative")
        if np.any(np.diag(J) != 0):
            raise InvalidModel("coupling matrix must have zero diagonal")
        J = 0.5 * (J + J.T)
        J.setflags(write=False)
        self.entries = J

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def trace_sq(self) -> float:
        return float(np.sum(self.entries**2))

    def edges(self):
        iu, ju = np.nonzero(np.triu(self.entries, 1))
        return list(zip(iu.tolist(), ju.tolist()))

    def is_doubly_stochastic(self, tol=1e-10) -> bool:
        return bool(np.max(np.abs(self.entries.sum(axis=1) - 1.0)) <= tol)


# ---------------------------------------------------------------------------
# model families


class Model:
    """Shared behaviour; concrete families override the reductions."""

    n: int
    monte_carlo = False

    # pointwise -----------------------------------------------------------
    def f(self, X):
        raise NotImplementedError

    def grad(self, X):
        raise NotImplementedError

    def partial(self, X, i):
        return self.grad(X)[..., i]

    def cross(self, X, i, j):
        raise NotImplementedError

    def kappa(self) -> float:
        raise NotImplementedError

    def grad_lipschitz(self):
        """Global Lipschitz constant of grad f when known, else None."""
        return None

    def center(self) -> np.ndarray:
        """Mode of f; window centers for grids and chains."""
        x0 = np.zeros(self.n)
        res = optimize.minimize(
            lambda x: -float(self.f(x)), x0, jac=lambda x: -np.asarray(self.grad(x), dtype=float),
            method="L-BFGS-B", options={"gtol": 1e-10, "maxiter": 2000},
        )
        return np.asarray(res.x, dtype=float)

    def default_init(self, m=grid1d.DEFAULT_POINTS) -> ProductMeasure:
        kap = self.kappa()
        c = self.center()
        return ProductMeasure(
            grid1d.gaussian(c[i], 1.0 / kap, Grid.for_kappa(kap, c[i], m)) for i in range(self.n)
        )

    def windows(self, m=grid1d.DEFAULT_POINTS):
        kap = self.kappa()
        return [Grid.for_kappa(kap, ci, m) for ci in self.center()]

    # mean-field reductions ---------------------------------------------------
    def conditional(self, q: ProductMeasure, i: int, x) -> np.ndarray:
        raise NotImplementedError

    def expect_f(self, q: ProductMeasure) -> float:
        raise NotImplementedError

    def cond_var_sum(self, q: ProductMeasure) -> float:
        raise NotImplementedError

    def cross_sq_sum(self, q: ProductMeasure) -> float:
        raise NotImplementedError

    def gauss_grad(self, y, t):
        raise NotImplementedError

    def gauss_f(self, y, t) -> float:
        raise NotImplementedError

    def gauss_hess_sq(self, y, t) -> float:
        raise NotImplementedError

    def scaled(self, s: float) -> "Model":
        return Scaled(self, s)


class _MatrixCache:
    """Bounded cache of kernel matrices keyed by (tag, grid_x, grid_y)."""

    def __init__(self, maxsize=24):
        self._d = OrderedDict()
        self.maxsize = maxsize

    def get(self, key, build):
        if key in self._d:
            self._d.move_to_end(key)
            return self._d[key]
        mat = build()
        self._d[key] = mat
        if len(self._d) > self.maxsize:
            self._d.popitem(last=False)
        return mat


class PairwiseGibbs(Model):
    """f(x) = sum_i V(x_i) + sum_{i<j} J_ij K(x_i - x_j)."""

    def __init__(self, V: ScalarPotential, K: InteractionKernel, J):
        self.V, self.K = V, K
        self.J = J if isinstance(J, CouplingMatrix) else CouplingMatrix(J)
        self.n = self.J.n
        self._edges = self.J.edges()
        Jm = self.J.entries
        self._nbrs = [[(j, float(Jm[i, j])) for j in np.nonzero(Jm[i])[0]] for i in range(self.n)]
        self._cache = _MatrixCache()
        self._mode = None

    @property
    def edges(self):
        return list(self._edges)

    def _mat(self, tag, gx: Grid, gy: Grid):
        func = {
            "K": self.K.eval,
            "K1": self.K.d1,
            "K1sq": lambda u: self.K.d1(u) ** 2,
            "K2sq": lambda u: self.K.d2(u) ** 2,
        }[tag]
        return self._cache.get((tag, gx, gy), lambda: grid1d.kernel_matrix(func, gx.points, gy.points))

    def f(self, X):
        X = np.asarray(X, dtype=float)
        out = np.sum(self.V.eval(X), axis=-1)
        for i, j in self._edges:
            out = out + self.J.entries[i, j] * self.K.eval(X[..., i] - X[..., j])
        return _check_finite(out, "f")

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        g = self.V.d1(X).astype(float, copy=True)
        for i, j in self._edges:
            kp = self.J.entries[i, j] * self.K.d1(X[..., i] - X[..., j])
            g[..., i] += kp
            g[..., j] -= kp
        return _check_finite(g, "grad f")

    def partial(self, X, i):
        X = np.asarray(X, dtype=float)
        out = self.V.d1(X[..., i])
        for j, Jij in self._nbrs[i]:
            out = out + Jij * self.K.d1(X[..., i] - X[..., j])
        return _check_finite(out, "partial f")

    def cross(self, X, i, j):
        X = np.asarray(X, dtype=float)
        if i == j:
            raise InvalidModel("cross partial needs i != j")
        return _check_finite(-self.J.entries[i, j] * self.K.d2(X[..., i] - X[..., j]), "cross partial")

    def kappa(self):
        return self.V.kappa

    def center(self):
        if self._mode is None:
            self._mode = self.V.mode()
        return np.full(self.n, self._mode)

    def default_init(self, m=grid1d.DEFAULT_POINTS):
        return ProductMeasure(grid1d.normalize(self.V.eval(g.points), g) for g in self.windows(m))

    def conditional(self, q, i, x=None):
        gi = q[i].grid if x is None else None
        xs = q[i].x if x is None else np.asarray(x, dtype=float)
        out = np.array(self.V.eval(xs), dtype=float)
        for j, Jij in self._nbrs[i]:
            if gi is not None:
                c = self._mat("K", gi, q[j].grid) @ q[j].wq
            else:
                c = grid1d.kernel_smooth(q[j], self.K.eval, at=xs)
            out += Jij * c
        return out

    def pair_expect(self, tag, q, i, j):
        """Tensor-trapezoid integral of kernel[tag](x_i - x_j) under q_i x q_j."""
        return float(q[i].wq @ self._mat(tag, q[i].grid, q[j].grid) @ q[j].wq)

    def expect_f(self, q):
        total = sum(q[i].expect(self.V.eval(q[i].x)) for i in range(self.n))
        for i, j in self._edges:
            total += self.J.entries[i, j] * self.pair_expect("K", q, i, j)
        return float(total)

    def cond_var_sum(self, q):
        total = 0.0
        for i in range(self.n):
            gi = q[i].grid
            acc = np.zeros(gi.m)
            for j, Jij in self._nbrs[i]:
                m1 = self._mat("K1", gi, q[j].grid) @ q[j].wq
                m2 = self._mat("K1sq", gi, q[j].grid) @ q[j].wq
                acc += Jij * Jij * np.maximum(m2 - m1 * m1, 0.0)
            total += q[i].expect(acc)
        return _check_finite(float(total), "conditional variance")

    def cross_sq_sum(self, q):
        total = 0.0
        for i, j in self._edges:
            Jij = self.J.entries[i, j]
            total += Jij * Jij * self.pair_expect("K2sq", q, i, j)
        return _check_finite(float(total), "cross-derivative sum")

    def gauss_grad(self, y, t):
        y = np.asarray(y, dtype=float)
        g = gh_expect(self.V.d1, y, t)
        for i, j in self._edges:
            kp = self.J.entries[i, j] * float(gh_expect(self.K.d1, y[i] - y[j], 2 * t))
            g[i] += kp
            g[j] -= kp
        return g

    def gauss_f(self, y, t):
        y = np.asarray(y, dtype=float)
        total = float(np.sum(gh_expect(self.V.eval, y, t)))
        for i, j in self._edges:
            total += self.J.entries[i, j] * float(gh_expect(self.K.eval, y[i] - y[j], 2 * t))
        return total

    def gauss_hess_sq(self, y, t):
        y = np.asarray(y, dtype=float)
        total = 0.0
        for i, j in self._edges:
            total += 2 * self.J.entries[i, j] ** 2 * float(gh_expect(lambda u: self.K.d2(u) ** 2, y[i] - y[j], 2 * t))
        # diagonal: condition on x_i, neighbours independent given x_i
        sd = math.sqrt(t)
        for i in range(self.n):
            xi = y[i] + sd * _gh_nodes
            mean = self.V.d2(xi).astype(float)
            extra = np.zeros_like(xi)
            for j, Jij in self._nbrs[i]:
                diffs = xi[:, None] - (y[j] + sd * _gh_nodes)[None, :]
                k2 = self.K.d2(diffs)
                c = k2 @ _gh_weights
                s = (k2 * k2) @ _gh_weights
                mean += Jij * c
                extra += Jij * Jij * np.maximum(s - c * c, 0.0)
            total += float((mean * mean + extra) @ _gh_weights)
        return total

    def describe(self):
        return {"type": "pairwise", "V": self.V.to_dict(), "K": self.K.to_dict(), "n": self.n}


class QuadraticModel(Model):
    """f(x) = -x'Ax/2 + b'x + c with A symmetric positive semidefinite."""

    def __init__(self, A, b=None, c=0.0):
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidModel("A must be square")
        if np.max(np.abs(A - A.T)) > 1e-12:
            raise InvalidModel("A must be symmetric")
        A = 0.5 * (A + A.T)
        A.setflags(write=False)
        self.A = A
        self.n = A.shape[0]
        self.b = np.zeros(self.n) if b is None else np.array(b, dtype=float).reshape(self.n)
        self.c = float(c)
        if np.linalg.eigvalsh(A)[0] < -1e-12 * max(1.0, np.max(np.abs(A))):
            raise NotStronglyConcave("A is not positive semidefinite; f is not concave")
        self._lam_min = None
        self._offdiag = A - np.diag(np.diag(A))

    def f(self, X):
        X = np.asarray(X, dtype=float)
        return -0.5 * np.einsum("...i,ij,...j->...", X, self.A, X) + X @ self.b + self.c

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        return -X @ self.A + self.b

    def cross(self, X, i, j):
        X = np.asarray(X, dtype=float)
        return np.full(X.shape[:-1], -self.A[i, j]) if X.ndim > 1 else -self.A[i, j]

    def kappa(self):
        if self._lam_min is None:
            self._lam_min = smallest_eigenvalue(self.A)
        if not self._lam_min > 0:
            raise NotStronglyConcave(f"lambda_min(A) = {self._lam_min} is not positive")
        return self._lam_min

    def grad_lipschitz(self):
        return float(np.linalg.eigvalsh(self.A)[-1])

    def center(self):
        if not np.any(self.b):
            return np.zeros(self.n)
        return np.linalg.lstsq(self.A, self.b, rcond=None)[0]

    def conditional(self, q, i, x=None):
        xs = q[i].x if x is None else np.asarray(x, dtype=float)
        means = q.means
        lin = self.b[i] - self._offdiag[i] @ means
        return -0.5 * self.A[i, i] * xs * xs + lin * xs

    def expect_f(self, q):
        m, v = q.means, q.variances
        return float(-0.5 * (m @ self.A @ m + np.diag(self.A) @ v) + self.b @ m + self.c)

    def cond_var_sum(self, q):
        return float(np.sum(self._offdiag**2 @ q.variances))

    def cross_sq_sum(self, q=None):
        return float(np.sum(np.triu(self._offdiag, 1) ** 2))

    def gauss_grad(self, y, t):
        return -self.A @ np.asarray(y, dtype=float) + self.b

    def gauss_f(self, y, t):
        y = np.asarray(y, dtype=float)
        return float(-0.5 * (y @ self.A @ y + t * np.trace(self.A)) + self.b @ y + self.c)

    def gauss_hess_sq(self, y=None, t=None):
        return float(np.sum(self.A**2))

    def describe(self):
        return {"type": "quadratic", "n": self.n}


class BayesLinReg(Model):
    """Posterior potential sum_i V(beta_i) - |y - X beta|^2 / (2 sigma2)."""

    def __init__(self, X, y, sigma2, prior: ScalarPotential, prior_kappa=None):
        self.X = np.atleast_2d(np.array(X, dtype=float))
        self.y = np.array(y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.size:
            raise InvalidModel(f"design has {self.X.shape[0]} rows but y has {self.y.size} entries")
        if not sigma2 > 0:
            raise InvalidModel("sigma2 must be positive")
        self.sigma2 = float(sigma2)
        self.V = prior
        self.kappa1 = float(prior.kappa if prior_kappa is None else prior_kappa)
        self.n = self.X.shape[1]
        self.Jmat = self.X.T @ self.X
        self.r = self.X.T @ self.y
        self.kappa2 = max(smallest_eigenvalue(self.Jmat), 0.0)
        self._offdiag = self.Jmat - np.diag(np.diag(self.Jmat))
        if not self.kappa1 + self.kappa2 / self.sigma2 > 0:
            raise NotStronglyConcave("kappa1 + kappa2/sigma2 must be positive")

    @property
    def p(self):
        return self.n

    def f(self, B):
        B = np.asarray(B, dtype=float)
        resid = self.y - B @ self.X.T
        return _check_finite(np.sum(self.V.eval(B), axis=-1) - 0.5 * np.sum(resid * resid, axis=-1) / self.sigma2, "f")

    def grad(self, B):
        B = np.asarray(B, dtype=float)
        return self.V.d1(B) - (B @ self.Jmat - self.r) / self.sigma2

    def cross(self, B, i, j):
        B = np.asarray(B, dtype=float)
        val = -self.Jmat[i, j] / self.sigma2
        return np.full(B.shape[:-1], val) if B.ndim > 1 else val

    def kappa(self):
        return self.kappa1 + self.kappa2 / self.sigma2

    def center(self):
        M = self.Jmat / self.sigma2 + self.kappa1 * np.eye(self.n)
        c = np.linalg.solve(M, self.r / self.sigma2)
        return super_center(self, c)

    def default_init(self, m=grid1d.DEFAULT_POINTS):
        return ProductMeasure(grid1d.normalize(self.V.eval(g.points), g) for g in self.windows(m))

    def conditional(self, q, i, x=None):
        xs = q[i].x if x is None else np.asarray(x, dtype=float)
        lin = self.r[i] - self._offdiag[i] @ q.means
        return self.V.eval(xs) - (self.Jmat[i, i] * xs * xs - 2.0 * lin * xs) / (2.0 * self.sigma2)

    def expect_f(self, q):
        m, v = q.means, q.variances
        prior = sum(q[i].expect(self.V.eval(q[i].x)) for i in range(self.n))
        quad = self.y @ self.y - 2.0 * self.r @ m + m @ self.Jmat @ m + np.diag(self.Jmat) @ v
        return float(prior - 0.5 * quad / self.sigma2)

    def cond_var_sum(self, q):
        return float(np.sum(self._offdiag**2 @ q.variances) / self.sigma2**2)

    def cross_sq_sum(self, q=None):
        return float(np.sum(np.triu(self._offdiag, 1) ** 2) / self.sigma2**2)

    @property
    def offdiag_sq_sum(self):
        """sum_{i<j} J_ij^2 for J = X'X."""
        return float(np.sum(np.triu(self._offdiag, 1) ** 2))

    def gauss_grad(self, y, t):
        y = np.asarray(y, dtype=float)
        return gh_expect(self.V.d1, y, t) - (self.Jmat @ y - self.r) / self.sigma2

    def gauss_f(self, y, t):
        y = np.asarray(y, dtype=float)
        resid = self.y - self.X @ y
        quad = resid @ resid + t * np.trace(self.Jmat)
        return float(np.sum(gh_expect(self.V.eval, y, t)) - 0.5 * quad / self.sigma2)

    def gauss_hess_sq(self, y, t):
        y = np.asarray(y, dtype=float)
        off = np.sum(self._offdiag**2) / self.sigma2**2
        diag = gh_expect(lambda u: self.V.d2(u) ** 2, y, t)
        jd = np.diag(self.Jmat) / self.sigma2
        dv = gh_expect(self.V.d2, y, t)
        return float(off + np.sum(diag - 2.0 * jd * dv + jd * jd))

    def describe(self):
        return {"type": "bayes", "p": self.n, "n_obs": int(self.X.shape[0]), "sigma2": self.sigma2, "prior": self.V.to_dict()}


def super_center(model, x0):
    res = optimize.minimize(
        lambda x: -float(model.f(x)), np.asarray(x0, dtype=float), jac=lambda x: -np.asarray(model.grad(x), dtype=float),
        method="L-BFGS-B", options={"gtol": 1e-12, "maxiter": 2000},
    )
    return np.asarray(res.x, dtype=float)


class Scaled(Model):
    """s * f for s > 0. Derivatives scale by s, squared derivatives by s^2."""

    def __init__(self, base: Model, s: float):
        if not s > 0:
            raise InvalidModel("scale factor must be positive")
        self.base, self.s = base, float(s)
        self.n = base.n
        self.monte_carlo = getattr(base, "monte_carlo", False)

    def f(self, X):
        return self.s * self.base.f(X)

    def grad(self, X):
        return self.s * self.base.grad(X)

    def partial(self, X, i):
        return self.s * self.base.partial(X, i)

    def cross(self, X, i, j):
        return self.s * self.base.cross(X, i, j)

    def kappa(self):
        return self.s * self.base.kappa()

    def grad_lipschitz(self):
        L = self.base.grad_lipschitz()
        return None if L is None else self.s * L

    def center(self):
        return self.base.center()

    def conditional(self, q, i, x=None):
        return self.s * self.base.conditional(q, i, x)

    def expect_f(self, q):
        return self.s * self.base.expect_f(q)

    def cond_var_sum(self, q):
        return self.s**2 * self.base.cond_var_sum(q)

    def cross_sq_sum(self, q):
        return self.s**2 * self.base.cross_sq_sum(q)

    def gauss_grad(self, y, t):
        return self.s * np.asarray(self.base.gauss_grad(y, t))

    def gauss_f(self, y, t):
        return self.s * self.base.gauss_f(y, t)

    def gauss_hess_sq(self, y, t):
        return self.s**2 * self.base.gauss_hess_sq(y, t)

    def __getattr__(self, name):
        # estimator variants (expect_f_se, ...) of Monte Carlo bases
        if name.endswith("_se") and hasattr(self.base, name):
            meth = getattr(self.base, name)
            power = 1 if name.startswith(("expect_f", "gauss_f")) else 2
            return lambda *a, **k: tuple(self.s**power * v for v in meth(*a, **k))
        raise AttributeError(name)

    def describe(self):
        d = getattr(self.base, "describe", lambda: {})()
        return {**d, "scale": self.s}


# ---------------------------------------------------------------------------
# black-box models


class BlackBox(Model):
    """User-supplied concave f with gradient and cross partials.

    Mean-field integrals are Monte Carlo estimates with common random numbers;
    ``*_se`` methods return (estimate, standard error).
    """

    monte_carlo = True

    def __init__(self, n, f, grad, cross, kappa, center=None, mc_samples=20_000, seed=0, check=True, name="blackbox", params=None):
        self.n = int(n)
        self._f, self._grad, self._cross = f, grad, cross
        self._kappa = float(kappa)
        self._center = None if center is None else np.asarray(center, dtype=float)
        self.mc_samples = int(mc_samples)
        self.seed = int(seed)
        self.name = name
        self.params = dict(params or {})
        if check:
            self.validate()

    def validate(self, probes=100):
        rng = np.random.default_rng(PROBE_SEED)
        X = rng.standard_normal((probes, self.n)) / math.sqrt(self._kappa)
        for x in X:
            g = np.asarray(self._grad(x), dtype=float)
            for i in range(self.n):
                e = np.zeros(self.n)
                e[i] = 1e-5
                fd = (self._f(x + e) - self._f(x - e)) / 2e-5
                if abs(fd - g[i]) > 1e-5 * max(1.0, abs(g[i])):
                    raise InvalidModel(f"gradient of {self.name} disagrees with finite differences")
                for j in range(i + 1, self.n):
                    if abs(self._cross(x, i, j) - self._cross(x, j, i)) > 1e-8:
                        raise InvalidModel(f"cross partials of {self.name} are not symmetric")

    def f(self, X):
        X = np.asarray(X, dtype=float)
        return _check_finite(np.asarray(self._f(X), dtype=float), "f")

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        return _check_finite(np.asarray(self._grad(X), dtype=float), "grad f")

    def cross(self, X, i, j):
        return _check_finite(np.asarray(self._cross(np.asarray(X, dtype=float), i, j), dtype=float), "cross partial")

    def kappa(self):
        if not self._kappa > 0:
            raise NotStronglyConcave(f"declared kappa={self._kappa}")
        return self._kappa

    def center(self):
        if self._center is None:
            self._center = super_center(self, np.zeros(self.n))
        return self._center

    def _rng(self, *ids):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, *ids])))

    def _draw(self, q, rng, size):
        U = rng.random((size, self.n))
        U = np.clip(U, 1e-16, 1 - 1e-16)
        return np.column_stack([grid1d.quantile(q[j], U[:, j]) for j in range(self.n)])

    def conditional(self, q, i, x=None):
        xs = q[i].x if x is None else np.asarray(x, dtype=float)
        # one fixed uniform block per coordinate: the update is a deterministic
        # map of q, so the sweep can settle on a fixed point
        S = self._draw(q, self._rng(1, i), self.mc_samples)
        # coarse sub-grid + linear interpolation keeps the exponent concave
        stride = max(1, int(math.ceil((xs.size - 1) / 128)))
        idx = np.arange(0, xs.size, stride)
        if idx[-1] != xs.size - 1:
            idx = np.append(idx, xs.size - 1)
        vals = np.empty(idx.size)
        for k, xk in enumerate(xs[idx]):
            S[:, i] = xk
            vals[k] = np.mean(self.f(S))
        return np.interp(xs, xs[idx], vals)

    def expect_f_se(self, q):
        S = self._draw(q, self._rng(2), self.mc_samples)
        v = self.f(S)
        return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size))

    def expect_f(self, q):
        return self.expect_f_se(q)[0]

    def cond_var_sum_se(self, q, outer=64):
        inner = max(2, self.mc_samples // outer)
        rng = self._rng(3)
        per_outer = np.zeros(outer)
        for i in range(self.n):
            S = self._draw(q, rng, outer * inner).reshape(outer, inner, self.n)
            S[:, :, i] = S[:, :1, i]
            d = self.grad(S.reshape(-1, self.n))[:, i].reshape(outer, inner)
            per_outer += np.var(d, axis=1, ddof=1)
        return float(np.mean(per_outer)), float(np.std(per_outer, ddof=1) / math.sqrt(outer))

    def cond_var_sum(self, q):
        return self.cond_var_sum_se(q)[0]

    def cross_sq_sum_se(self, q):
        S = self._draw(q, self._rng(4), self.mc_samples)
        acc = np.zeros(S.shape[0])
        for i in range(self.n):
            for j in range(i + 1, self.n):
                acc += self.cross(S, i, j) ** 2
        return float(np.mean(acc)), float(np.std(acc, ddof=1) / math.sqrt(acc.size))

    def cross_sq_sum(self, q):
        return self.cross_sq_sum_se(q)[0]

    def _gauss_draws(self, y, t, tag):
        Z = self._rng(5, tag).standard_normal((self.mc_samples, self.n))
        return np.asarray(y, dtype=float) + math.sqrt(t) * Z

    def gauss_grad(self, y, t):
        return np.mean(self.grad(self._gauss_draws(y, t, 0)), axis=0)

    def gauss_f_se(self, y, t):
        v = self.f(self._gauss_draws(y, t, 1))
        return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size))

    def gauss_f(self, y, t):
        return self.gauss_f_se(y, t)[0]

    def gauss_hess_sq(self, y, t, eps=1e-4):
        S = self._gauss_draws(y, t, 2)
        acc = np.zeros(S.shape[0])
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = eps
            dii = (self.grad(S + e)[:, i] - self.grad(S - e)[:, i]) / (2 * eps)
            acc += dii * dii
            for j in range(self.n):
                if j != i:
                    acc += self.cross(S, i, j) ** 2
        return float(np.mean(acc))

    def describe(self):
        return {"type": "blackbox-builtin", "name": self.name, "n": self.n, **self.params}


def neg_logsumexp_blackbox(n, kappa=1.0, s=1.0, **kw):
    """f(x) = -kappa|x|^2/2 - s log sum_i exp(x_i)."""
    k, s = float(kappa), float(s)

    def lse(X):
        X = np.asarray(X, dtype=float)
        mx = np.max(X, axis=-1, keepdims=True)
        return (mx + np.log(np.sum(np.exp(X - mx), axis=-1, keepdims=True)))[..., 0]

    def soft(X):
        X = np.asarray(X, dtype=float)
        e = np.exp(X - np.max(X, axis=-1, keepdims=True))
        return e / np.sum(e, axis=-1, keepdims=True)

    return BlackBox(
        n,
        lambda X: -0.5 * k * np.sum(np.asarray(X) ** 2, axis=-1) - s * lse(X),
        lambda X: -k * np.asarray(X) - s * soft(X),
        lambda X, i, j: s * soft(X)[..., i] * soft(X)[..., j] if i != j else -k - s * (soft(X)[..., i] - soft(X)[..., i] ** 2),
        k,
        name="neg_logsumexp",
        params={"kappa": k, "s": s},
        **kw,
    )


def quadratic_blackbox(A, **kw):
    """Black-box wrapper around -x'Ax/2, for cross-checking the Monte Carlo path."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    return BlackBox(
        n,
        lambda X: -0.5 * np.einsum("...i,ij,...j->...", np.asarray(X), A, np.asarray(X)),
        lambda X: -np.asarray(X) @ A,
        lambda X, i, j: np.full(np.asarray(X).shape[:-1], -A[i, j]) if np.asarray(X).ndim > 1 else -A[i, j],
        smallest_eigenvalue(A),
        name="quadratic",
        params={"A": A.tolist()},
        **kw,
    )


BLACKBOXES = {"neg_logsumexp": neg_logsumexp_blackbox, "quadratic": quadratic_blackbox}


# ---------------------------------------------------------------------------
# spec-level operations


def eval_f(model: Model, x) -> float:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFinite("x must be finite")
    return float(_check_finite(model.f(x), "f"))


def partial_i(model: Model, x, i: int) -> float:
    return float(_check_finite(model.partial(np.asarray(x, dtype=float), i), "partial f"))


def cross_ij(model: Model, x, i: int, j: int) -> float:
    if i == j:
        raise InvalidModel("cross_ij needs i != j")
    return float(_check_finite(model.cross(np.asarray(x, dtype=float), i, j), "cross partial"))


def kappa_of(model: Model) -> float:
    k = float(model.kappa())
    if not k > 0:
        raise NotStronglyConcave(f"kappa = {k}")
    return k


# ---------------------------------------------------------------------------
# reference measures


class Reference:
    """Product reference measure rho = rho_1 x ... x rho_n on fixed grids.

    ``logpdf(x, i)`` / ``dlogpdf(x, i)`` may be supplied analytically; otherwise
    the grid log-density is interpolated linearly (-inf outside the window).
    """

    def __init__(self, rho: ProductMeasure, logpdf=None, dlogpdf=None, kappa=None, name="grid"):
        self.rho = rho
        self.n = rho.n
        self._logpdf, self._dlogpdf = logpdf, dlogpdf
        self.name = name
        self._kappa = None if kappa is None else float(kappa)

    def logpdf(self, x, i):
        if self._logpdf is not None:
            return self._logpdf(x, i)
        r = self.rho[i]
        return np.interp(x, r.x, r.logq, left=-np.inf, right=-np.inf)

    def dlogpdf(self, x, i):
        if self._dlogpdf is not None:
            return self._dlogpdf(x, i)
        r = self.rho[i]
        return np.interp(x, r.x, np.gradient(r.logq, r.grid.h))

    def on_grid(self, i, grid: Grid):
        r = self.rho[i]
        if r.grid == grid:
            return r.logq
        return self.logpdf(grid.points, i)

    @property
    def kappa(self) -> float:
        if self._kappa is None:
            worst = math.inf
            for r in self.rho:
                live = r.q > 1e-12 * np.max(r.q)
                d2 = np.diff(r.logq, 2) / r.grid.h**2
                worst = min(worst, float(-np.max(d2[live[1:-1]])))
            self._kappa = worst
        return self._kappa

    @property
    def centers(self):
        return np.array([r.grid.center for r in self.rho])


def gaussian_reference(n, var, centers=None, m=grid1d.DEFAULT_POINTS, sd=grid1d.DEFAULT_HALF_WIDTH_SD) -> Reference:
    """N(0, var) product reference; window i is centred at ``centers[i]``."""
    var = float(var)
    c = np.zeros(n) if centers is None else np.asarray(centers, dtype=float)
    hw = sd * math.sqrt(var)
    rho = ProductMeasure(grid1d.normalize(-0.5 * Grid.centered(ci, hw, m).points ** 2 / var, Grid.centered(ci, hw, m)) for ci in c)
    const = -0.5 * math.log(2 * math.pi * var)
    return Reference(
        rho,
        logpdf=lambda x, i: const - 0.5 * np.asarray(x, dtype=float) ** 2 / var,
        dlogpdf=lambda x, i: -np.asarray(x, dtype=float) / var,
        kappa=1.0 / var,
        name=f"gaussian(var={var:g})",
    )


class ReferenceModel(Model):
    """f = g + sum_i log rho_i(x_i): the Lebesgue form of a reference-measure problem."""

    def __init__(self, g: Model, ref: Reference):
        if g.n != ref.n:
            raise InvalidModel(f"g has dimension {g.n}, reference has {ref.n}")
        self.g, self.ref = g, ref
        self.n = g.n
        self.monte_carlo = getattr(g, "monte_carlo", False)

    def _logrho(self, X):
        X = np.asarray(X, dtype=float)
        return sum(self.ref.logpdf(X[..., i], i) for i in range(self.n))

    def f(self, X):
        return self.g.f(X) + self._logrho(X)

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        d = np.stack([self.ref.dlogpdf(X[..., i], i) for i in range(self.n)], axis=-1)
        return self.g.grad(X) + d

    def cross(self, X, i, j):
        return self.g.cross(X, i, j)

    def kappa(self):
        try:
            kg = self.g.kappa()
        except NotStronglyConcave:
            kg = 0.0
        k = self.ref.kappa + max(kg, 0.0)
        if not k > 0:
            raise NotStronglyConcave(f"reference kappa = {self.ref.kappa}")
        return k

    def grad_lipschitz(self):
        L = self.g.grad_lipschitz()
        if L is None or self.ref._dlogpdf is None:
            return None
        return L + self.ref.kappa

    def center(self):
        return super_center(self, self.ref.centers)

    def default_init(self, m=None):
        return self.ref.rho

    def windows(self, m=None):
        return [r.grid for r in self.ref.rho]

    def conditional(self, q, i, x=None):
        if x is None:
            return self.g.conditional(q, i) + self.ref.on_grid(i, q[i].grid)
        return self.g.conditional(q, i, x) + self.ref.logpdf(np.asarray(x, dtype=float), i)

    def _logrho_expect(self, q):
        return sum(q[i].expect(self.ref.on_grid(i, q[i].grid)) for i in range(self.n))

    def expect_f(self, q):
        return self.g.expect_f(q) + self._logrho_expect(q)

    def expect_f_se(self, q):
        v, se = self.g.expect_f_se(q)
        return v + self._logrho_expect(q), se

    def cond_var_sum(self, q):
        return self.g.cond_var_sum(q)

    def cross_sq_sum(self, q):
        return self.g.cross_sq_sum(q)

    def cond_var_sum_se(self, q):
        return self.g.cond_var_sum_se(q)

    def cross_sq_sum_se(self, q):
        return self.g.cross_sq_sum_se(q)

    def describe(self):
        d = getattr(self.g, "describe", lambda: {})()
        return {"type": "reference", "g": d, "reference": self.ref.name}
