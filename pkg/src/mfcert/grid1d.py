"""One-dimensional densities stored as log-weights on uniform grids.

All quadratures are composite trapezoid rules on the grid points. Densities
are kept in log space and normalized with the max-subtraction trick, so
strongly peaked marginals never overflow.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AllNegInfinite, InvalidModel, NonFiniteInput, NonFiniteKernel, OutOfRange

DEFAULT_POINTS = 1025
DEFAULT_HALF_WIDTH_SD = 12.0
MAX_EXPANSIONS = 3
TRUNCATION_RATIO = 1e-8


@dataclass(frozen=True)
class Grid:
    lo: float
    hi: float
    m: int

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi <= self.lo:
            raise InvalidModel(f"grid needs finite lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.m) != self.m or self.m < 16:
            raise InvalidModel(f"grid needs m >= 16 points, got {self.m}")
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "m", int(self.m))

    @classmethod
    def centered(cls, center: float, half_width: float, m: int = DEFAULT_POINTS) -> "Grid":
        return cls(center - half_width, center + half_width, m)

    @classmethod
    def for_kappa(cls, kappa: float, center: float = 0.0, m: int = DEFAULT_POINTS, sd: float = DEFAULT_HALF_WIDTH_SD) -> "Grid":
        """Window of ``sd`` standard deviations of a kappa-log-concave law."""
        return cls.centered(center, sd / math.sqrt(kappa), m)

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.m - 1)

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)

    @cached_property
    def points(self) -> np.ndarray:
        x = self.lo + self.h * np.arange(self.m)
        x[-1] = self.hi
        x.setflags(write=False)
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights."""
        w = np.full(self.m, self.h)
        w[0] = w[-1] = 0.5 * self.h
        w.setflags(write=False)
        return w

    @cached_property
    def log_weights(self) -> np.ndarray:
        lw = np.log(self.weights)
        lw.setflags(write=False)
        return lw

    def refined(self, factor: int = 2) -> "Grid":
        """Same window, nested grid with ``factor`` times the resolution."""
        return Grid(self.lo, self.hi, factor * (self.m - 1) + 1)

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "m": self.m}


def log_trapz(logf: np.ndarray, grid: Grid) -> float:
    """log of the trapezoid integral of exp(logf)."""
    a = logf + grid.log_weights
    top = np.max(a)
    if not np.isfinite(top):
        return -math.inf
    return float(top + math.log(np.sum(np.exp(a - top))))


@dataclass(frozen=True, eq=False)
class GridDensity:
    grid: Grid
    logw: np.ndarray
    logZ1: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def x(self) -> np.ndarray:
        return self.grid.points

    @property
    def logq(self) -> np.ndarray:
        if "logq" not in self._cache:
            lq = self.logw - self.logZ1
            lq.setflags(write=False)
            self._cache["logq"] = lq
        return self._cache["logq"]

    @property
    def q(self) -> np.ndarray:
        if "q" not in self._cache:
            q = np.exp(self.logq)
            q.setflags(write=False)
            self._cache["q"] = q
        return self._cache["q"]

    @property
    def wq(self) -> np.ndarray:
        """Quadrature weights times density: the discrete measure."""
        if "wq" not in self._cache:
            wq = self.grid.weights * self.q
            wq.setflags(write=False)
            self._cache["wq"] = wq
        return self._cache["wq"]

    def expect(self, values) -> float:
        return float(np.dot(self.wq, values))

    @property
    def mean(self) -> float:
        return moments(self, 1)

    @property
    def var(self) -> float:
        mu = self.mean
        return float(np.dot(self.wq, (self.x - mu) ** 2))

    @property
    def truncated(self) -> bool:
        q = self.q
        return bool(max(q[0], q[-1]) > TRUNCATION_RATIO * np.max(q))

    @property
    def cdf(self) -> np.ndarray:
        if "cdf" not in self._cache:
            q = self.q
            c = np.empty_like(q)
            c[0] = 0.0
            np.cumsum(0.5 * self.grid.h * (q[1:] + q[:-1]), out=c[1:])
            c.setflags(write=False)
            self._cache["cdf"] = c
        return self._cache["cdf"]

    def to_dict(self):
        return {
            "lo": self.grid.lo,
            "hi": self.grid.hi,
            "m": self.grid.m,
            "logw": [float(v) for v in self.logw],
            "logZ1": float(self.logZ1),
        }

    @classmethod
    def from_dict(cls, d) -> "GridDensity":
        grid = Grid(d["lo"], d["hi"], d["m"])
        logw = np.asarray(d["logw"], dtype=float)
        if logw.shape != (grid.m,):
            raise InvalidModel(f"logw has {logw.size} entries, grid has {grid.m}")
        return cls(grid, logw, float(d["logZ1"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "GridDensity":
        return cls.from_dict(json.loads(s))


def normalize(logw, grid: Grid) -> GridDensity:
    logw = np.array(logw, dtype=float)
    if logw.shape != (grid.m,):
        raise InvalidModel(f"logw has shape {logw.shape}, grid has {grid.m} points")
    if np.any(np.isnan(logw)) or np.any(logw == np.inf):
        raise NonFiniteInput("log-weights contain NaN or +inf")
    if not np.any(np.isfinite(logw)):
        raise AllNegInfinite("log-weights have no finite entry")
    logw.setflags(write=False)
    return GridDensity(grid, logw, log_trapz(logw, grid))


def from_logpdf(logpdf, grid: Grid) -> GridDensity:
    return normalize(logpdf(grid.points), grid)


def gaussian(mean: float, var: float, grid: Grid | None = None, m: int = DEFAULT_POINTS) -> GridDensity:
    if grid is None:
        grid = Grid.centered(mean, DEFAULT_HALF_WIDTH_SD * math.sqrt(var), m)
    return normalize(-0.5 * (grid.points - mean) ** 2 / var, grid)


def entropy(q: GridDensity) -> float:
    """Integral of q log q (the negative differential entropy)."""
    lq = q.logq
    integrand = np.where(q.q > 0.0, q.q * np.where(np.isfinite(lq), lq, 0.0), 0.0)
    return float(np.dot(q.grid.weights, integrand))


def moments(q: GridDensity, k: int) -> float:
    if k not in (1, 2):
        raise OutOfRange(f"moment order must be 1 or 2, got {k}")
    return float(np.dot(q.wq, q.x**k))


def quantile(q: GridDensity, u):
    """Inverse of the trapezoid CDF, linear between grid points.

    Accepts a scalar or an array of levels in (0, 1).
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(~((u_arr > 0.0) & (u_arr < 1.0))):
        raise OutOfRange("quantile levels must lie in (0, 1)")
    c = q.cdf
    # the trapezoid CDF ends at 1 only up to rounding
    out = np.interp(u_arr * c[-1], c, q.x)
    return float(out) if np.ndim(out) == 0 else out


def w2(q1: GridDensity, q2: GridDensity, K: int = 4096) -> float:
    """Quadratic Wasserstein distance via the quantile coupling, K-point midpoint rule."""
    if q1 is q2:
        return 0.0
    u = (np.arange(K) + 0.5) / K
    d = quantile(q1, u) - quantile(q2, u)
    return float(math.sqrt(np.mean(d * d)))


def kernel_matrix(K, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Matrix K(x_a - y_b), checked for finiteness."""
    mat = K(np.subtract.outer(x, y))
    mat = np.asarray(mat, dtype=float)
    if not np.all(np.isfinite(mat)):
        raise NonFiniteKernel("kernel is not finite on the difference range")
    return mat


def kernel_smooth(q: GridDensity, K, at: np.ndarray | None = None, matrix: np.ndarray | None = None) -> np.ndarray:
    """c(x) = integral of K(x - y) q(y) dy at ``at`` (default: q's own grid).

    ``matrix`` may carry a precomputed ``kernel_matrix(K, at, q.x)``.
    """
    if matrix is None:
        matrix = kernel_matrix(K, q.x if at is None else np.asarray(at, dtype=float), q.x)
    return matrix @ q.wq


class ProductMeasure:
    """Ordered tuple of normalized 1D marginals."""

    def __init__(self, marginals):
        marginals = tuple(marginals)
        if not marginals:
            raise InvalidModel("a product measure needs at least one marginal")
        for mq in marginals:
            if not isinstance(mq, GridDensity):
                raise InvalidModel("marginals must be GridDensity values")
        self.marginals = marginals

    def __len__(self):
        return len(self.marginals)

    def __getitem__(self, i) -> GridDensity:
        return self.marginals[i]

    def __iter__(self):
        return iter(self.marginals)

    @property
    def n(self) -> int:
        return len(self.marginals)

    @property
    def means(self) -> np.ndarray:
        return np.array([mq.mean for mq in self.marginals])

    @property
    def variances(self) -> np.ndarray:
        return np.array([mq.var for mq in self.marginals])

    def replace(self, i: int, qi: GridDensity) -> "ProductMeasure":
        ms = list(self.marginals)
        ms[i] = qi
        return ProductMeasure(ms)

    def to_dict(self):
        return {"marginals": [mq.to_dict() for mq in self.marginals]}

    @classmethod
    def from_dict(cls, d) -> "ProductMeasure":
        return cls(GridDensity.from_dict(mq) for mq in d["marginals"])

    @classmethod
    def iid(cls, q: GridDensity, n: int) -> "ProductMeasure":
        return cls([q] * n)
