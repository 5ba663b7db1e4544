"""Sampling: MALA/ULA chains for P, exact draws from product measures and Gaussians."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import grid1d
from .certify import Certificate, certify, lln_rhs
from .errors import DivergentChain, InvalidModel, LengthMismatch
from .grid1d import ProductMeasure
from .models import Model, kappa_of

TARGET_ACCEPT = 0.574
ESS_BATCHES = 32
MAGIC = b"MFCSAMP1"

# counter words used to separate the random streams of one seed
_TAG_INIT, _TAG_PROPOSAL, _TAG_ACCEPT, _TAG_PRODUCT, _TAG_GAUSS = range(1, 6)


def _stream(seed: int, tag: int, step: int = 0) -> np.random.Generator:
    """Philox generator for (seed, tag, step); independent of how work is scheduled."""
    return np.random.Generator(np.random.Philox(key=np.uint64(int(seed) % 2**64), counter=[0, 0, tag, step]))


@dataclass(frozen=True)
class ChainOptions:
    steps: int = 20_000
    burnin: int = 2_000
    step_size: float | str = "auto"
    n_chains: int = 8
    seed: int = 0
    mala: bool = True
    thin: int = 1

    def __post_init__(self):
        if not self.steps > self.burnin >= 0:
            raise InvalidModel("need steps > burnin >= 0")
        if self.step_size != "auto" and not float(self.step_size) > 0:
            raise InvalidModel("step_size must be positive or 'auto'")
        if self.n_chains < 1 or self.thin < 1:
            raise InvalidModel("n_chains and thin must be >= 1")

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise InvalidModel(f"unknown chain options: {sorted(extra)}")
        return cls(**d)


@dataclass
class SampleSet:
    draws: np.ndarray
    source: str
    acceptance: float = 1.0
    ess: np.ndarray | None = None
    step_size: float | None = None
    n_chains: int = 1
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def per_chain(self) -> np.ndarray:
        """Draws reshaped to (n_chains, draws_per_chain, n)."""
        return self.draws.reshape(self.n_chains, -1, self.draws.shape[1])

    def summary(self):
        return {
            "source": self.source,
            "n_draws": int(self.n_draws),
            "n": int(self.draws.shape[1]),
            "acceptance": self.acceptance,
            "step_size": self.step_size,
            "ess": None if self.ess is None else [float(v) for v in self.ess],
            **self.diagnostics,
        }


def batch_means_var(values: np.ndarray, n_chains: int = 1, batches: int = ESS_BATCHES):
    """(sample variance, long-run variance) of a chain-major series via batch means.

    ``values`` has shape (N,) or (N, d); each chain is cut into ``batches`` batches.
    """
    v = np.asarray(values, dtype=float)
    flat = v.reshape(n_chains, -1, *v.shape[1:])
    per = flat.shape[1]
    b = per // batches
    if b < 1:
        raise InvalidModel(f"need at least {batches} draws per chain for batch means")
    trimmed = flat[:, : b * batches]
    means = trimmed.reshape(n_chains, batches, b, *v.shape[1:]).mean(axis=2)
    means = means.reshape(n_chains * batches, *v.shape[1:])
    return np.var(v, axis=0, ddof=1), b * np.var(means, axis=0, ddof=1)


def ess(values: np.ndarray, n_chains: int = 1) -> np.ndarray:
    s2, lrv = batch_means_var(values, n_chains)
    N = np.asarray(values).shape[0]
    return N * s2 / np.maximum(lrv, 1e-300)


def mc_stderr(values: np.ndarray, n_chains: int = 1) -> float:
    """Standard error of the mean of a correlated chain-major series."""
    _, lrv = batch_means_var(values, n_chains)
    return float(np.sqrt(lrv / np.asarray(values).shape[0]))


def _log_q_ratio(x_to, x_from, g_from, h):
    """log density of proposing x_to from x_from (up to constants)."""
    d = x_to - x_from - 0.5 * h * g_from
    return -np.sum(d * d, axis=-1) / (2.0 * h)


def sample_p(model: Model, opts: ChainOptions | None = None) -> SampleSet:
    """MALA (or ULA) chains targeting P proportional to e^f, vectorised across chains."""
    opts = opts or ChainOptions()
    kap = kappa_of(model)
    n = model.n
    L = model.grad_lipschitz()
    center = np.asarray(model.center(), dtype=float)
    limit = 4.0 * 12.0 / math.sqrt(kap)
    C = opts.n_chains
    x = center + _stream(opts.seed, _TAG_INIT).standard_normal((C, n)) / math.sqrt(kap)
    fx = model.f(x)
    gx = model.grad(x)
    scale = L if L is not None else kap
    auto = opts.step_size == "auto"
    h = (1.0 / (scale * n ** (1.0 / 3.0))) if auto else float(opts.step_size)
    h_max = 1.9 / L if L is not None else math.inf
    if auto:
        h = min(h, h_max)
    keep = []
    accepted = 0
    tried = 0
    log_h = math.log(h)
    for step in range(opts.steps):
        xi = _stream(opts.seed, _TAG_PROPOSAL, step).standard_normal((C, n))
        y = x + 0.5 * h * gx + math.sqrt(h) * xi
        fy = model.f(y)
        gy = model.grad(y)
        if opts.mala:
            log_a = fy - fx + _log_q_ratio(x, y, gy, h) - _log_q_ratio(y, x, gx, h)
            u = _stream(opts.seed, _TAG_ACCEPT, step).random(C)
            acc = np.log(np.maximum(u, 1e-300)) < log_a
        else:
            acc = np.ones(C, dtype=bool)
        x = np.where(acc[:, None], y, x)
        fx = np.where(acc, fy, fx)
        gx = np.where(acc[:, None], gy, gx)
        if np.any(np.abs(x - center) > limit):
            raise DivergentChain(f"a chain left the window |x - center| <= {limit:.3g} at step {step}")
        if step < opts.burnin:
            if auto and opts.mala:
                # stochastic approximation on log h towards the target acceptance
                rate = float(np.mean(acc))
                log_h += (rate - TARGET_ACCEPT) / (step + 1) ** 0.6
                log_h = min(log_h, math.log(h_max))
                h = math.exp(log_h)
            continue
        tried += C
        accepted += int(np.sum(acc))
        if (step - opts.burnin) % opts.thin == 0:
            keep.append(x.copy())
    draws = np.stack(keep, axis=1).reshape(-1, n)  # chain-major
    acc_rate = accepted / max(tried, 1)
    try:
        e = ess(draws, C)
    except InvalidModel:
        e = None
    return SampleSet(draws, "mala" if opts.mala else "ula", acc_rate, e, h, C)


def sample_q(q: ProductMeasure, n_draws: int, seed: int = 0) -> SampleSet:
    """Independent draws from a product of grid densities by inverse CDF."""
    U = _stream(seed, _TAG_PRODUCT).random((int(n_draws), q.n))
    tiny = np.finfo(float).eps
    U = np.clip(U, tiny, 1.0 - tiny)
    draws = np.column_stack([grid1d.quantile(q[i], U[:, i]) for i in range(q.n)])
    return SampleSet(draws, "product_exact", 1.0, None, None, 1)


def sample_gaussian(A, n_draws: int, seed: int = 0, mean=None) -> SampleSet:
    """Exact draws from N(mean, A^{-1}) via the Cholesky factor of the precision."""
    A = np.asarray(A, dtype=float)
    Lc = np.linalg.cholesky(A)
    Z = _stream(seed, _TAG_GAUSS).standard_normal((int(n_draws), A.shape[0]))
    # x = L^{-T} z has covariance (L L^T)^{-1}
    X = np.linalg.solve(Lc.T, Z.T).T
    if mean is not None:
        X = X + np.asarray(mean, dtype=float)
    return SampleSet(X, "gaussian_exact", 1.0, None, None, 1)


def empirical_w2(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size != b.size:
        raise LengthMismatch(f"samples have lengths {a.size} and {b.size}")
    if a.size < 2:
        raise LengthMismatch("need at least two draws per sample")
    return float(math.sqrt(np.mean((a - b) ** 2)))


LIPSCHITZ_PHIS = {"identity": lambda x: x, "abs": np.abs, "tanh": np.tanh}


@dataclass
class LLNCheck:
    lhs_estimate: float
    rhs: float
    stderr: float
    phi: str
    n_draws: int

    def __iter__(self):
        return iter((self.lhs_estimate, self.rhs))

    @property
    def holds(self) -> bool:
        """lhs <= rhs up to three Monte Carlo standard errors."""
        return self.lhs_estimate <= self.rhs + 3.0 * self.stderr

    def to_dict(self):
        return {"lhs_estimate": self.lhs_estimate, "rhs": self.rhs, "stderr": self.stderr, "phi": self.phi, "n_draws": self.n_draws}


def lln_check(model: Model, q: ProductMeasure, phi: str = "identity", opts: ChainOptions | None = None,
              cert: Certificate | None = None, samples: SampleSet | None = None) -> LLNCheck:
    """Estimate E_P[((1/n) sum phi(X_i) - (1/n) sum E_{q_i} phi)^2] and the certified bound on it."""
    if phi not in LIPSCHITZ_PHIS:
        raise InvalidModel(f"phi must be one of {sorted(LIPSCHITZ_PHIS)}")
    fn = LIPSCHITZ_PHIS[phi]
    cert = cert or certify(model, q)
    s = samples if samples is not None else sample_p(model, opts)
    n = model.n
    centre = sum(q[i].expect(fn(q[i].x)) for i in range(n)) / n
    dev = np.mean(fn(s.draws), axis=1) - centre
    vals = dev * dev
    return LLNCheck(
        lhs_estimate=float(np.mean(vals)),
        rhs=lln_rhs(max(cert.rf_bound, 0.0), cert.kappa, n),
        stderr=mc_stderr(vals, s.n_chains),
        phi=phi,
        n_draws=s.n_draws,
    )


def write_samples(path, draws: np.ndarray):
    draws = np.ascontiguousarray(draws, dtype="<f8")
    if draws.ndim != 2:
        raise InvalidModel("draws must be a 2-D array")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<qq", draws.shape[0], draws.shape[1]))
        fh.write(draws.tobytes(order="C"))


def read_samples(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise InvalidModel(f"{path} is not an mfcert sample file")
        rows, cols = struct.unpack("<qq", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise InvalidModel(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(float)
