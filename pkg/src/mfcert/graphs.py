"""Coupling-matrix generators for graph Gibbs models."""
from __future__ import annotations

import networkx as nx
import numpy as np

from .errors import InvalidModel

NORMALIZATIONS = (None, "none", "row", "max", "n")


def _normalize(J: np.ndarray, how) -> np.ndarray:
    if how in (None, "none"):
        return J
    rows = J.sum(axis=1)
    if how == "row":
        # symmetric row normalization only exists for constant row sums
        if np.ptp(rows) > 1e-12 * max(1.0, rows.max()):
            raise InvalidModel("row normalization needs a regular graph (constant row sums)")
        return J / rows[0]
    if how == "max":
        return J / rows.max()
    if how == "n":
        return J / J.shape[0]
    raise InvalidModel(f"unknown normalization {how!r}; choose from {NORMALIZATIONS}")


def cycle(n: int, normalize="row") -> np.ndarray:
    if n < 3:
        raise InvalidModel("a cycle needs n >= 3")
    return _normalize(nx.to_numpy_array(nx.cycle_graph(n)), normalize)


def complete(n: int, normalize="row") -> np.ndarray:
    if n < 2:
        raise InvalidModel("a complete graph needs n >= 2")
    return _normalize(nx.to_numpy_array(nx.complete_graph(n)), normalize)


def dregular(n: int, d: int, seed: int = 0, normalize="row") -> np.ndarray:
    if d >= n or (n * d) % 2:
        raise InvalidModel(f"no {d}-regular graph on {n} vertices")
    g = nx.random_regular_graph(d, n, seed=int(seed))
    return _normalize(nx.to_numpy_array(g, nodelist=range(n)), normalize)


def block(sizes, weights, normalize=None) -> np.ndarray:
    """J_ij = weights[a][b] for i in block a, j in block b, i != j."""
    sizes = [int(s) for s in sizes]
    W = np.asarray(weights, dtype=float)
    if W.shape != (len(sizes), len(sizes)) or np.max(np.abs(W - W.T)) > 1e-12 or np.any(W < 0):
        raise InvalidModel("block weights must be a symmetric nonnegative matrix matching the sizes")
    labels = np.repeat(np.arange(len(sizes)), sizes)
    J = W[np.ix_(labels, labels)].copy()
    np.fill_diagonal(J, 0.0)
    return _normalize(J, normalize)


GENERATORS = {"cycle", "complete", "dregular", "block"}


def from_spec(spec) -> np.ndarray:
    """Build J from a dense list or a one-key generator mapping."""
    if isinstance(spec, (list, tuple, np.ndarray)):
        return np.asarray(spec, dtype=float)
    if not isinstance(spec, dict):
        raise InvalidModel("J must be a dense array or a generator object")
    spec = dict(spec)
    norm = spec.pop("normalize", "row")
    kinds = [k for k in spec if k in GENERATORS]
    if len(kinds) != 1:
        raise InvalidModel(f"J generator must name exactly one of {sorted(GENERATORS)}")
    kind = kinds[0]
    arg = spec[kind]
    if kind == "cycle":
        return cycle(int(arg), norm)
    if kind == "complete":
        return complete(int(arg), norm)
    if kind == "dregular":
        return dregular(int(arg["n"]), int(arg["d"]), int(arg.get("seed", 0)), norm)
    return block(arg["sizes"], arg["weights"], arg.get("normalize", None if norm == "row" else norm))
