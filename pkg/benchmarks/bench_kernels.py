"""Time the numba and numpy flavours of the control-simulation kernels.

    python benchmarks/bench_kernels.py [--paths 20000] [--steps 200] [--repeat 3]

Reports best-of-repeat wall time per kernel and backend, and the largest
difference between the two outputs.
"""
import argparse
import math
import time

import numpy as np

from mfcert import _kernels, grid1d
from mfcert.control import _log_h


def best_time(fn, repeat):
    best = math.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_lattice(steps, repeat):
    T = 1.0
    q = grid1d.gaussian(0.3, 0.5, grid1d.Grid.centered(0.0, 12.0, 1025))
    logh = _log_h(q, T, q.x, q.logq)
    dt = T / steps
    s_vals = T - dt * np.arange(steps)
    args = (logh, q.grid.lo, q.grid.h, s_vals, -10.0, 20.0 / 800, 801)
    # compile outside the timed region
    _kernels.follmer_lattice(*args[:3], s_vals[:2], *args[4:], backend="numba")
    rows = {}
    for backend in ("numba", "numpy"):
        rows[backend] = best_time(lambda: _kernels.follmer_lattice(*args, backend=backend), repeat)
    return rows


def bench_euler(paths, steps, repeat, n=2):
    rng = np.random.default_rng(0)
    mx = 801
    lattices = np.tile(-np.linspace(-10, 10, mx), (n, steps, 1)) * 0.5
    noise = rng.standard_normal((steps, paths, n))
    x0s, hxs = np.full(n, -10.0), np.full(n, 20.0 / (mx - 1))
    dt = 1.0 / steps

    def run(backend):
        x = np.zeros((paths, n))
        cost = np.zeros(paths)
        clips = np.zeros(paths, dtype=np.int64)
        _kernels.euler_chunk(x, cost, clips, lattices, x0s, hxs, 1e6, 0, noise, dt, backend=backend)
        return np.concatenate([x.ravel(), cost])

    run("numba")
    return {b: best_time(lambda b=b: run(b), repeat) for b in ("numba", "numpy")}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy kernels are available")
        return
    print(f"{'kernel':<16}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, rows in (("follmer_lattice", bench_lattice(a.steps, a.repeat)), ("euler_chunk", bench_euler(a.paths, a.steps, a.repeat))):
        (tn, on), (tp, op) = rows["numba"], rows["numpy"]
        print(f"{name:<16}{tn:>12.4f}{tp:>12.4f}{tp / tn:>10.1f}{float(np.max(np.abs(on - op))):>14.2e}")


if __name__ == "__main__":
    main()
