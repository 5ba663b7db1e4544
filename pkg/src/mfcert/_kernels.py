"""Hot loops of the control simulator, in numba and numpy flavours.

``follmer_lattice`` tabulates the per-coordinate Follmer drift on a
(time, x) lattice; ``euler_chunk`` advances the controlled paths through a
block of time steps. The Euler kernels perform the same floating-point
operations in the same order; the lattice kernels agree to rounding.
``USE_NUMBA`` picks the default flavour.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA

#: the numba lattice kernel drops weights below exp(-LOG_CUTOFF) times the largest
LOG_CUTOFF = 60.0


def follmer_lattice_numpy(logh, y0, hy, s_vals, x0, hx, mx, chunk=256):
    """Drift (E_w[Y] - x)/s with w(y) prop. to h(y) exp(-(y - x)^2 / (2s)), for each s and lattice x.

    Sums over the full y grid; the numba kernel skips relative weights below
    exp(-LOG_CUTOFF), which changes nothing above rounding.
    """
    my = logh.size
    y = y0 + hy * np.arange(my)
    x = x0 + hx * np.arange(mx)
    out = np.empty((s_vals.size, mx))
    for k in range(s_vals.size):
        s = s_vals[k]
        for c0 in range(0, mx, chunk):
            xs = x[c0:c0 + chunk]
            d = y[None, :] - xs[:, None]
            a = logh[None, :] - d * d / (2.0 * s)
            a -= a.max(axis=1, keepdims=True)
            w = np.exp(a)
            out[k, c0:c0 + chunk] = (w @ y / w.sum(axis=1) - xs) / s
    return out


def euler_chunk_numpy(x, cost, clips, lattices, x0s, hxs, clip, k0, noise, dt):
    """Advance paths x (P, n) through noise.shape[0] steps starting at step k0.

    Accumulates the running control cost sum_i alpha_i^2 dt per path and
    per-path clip counts in place.
    """
    sq = math.sqrt(dt)
    n = x.shape[1]
    mx = lattices.shape[2]
    for c in range(noise.shape[0]):
        k = k0 + c
        for i in range(n):
            pos = (x[:, i] - x0s[i]) / hxs[i]
            j = np.clip(np.floor(pos), 0, mx - 2).astype(np.int64)
            fr = np.clip(pos - j, 0.0, 1.0)
            row = lattices[i, k]
            a = row[j] * (1.0 - fr) + row[j + 1] * fr
            over = np.abs(a) > clip
            clips += over
            a = np.where(over, np.copysign(clip, a), a)
            cost += a * a * dt
            x[:, i] += a * dt + sq * noise[c, :, i]


if HAVE_NUMBA:
    from numba import njit, prange

    @njit(cache=True)
    def _logw(logh, y0, hy, l, xj, s):
        d = y0 + hy * l - xj
        return logh[l] - d * d / (2.0 * s)

    @njit(cache=True, parallel=True)
    def follmer_lattice_numba(logh, y0, hy, s_vals, x0, hx, mx):
        # for s <= T the log weight is concave in y: climb to its mode, then
        # sum outwards until it drops LOG_CUTOFF below the peak
        my = logh.size
        out = np.empty((s_vals.size, mx))
        for k in range(s_vals.size):
            s = s_vals[k]
            for j in prange(mx):
                xj = x0 + hx * j
                top_l = min(max(int(round((xj - y0) / hy)), 0), my - 1)
                top = _logw(logh, y0, hy, top_l, xj, s)
                while top_l + 1 < my and _logw(logh, y0, hy, top_l + 1, xj, s) > top:
                    top_l += 1
                    top = _logw(logh, y0, hy, top_l, xj, s)
                while top_l > 0 and _logw(logh, y0, hy, top_l - 1, xj, s) > top:
                    top_l -= 1
                    top = _logw(logh, y0, hy, top_l, xj, s)
                sw = 0.0
                swy = 0.0
                l = top_l
                while l >= 0:
                    a = _logw(logh, y0, hy, l, xj, s) - top
                    if a < -LOG_CUTOFF:
                        break
                    w = math.exp(a)
                    sw += w
                    swy += w * (y0 + hy * l)
                    l -= 1
                l = top_l + 1
                while l < my:
                    a = _logw(logh, y0, hy, l, xj, s) - top
                    if a < -LOG_CUTOFF:
                        break
                    w = math.exp(a)
                    sw += w
                    swy += w * (y0 + hy * l)
                    l += 1
                out[k, j] = (swy / sw - xj) / s
        return out

    @njit(cache=True, parallel=True)
    def euler_chunk_numba(x, cost, clips, lattices, x0s, hxs, clip, k0, noise, dt):
        sq = math.sqrt(dt)
        P, n = x.shape
        mx = lattices.shape[2]
        for p in prange(P):
            for c in range(noise.shape[0]):
                k = k0 + c
                for i in range(n):
                    pos = (x[p, i] - x0s[i]) / hxs[i]
                    j = math.floor(pos)
                    if j < 0:
                        j = 0
                    elif j > mx - 2:
                        j = mx - 2
                    fr = pos - j
                    if fr < 0.0:
                        fr = 0.0
                    elif fr > 1.0:
                        fr = 1.0
                    ji = int(j)
                    a = lattices[i, k, ji] * (1.0 - fr) + lattices[i, k, ji + 1] * fr
                    if abs(a) > clip:
                        clips[p] += 1
                        a = clip if a > 0 else -clip
                    cost[p] += a * a * dt
                    x[p, i] += a * dt + sq * noise[c, p, i]

else:  # pragma: no cover
    follmer_lattice_numba = None
    euler_chunk_numba = None


def follmer_lattice(logh, y0, hy, s_vals, x0, hx, mx, backend=None):
    backend = backend or ("numba" if USE_NUMBA else "numpy")
    args = (np.ascontiguousarray(logh, dtype=float), float(y0), float(hy), np.ascontiguousarray(s_vals, dtype=float), float(x0), float(hx), int(mx))
    if backend == "numba" and follmer_lattice_numba is not None:
        return follmer_lattice_numba(*args)
    return follmer_lattice_numpy(*args)


def euler_chunk(x, cost, clips, lattices, x0s, hxs, clip, k0, noise, dt, backend=None):
    backend = backend or ("numba" if USE_NUMBA else "numpy")
    fn = euler_chunk_numba if backend == "numba" and euler_chunk_numba is not None else euler_chunk_numpy
    fn(x, cost, clips, lattices, np.asarray(x0s, dtype=float), np.asarray(hxs, dtype=float), float(clip), int(k0), noise, float(dt))
