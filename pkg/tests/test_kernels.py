import os
import subprocess
import sys

import numpy as np
import pytest

from mfcert import _kernels, grid1d
from mfcert.control import _log_h

pytestmark = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


class TestAgreement:
    def test_lattice(self):
        q = grid1d.gaussian(0.3, 0.5, grid1d.Grid.centered(0.0, 12.0, 513))
        logh = _log_h(q, 1.0, q.x, q.logq)
        s = 1.0 - 0.01 * np.arange(100)
        args = (logh, q.grid.lo, q.grid.h, s, -8.0, 16.0 / 400, 401)
        a = _kernels.follmer_lattice(*args, backend="numba")
        b = _kernels.follmer_lattice(*args, backend="numpy")
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)

    def test_lattice_far_tails(self):
        # x far from the mass of h: weights are dominated by one edge
        q = grid1d.gaussian(4.0, 0.05, grid1d.Grid.centered(4.0, 2.0, 257))
        logh = _log_h(q, 1.0, q.x, q.logq)
        s = np.array([1.0, 0.5, 0.01])
        args = (logh, q.grid.lo, q.grid.h, s, -20.0, 0.5, 81)
        np.testing.assert_allclose(_kernels.follmer_lattice(*args, backend="numba"),
                                   _kernels.follmer_lattice(*args, backend="numpy"), rtol=1e-9)

    def test_euler_identical(self):
        rng = np.random.default_rng(0)
        steps, paths, n, mx = 20, 200, 2, 101
        lat = rng.standard_normal((n, steps, mx))
        noise = rng.standard_normal((steps, paths, n)) * 0.1
        outs = []
        for backend in ("numba", "numpy"):
            x, cost, clips = np.zeros((paths, n)), np.zeros(paths), np.zeros(paths, dtype=np.int64)
            _kernels.euler_chunk(x, cost, clips, lat, np.full(n, -5.0), np.full(n, 0.1), 1.5, 0, noise, 0.01, backend=backend)
            outs.append((x, cost, clips))
        for u, v in zip(*outs):
            np.testing.assert_array_equal(u, v)


def test_env_flag_selects_numpy():
    code = "from mfcert import _kernels; print(_kernels.USE_NUMBA)"
    env = dict(os.environ, MFCERT_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
