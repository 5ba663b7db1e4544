"""Optional numba acceleration.

Set ``MFCERT_NUMBA=0`` in the environment to force the pure-numpy code paths.
The flag is read once at import time.
"""
import os
import warnings

# numba probes threading layers and complains about an old TBB; the fallback layer is fine
warnings.filterwarnings("ignore", message="The TBB threading layer")

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MFCERT_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


def optional_njit(*args, **kwargs):
    def decorator(func):
        if HAVE_NUMBA:
            return njit(*args, **kwargs)(func)
        return func

    return decorator


def set_threads(n):
    """Cap numba's worker pool; a no-op without numba."""
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
