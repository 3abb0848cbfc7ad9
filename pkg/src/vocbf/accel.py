"""Numba acceleration shim.

Hot kernels (rollouts, QP solves, per-state MLP evaluation) are written once in
numpy style and decorated with `njit`. By default they are JIT-compiled with
numba; setting the environment variable ``VOCBF_DISABLE_NUMBA=1`` (or numba
being unavailable) selects the pure-numpy fallback path, which runs the same
source uncompiled. The flag only picks a compute backend; results agree across
backends to floating-point noise and are byte-identical across reruns within a
backend.
"""

import os

NUMBA_DISABLED = os.environ.get("VOCBF_DISABLE_NUMBA", "").strip() in ("1", "true", "yes")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_ENABLED = (_numba is not None) and not NUMBA_DISABLED


def njit(func):
    """JIT-compile `func` with numba, or return it unchanged in fallback mode."""
    if NUMBA_ENABLED:
        return _numba.njit(cache=True, nogil=True)(func)
    return func


def py_func(func):
    """Return the uncompiled Python implementation of an `njit`-decorated function."""
    return getattr(func, "py_func", func)
