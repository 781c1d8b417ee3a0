"""Backend switch for the hot kernels.

Numba is used when importable unless ``TEXSEG_DISABLE_NUMBA`` is set to a
truthy value, in which case every dispatcher resolves to the vectorised
numpy implementation.
"""
import os

_FLAG = os.environ.get("TEXSEG_DISABLE_NUMBA", "").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a pass-through decorator.

    The numba kernels are still compiled (lazily, on first call) when only the
    numpy backend is selected, so tests can compare both paths in one process.
    """
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if _numba is None:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)
