"""Hot kernels, compiled when available.

The Cython extension ``_ckernels`` is preferred. If it was not built, or the
environment variable ``DCTS_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementations in ``_purepy`` are used instead.
"""

import os

from . import _purepy

_force_python = os.environ.get("DCTS_PURE_PYTHON", "") not in ("", "0")

if _force_python:
    _impl = _purepy
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _purepy

BACKEND = _impl.BACKEND

prior_params = _impl.prior_params
posterior_params = _impl.posterior_params
signatures = _impl.signatures
hamming = _impl.hamming


def compiled_available():
    """Whether the compiled extension can be imported at all."""
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True


__all__ = [
    "BACKEND",
    "compiled_available",
    "hamming",
    "posterior_params",
    "prior_params",
    "signatures",
]
