"""Hot assembly kernels with a compiled core and a NumPy fallback.

The Cython extension is preferred; set UNFITFEM_PURE_PYTHON=1 to force the
NumPy implementation (used by the benchmark and the parity tests).
"""

import os

from . import fallback

if os.environ.get("UNFITFEM_PURE_PYTHON", "") not in ("", "0"):
    _impl = fallback
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = fallback

eval_basis = _impl.eval_basis
weighted_gram = _impl.weighted_gram
weighted_gram_pair = _impl.weighted_gram_pair
weighted_vec = _impl.weighted_vec


def backend_name():
    """Name of the active kernel backend ('cython' or 'numpy')."""
    return _impl.BACKEND
