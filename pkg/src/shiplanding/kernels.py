"""Kernel selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is used. Set ``SHIPLANDING_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SHIPLANDING_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

ratio_test = _impl.ratio_test
most_violated = _impl.most_violated
plant_rk4 = _impl.plant_rk4


def backends():
    """Return ``{name: module}`` for every kernel backend available here."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled
    except ImportError:
        return out
    out["cython"] = _compiled
    return out
