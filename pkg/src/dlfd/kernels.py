"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback is. Setting ``DLFD_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

try:
    if os.environ.get("DLFD_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_active = BACKENDS[BACKEND]

covariance_update = _active.covariance_update
spring_substep = _active.spring_substep


def get_backend(name):
    """Return the kernel module for ``name`` ('cython' or 'python')."""
    try:
        return BACKENDS[name]
    except KeyError:
        raise ImportError(f"kernel backend {name!r} is not available") from None
