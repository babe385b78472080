"""Select the compiled kernels or the numpy fallback at import time.

Set ``CONDOT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
kernels = _fallback

if not os.environ.get("CONDOT_PURE_PYTHON"):
    try:
        from . import _kernels as kernels  # noqa: F811

        BACKEND = "compiled"
    except ImportError:
        kernels = _fallback


def use(name):
    """Switch backend at runtime (``"compiled"`` or ``"python"``); used by tests and benchmarks."""
    global kernels, BACKEND
    if name == "python":
        kernels, BACKEND = _fallback, "python"
    elif name == "compiled":
        from . import _kernels

        kernels, BACKEND = _kernels, "compiled"
    else:
        raise ValueError(f"unknown backend {name!r}")
