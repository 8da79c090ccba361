"""Backend selection for the compiled kernels.

Set ``TBCAL_DISABLE_NUMBA=1`` to force the pure-numpy implementations, e.g. to
debug a kernel or to run on a platform without numba wheels.
"""

import os

_FLAG = os.environ.get("TBCAL_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")

BACKEND = "numba" if USE_NUMBA else "numpy"
