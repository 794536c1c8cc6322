"""Backend selection for the numeric kernels.

Set ``NBBR_DISABLE_JIT=1`` to force the pure-numpy kernels even when
numba is installed.
"""

from __future__ import annotations

import os

_FALSEY = {"", "0", "false", "no", "off"}


def jit_disabled() -> bool:
    return os.environ.get("NBBR_DISABLE_JIT", "").strip().lower() not in _FALSEY


try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


USE_NUMBA = HAS_NUMBA and not jit_disabled()
BACKEND = "numba" if USE_NUMBA else "numpy"
