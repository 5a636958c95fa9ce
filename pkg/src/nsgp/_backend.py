"""Selects the batched kernel implementation at import time.

The compiled extension is used when it is importable.  Set
``NSGP_BACKEND=python`` to force the NumPy kernels, or ``NSGP_BACKEND=compiled``
to make a missing extension an import error.
"""

import logging
import os

logger = logging.getLogger(__name__)

_choice = os.environ.get("NSGP_BACKEND", "").strip().lower()
if _choice not in ("", "python", "compiled"):
    raise ImportError(f"NSGP_BACKEND must be 'python' or 'compiled', got {_choice!r}")

if _choice == "python":
    from . import _pykernels as ops

    NAME = "python"
else:
    try:
        from . import _ckernels as ops

        NAME = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        logger.info("compiled kernels unavailable; using NumPy fallback")
        from . import _pykernels as ops

        NAME = "python"


def available():
    """Names of all importable backends, compiled first."""
    names = []
    try:
        from . import _ckernels  # noqa: F401

        names.append("compiled")
    except ImportError:
        pass
    names.append("python")
    return names


def get(name: str):
    if name == "compiled":
        from . import _ckernels

        return _ckernels
    if name == "python":
        from . import _pykernels

        return _pykernels
    raise ValueError(f"unknown backend {name!r}")
