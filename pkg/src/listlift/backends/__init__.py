"""Kernel backend selection.

The hot kernels (encoder forward/backward, pairwise loss) have a compiled
Cython implementation and a numpy fallback with identical signatures.  The
compiled one is preferred when importable.  Set ``LISTLIFT_BACKEND=python``
or ``LISTLIFT_BACKEND=compiled`` to force a choice; forcing the compiled
backend when it is not built raises at import.
"""
import os

from . import python as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

_requested = os.environ.get("LISTLIFT_BACKEND", "").strip().lower()
if _requested in ("python", "numpy", "py"):
    active = python_backend
elif _requested in ("compiled", "cython", "c"):
    if compiled_backend is None:
        raise ImportError(
            "LISTLIFT_BACKEND=compiled requested but listlift.backends._ckernels is not built"
        )
    active = compiled_backend
elif _requested:
    raise ImportError(f"unknown LISTLIFT_BACKEND value: {_requested!r}")
else:
    active = compiled_backend if compiled_backend is not None else python_backend

BACKEND_NAME = "compiled" if active is compiled_backend else "python"

encoder_forward = active.encoder_forward
encoder_backward = active.encoder_backward
pair_loss_grad = active.pair_loss_grad

LN_EPS = python_backend.LN_EPS
