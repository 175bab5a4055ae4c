"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly. Setting
``CLUTTERGEN_PURE_PYTHON=1`` forces the numpy fallback.
"""
import contextlib
import os

from . import _pykernels

if os.environ.get("CLUTTERGEN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "compiled" if _impl is not _pykernels else "python"

raycast = _impl.raycast
obb_tri_hits = _impl.obb_tri_hits
step = _impl.step
collide = _pykernels.collide


def backend_module(name):
    """Return the kernel module for ``"python"`` or ``"compiled"``."""
    if name == "python":
        return _pykernels
    from . import _ckernels
    return _ckernels


@contextlib.contextmanager
def use_backend(name):
    """Temporarily route every kernel call through backend ``name``."""
    global BACKEND, raycast, obb_tri_hits, step
    saved = BACKEND, raycast, obb_tri_hits, step
    mod = backend_module(name)
    BACKEND, raycast, obb_tri_hits, step = name, mod.raycast, mod.obb_tri_hits, mod.step
    try:
        yield mod
    finally:
        BACKEND, raycast, obb_tri_hits, step = saved
