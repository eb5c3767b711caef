"""Selects the compute backend: compiled Cython core or pure-NumPy fallback.

The compiled extension ``lcskit._core`` is optional. Its functions mirror
``lcskit._kernels_py`` exactly; at import we pick the compiled one when it is
available, unless the environment variable ``LCSKIT_BACKEND`` forces a choice
(``compiled``, ``python`` or ``auto``).
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _core
except ImportError:
    _core = None

# re-export the shared constants from the reference module
CODE_ZERO = _kernels_py.CODE_ZERO
CODE_LINEAR = _kernels_py.CODE_LINEAR
CODE_DUFFING = _kernels_py.CODE_DUFFING
CODE_ABC = _kernels_py.CODE_ABC
CODE_DOUBLE_GYRE = _kernels_py.CODE_DOUBLE_GYRE
CODE_GRIDDED = _kernels_py.CODE_GRIDDED
CODE_CALLABLE = _kernels_py.CODE_CALLABLE
METHOD_RK4_FIXED = _kernels_py.METHOD_RK4_FIXED
METHOD_RK45 = _kernels_py.METHOD_RK45
STATUS_OK = _kernels_py.STATUS_OK
STATUS_ESCAPED = _kernels_py.STATUS_ESCAPED
STATUS_DIVERGED = _kernels_py.STATUS_DIVERGED
STOP_BOUNDARY = _kernels_py.STOP_BOUNDARY
STOP_SINGULARITY = _kernels_py.STOP_SINGULARITY
STOP_DEGENERATE = _kernels_py.STOP_DEGENERATE
STOP_MAX_LENGTH = _kernels_py.STOP_MAX_LENGTH
STOP_CLOSED = _kernels_py.STOP_CLOSED
STOP_NONE = _kernels_py.STOP_NONE
FETCH_VECTOR = _kernels_py.FETCH_VECTOR
FETCH_TENSOR = _kernels_py.FETCH_TENSOR

make_grid_pack = _kernels_py.make_grid_pack
eval_field = _kernels_py.eval_field  # field evaluation is always the NumPy path


def available_backends():
    names = ["python"]
    if _core is not None:
        names.insert(0, "compiled")
    return names


def get_backend(name: str = "auto"):
    """Return the kernel module for ``name`` (auto/compiled/python)."""
    if name in ("auto", None, ""):
        return _core if _core is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _core is None:
            raise ImportError("lcskit was installed without the compiled core")
        return _core
    raise ValueError(f"unknown backend {name!r}")


_active = get_backend(os.environ.get("LCSKIT_BACKEND", "auto"))


def active_backend():
    return _active


def active_backend_name():
    return "compiled" if getattr(_active, "IS_COMPILED", False) else "python"


def set_backend(name: str):
    """Switch the process-wide backend (mainly for tests and benchmarks)."""
    global _active
    _active = get_backend(name)
    return _active


def integrate_batch(pack, *args, **kwargs):
    # callable fields can only be evaluated from Python
    mod = _kernels_py if pack[0] == CODE_CALLABLE else _active
    return mod.integrate_batch(pack, *args, **kwargs)


def trace_lines(*args, **kwargs):
    return _active.trace_lines(*args, **kwargs)
