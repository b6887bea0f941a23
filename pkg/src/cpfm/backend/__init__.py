"""Kernel backend selection.

The compiled Cython extension is preferred when importable; the numpy
module is the fallback. ``CPFM_BACKEND=python`` or ``CPFM_BACKEND=compiled``
forces a choice (the latter raises if the extension was never built).
Callers reach kernels through the module-level ``active`` attribute so
tests and benchmarks can swap backends in-process via :func:`use`.
"""

import os

from . import pykernels

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

HAVE_COMPILED = _ckernels is not None

_BACKENDS = {"python": pykernels}
if HAVE_COMPILED:
    _BACKENDS["compiled"] = _ckernels

active = pykernels


def use(name: str):
    """Select the kernel backend by name ('python' or 'compiled')."""
    global active
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown backend {name!r}; built backends: {sorted(_BACKENDS)}"
        )
    active = _BACKENDS[name]
    return active


def _select_default():
    forced = os.environ.get("CPFM_BACKEND", "").strip().lower()
    if forced:
        use(forced)
    elif HAVE_COMPILED:
        use("compiled")
    else:
        use("python")


_select_default()
