"""Kernel backend selection.

The compiled core (``_native``, Cython + BLAS) is used when it imported
successfully; otherwise the pure-numpy reference takes over. Both expose
the same three functions and agree to float64 round-off. Selection can
be forced with ARTERYLABEL_BACKEND=native|numpy.
"""

import os

from . import numpy_ref

try:
    from . import _native

    HAVE_NATIVE = True
except ImportError:
    _native = None
    HAVE_NATIVE = False

_forced = os.environ.get("ARTERYLABEL_BACKEND", "").strip().lower()
if _forced == "numpy":
    active = numpy_ref
elif _forced == "native":
    if not HAVE_NATIVE:
        raise ImportError(
            "ARTERYLABEL_BACKEND=native but the compiled kernel module is not built"
        )
    active = _native
elif _forced:
    raise ImportError(f"unknown ARTERYLABEL_BACKEND value {_forced!r}")
else:
    active = _native if HAVE_NATIVE else numpy_ref

BACKEND_NAME = active.NAME


def get_backend(name: str | None = None):
    """Backend module by name ('native' or 'numpy'); default is the active one."""
    if name is None:
        return active
    if name == "numpy":
        return numpy_ref
    if name == "native":
        if not HAVE_NATIVE:
            raise ImportError("compiled kernel module is not built")
        return _native
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    return ["native", "numpy"] if HAVE_NATIVE else ["numpy"]
