"""Kernel backend selection.

The compiled core is used when it imports; ``GWSPINE_BACKEND=python`` forces
the pure-Python kernels.  Models carrying Python callables always run on the
pure-Python kernels.
"""

from __future__ import annotations

import os

from . import _pycore

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

_REQUESTED = os.environ.get("GWSPINE_BACKEND", "auto").strip().lower()

if _REQUESTED == "python" or _compiled is None:
    NAME = "python"
else:
    NAME = "compiled"

CoreErrors = (_pycore.CoreError,) + ((_compiled.CoreError,) if _compiled is not None else ())


def available() -> list[str]:
    return ["python"] + (["compiled"] if _compiled is not None else [])


def kernels(enc=None, backend: str | None = None):
    """Module providing ``simulate_trees``/``simulate_spines``/``branch_children``."""
    name = backend or NAME
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled core is not built")
        if enc is None or enc.compiled_ok:
            return _compiled
        return _pycore
    if name != "python":
        raise ValueError(f"unknown backend {name!r}")
    return _pycore
