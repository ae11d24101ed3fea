"""Compiled hot loops with import-time fallback.

Each kernel module here has a pure-Python twin elsewhere in the package.
``pick`` returns the compiled module, or ``None`` when it is unavailable,
disabled with ``BIRGEN_PURE_PYTHON=1``, or the caller asks for ``"python"``.
"""

from __future__ import annotations

import importlib
import logging
import os

log = logging.getLogger(__name__)

_NAMES = ("qem", "trace")
_compiled = {}
for _name in _NAMES:
    try:
        _compiled[_name] = importlib.import_module(f"{__name__}.{_name}")
    except ImportError as exc:  # extension not built
        log.debug("compiled kernel %s unavailable: %s", _name, exc)
        _compiled[_name] = None


def available(name: str) -> bool:
    return _compiled.get(name) is not None


def pick(name: str, backend: str | None = None):
    if backend not in (None, "compiled", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "python":
        return None
    mod = _compiled.get(name)
    if backend == "compiled" and mod is None:
        raise ImportError(f"compiled kernel {name!r} is not built")
    if backend is None and os.environ.get("BIRGEN_PURE_PYTHON") == "1":
        return None
    return mod
