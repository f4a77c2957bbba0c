"""Selects the tape engine at import time.

DIFFDRIVE_BACKEND=auto|compiled|python (default auto: compiled if the
extension built, otherwise the pure-Python fallback with a warning).
Both engines expose the same surface; see _tapecore.pyx / _tape_fallback.py.
"""

from __future__ import annotations

import os
import warnings

_choice = os.environ.get("DIFFDRIVE_BACKEND", "auto").lower()

if _choice not in ("auto", "compiled", "python"):
    raise RuntimeError(
        "DIFFDRIVE_BACKEND must be auto, compiled or python (got %r)"
        % _choice)

if _choice == "python":
    from diffdrive import _tape_fallback as core
else:
    try:
        from diffdrive import _tapecore as core  # type: ignore
    except ImportError:
        if _choice == "compiled":
            raise
        warnings.warn(
            "compiled tape core unavailable; using the pure-Python engine "
            "(correct but much slower)", RuntimeWarning, stacklevel=2)
        from diffdrive import _tape_fallback as core

BACKEND = core.BACKEND


def get_core(name=None):
    """Return a core module by name ('compiled'/'python'), default active."""
    if name is None:
        return core
    if name == "python":
        from diffdrive import _tape_fallback
        return _tape_fallback
    if name == "compiled":
        from diffdrive import _tapecore  # raises if not built
        return _tapecore
    raise ValueError("unknown backend %r" % name)
