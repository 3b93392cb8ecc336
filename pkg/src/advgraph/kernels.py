"""Kernel dispatch: the compiled extension when importable, else pure Python.

Set ``ADVGRAPH_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

COMPILED = False
if os.environ.get("ADVGRAPH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl
        COMPILED = True
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

BACKEND = "compiled" if COMPILED else "python"

node2vec_walks = _impl.node2vec_walks
sgns_sweep = _impl.sgns_sweep
