"""Kernel backend selection.

Imports the compiled extension when available and falls back to the
pure-Python twin otherwise.  ``RANOPS_KERNELS`` overrides the choice:
``c`` demands the compiled backend (ImportError if missing), ``py``
forces the pure one, anything else (or unset) means auto.  Both backends
produce bit-identical results; see ``benchmarks/bench_kernels.py`` for
the speed comparison.
"""

import os

from . import pure

_requested = os.environ.get("RANOPS_KERNELS", "auto").lower()

if _requested == "py":
    _impl = pure
    BACKEND = "pure"
elif _requested == "c":
    from . import _core as _impl  # noqa: F401  (raises if not built)

    BACKEND = "compiled"
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = pure
        BACKEND = "pure"
    else:
        BACKEND = "compiled"

tokenize = _impl.tokenize
embed_text = _impl.embed_text
dot_scores = _impl.dot_scores
waterfill = _impl.waterfill

__all__ = ["BACKEND", "tokenize", "embed_text", "dot_scores", "waterfill"]
