"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the
pure-Python module takes over.  Setting ``SID_PURE_PYTHON=1`` forces the
fallback, which the benchmark and the backend-agreement tests rely on.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
bisimilar = _pykernels.bisimilar
wp_search = _pykernels.wp_search

if os.environ.get("SID_PURE_PYTHON") != "1":
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        bisimilar = _ckernels.bisimilar
        wp_search = _ckernels.wp_search
