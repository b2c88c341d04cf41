"""Selects the compiled kernels when available, the pure-Python ones otherwise.

Set ``SVMPOOL_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

NAME = "python"
kernels = _kernels_py

if os.environ.get("SVMPOOL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        NAME = "cython"

sqhinge_line_search = kernels.sqhinge_line_search
gd_sqhinge = kernels.gd_sqhinge
