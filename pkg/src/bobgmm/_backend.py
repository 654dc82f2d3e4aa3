"""Selects the EM inner-loop implementation at import time.

The compiled extension (`bobgmm._em_cy`) is preferred; the numpy module is
a drop-in fallback. Set BOBGMM_BACKEND=python or BOBGMM_BACKEND=cython to
force a choice (forcing cython raises if the extension is missing).
"""

import os

from . import _em_py

_requested = os.environ.get("BOBGMM_BACKEND", "").strip().lower()

if _requested == "python":
    run_em = _em_py.run_em
    BACKEND = "python"
else:
    try:
        from . import _em_cy

        run_em = _em_cy.run_em
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "BOBGMM_BACKEND=cython requested but the compiled extension "
                "is not available; reinstall with a working C toolchain"
            )
        run_em = _em_py.run_em
        BACKEND = "python"
