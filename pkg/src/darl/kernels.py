"""Backend selection for the hot loops.

The compiled extension is used when it was built; set ``DARL_PURE_PYTHON=1``
to force the numpy fallback (the two agree bitwise).
"""
import os

BACKEND = "python"

if not os.environ.get("DARL_PURE_PYTHON"):
    try:
        from darl._kernels import (  # noqa: F401
            ewma,
            gae,
            max_drawdown,
            simplex_projection,
            wilder_smooth,
        )

        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    from darl._pykernels import (  # noqa: F401
        ewma,
        gae,
        max_drawdown,
        simplex_projection,
        wilder_smooth,
    )

__all__ = ["BACKEND", "ewma", "gae", "max_drawdown", "simplex_projection", "wilder_smooth"]
