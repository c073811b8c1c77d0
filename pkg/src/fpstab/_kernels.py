"""Select the compiled kernels when available, else the numpy fallback.

Set ``FPSTAB_PURE_PYTHON=1`` to force the fallback.
"""

import os

BACKEND = "python"
if os.environ.get("FPSTAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._core import fpe_step_1d, fpe_step_2d, maximal_2d  # noqa: F401
        BACKEND = "compiled"
    except ImportError:
        pass
if BACKEND == "python":
    from ._fallback import fpe_step_1d, fpe_step_2d, maximal_2d  # noqa: F401
