"""Backend selection for the time-stepping kernel.

The compiled extension is used when it was built; otherwise the pure-Python
version.  ``NODALSTEER_BACKEND=python`` forces the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
cn_advance = _pykernels.cn_advance

if os.environ.get("NODALSTEER_BACKEND", "").lower() != "python":
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        cn_advance = _kernels.cn_advance
