"""Backend selection for the hot loops.

The compiled extension is used when it imports cleanly; otherwise, or when
``OUVE_PURE_PYTHON=1`` is set, the numpy fallback is used. Both backends
expose the same functions with identical results.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("OUVE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if compiled_backend is not None else "python"

extract_patches = backend.extract_patches
overlap_add = backend.overlap_add
fnv1a64 = backend.fnv1a64
resonator = backend.resonator
