"""Select the clustering kernels at import time.

The compiled extension is preferred. Set ``TASSEL_KERNEL=python`` to force
the numpy fallback (benchmarks and equivalence tests do this). Both
backends return identical bits.
"""

import os

from . import _lloyd_py

python_lloyd = _lloyd_py.lloyd

try:
    from . import _lloyd as _compiled
except ImportError:  # extension not built
    _compiled = None

compiled_lloyd = None if _compiled is None else _compiled.lloyd

if _compiled is not None and os.environ.get("TASSEL_KERNEL", "").lower() != "python":
    BACKEND = "compiled"
    _active = _compiled
else:
    BACKEND = "python"
    _active = _lloyd_py

lloyd = _active.lloyd
sq_distances = _active.sq_distances
transfer_refine = _active.transfer_refine
