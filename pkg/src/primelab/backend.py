"""Select the compiled kernels when available, else the NumPy fallback.

Set ``PRIMELAB_PURE=1`` to force the fallback (used by the benchmark and by
the backend-parity tests).
"""
import os

from . import _pure

if os.environ.get("PRIMELAB_PURE", "") not in ("", "0"):
    _impl = _pure
    NAME = "pure"
else:
    try:
        from . import _native as _impl
        NAME = "native"
    except ImportError:
        _impl = _pure
        NAME = "pure"

fisher_yates = _impl.fisher_yates
base_digits = _impl.base_digits
count_ids = _impl.count_ids
subset_entropies = _impl.subset_entropies
