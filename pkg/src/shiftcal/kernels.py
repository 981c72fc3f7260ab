"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is imported.  Setting ``SHIFTCAL_PURE_PYTHON=1`` forces the
fallback, which is how the benchmark and the parity tests reach it.
"""

import os

from . import _kernels_py

if os.environ.get("SHIFTCAL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

SOFTMAX = 0
SIGMOID = 1

temperature_epoch = _impl.temperature_epoch
temperature_loss = _impl.temperature_loss
bin_sums = _impl.bin_sums
