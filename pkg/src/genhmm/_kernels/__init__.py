"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the
pure numpy fallback is selected.  Set ``GENHMM_KERNELS=python`` to force
the fallback (e.g. for benchmarking one against the other).
"""

import os

from . import _ref

if os.environ.get("GENHMM_KERNELS", "").lower() == "python":
    _impl = _ref
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _ref

forward_log = _impl.forward_log
backward_log = _impl.backward_log


def backend():
    """Name of the active kernel backend: ``compiled`` or ``python``."""
    return "python" if _impl is _ref else "compiled"
