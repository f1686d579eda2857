"""Hot kernels with a compiled core and a numpy fallback.

The backend is picked once at import. Set ``UNCSEG_KERNELS=python`` to force
the fallback, or ``UNCSEG_KERNELS=compiled`` to fail loudly when the
extension is missing.
"""
import os

from . import _pykernels

_choice = os.environ.get("UNCSEG_KERNELS", "auto").lower()

try:
    from . import _ckernels
except ImportError:
    if _choice == "compiled":
        raise
    _ckernels = None

if _ckernels is not None and _choice != "python":
    BACKEND = "compiled"
    _impl = _ckernels
else:
    BACKEND = "python"
    _impl = _pykernels

im2col3 = _impl.im2col3
col2im3 = _impl.col2im3
box_sum3 = _impl.box_sum3


def available_backends():
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["compiled"] = _ckernels
    return backends
