"""Kernel backend selection.

The hot numeric kernels exist twice: a Cython extension (``cyker``) and a
pure-Python fallback (``pyker``) with identical semantics and bit-identical
results. The compiled backend is picked when importable; set
``MTPROMPT_KERNELS`` to ``py`` or ``c`` to force one (``c`` raises if the
extension is missing). ``BACKEND`` names the active choice.
"""

import os

_choice = os.environ.get("MTPROMPT_KERNELS", "auto").lower()

if _choice in ("auto", "c"):
    try:
        from . import cyker as _impl

        BACKEND = "c"
    except ImportError:
        if _choice == "c":
            raise
        from . import pyker as _impl

        BACKEND = "py"
elif _choice == "py":
    from . import pyker as _impl

    BACKEND = "py"
else:
    raise RuntimeError(f"MTPROMPT_KERNELS must be auto, c or py, got {_choice!r}")

matmul_nn = _impl.matmul_nn
matmul_tn = _impl.matmul_tn
matmul_nt = _impl.matmul_nt
add = _impl.add
sub = _impl.sub
mul = _impl.mul
scale = _impl.scale
axpy = _impl.axpy
dot = _impl.dot
softmax_rows = _impl.softmax_rows
tanh_vec = _impl.tanh_vec
nonfinite_count = _impl.nonfinite_count
splitmix64 = _impl.splitmix64
fill_uniform = _impl.fill_uniform
fill_normal = _impl.fill_normal
