"""Kernel backend selection: compiled extension with NumPy fallback.

The compiled Cython kernels are used when the extension built successfully;
otherwise the pure-NumPy implementation takes over transparently.  Set
DAMPSIM_PURE_PYTHON=1 to force the fallback (used by the benchmark and for
debugging).
"""

import os

if os.environ.get("DAMPSIM_PURE_PYTHON"):
    from . import _kernels_np as kernels
    HAVE_COMPILED = False
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
        HAVE_COMPILED = True
    except ImportError:
        from . import _kernels_np as kernels
        HAVE_COMPILED = False

damp_run_iid = kernels.damp_run_iid
phase_a_iid = kernels.phase_a_iid
phase_b_iid = kernels.phase_b_iid
theta_from_loglr = kernels.theta_from_loglr
se_accumulate = kernels.se_accumulate
LOGLR_CLAMP = kernels.LOGLR_CLAMP


def backend_name():
    return kernels.BACKEND_NAME
