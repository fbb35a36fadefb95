"""Sparse product kernels.

The compiled extension ``_ckernels`` is used when it was built; otherwise
the numpy implementation in ``_pykernels`` is selected.  Setting
``GSV_INTERP_PURE=1`` forces the numpy path.
"""

import os

from . import _pykernels

BACKEND = "python"
csr_matvec = _pykernels.csr_matvec
csr_rmatvec = _pykernels.csr_rmatvec

if os.environ.get("GSV_INTERP_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        _ckernels = None
    else:
        BACKEND = "cython"
        csr_matvec = _ckernels.csr_matvec
        csr_rmatvec = _ckernels.csr_rmatvec
else:
    _ckernels = None


def available_backends():
    """Names of kernel backends importable in this environment."""
    names = ["python"]
    if _ckernels is not None:
        names.append("cython")
    return names


def get_backend(name):
    """Return ``(csr_matvec, csr_rmatvec)`` for a named backend."""
    if name == "python":
        return _pykernels.csr_matvec, _pykernels.csr_rmatvec
    if name == "cython":
        from . import _ckernels as ck
        return ck.csr_matvec, ck.csr_rmatvec
    raise ValueError(f"unknown kernel backend {name!r}")
