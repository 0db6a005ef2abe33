"""Backend selection for the hot kernels.

The compiled module is used when it imports; ``OPINION_NASH_PURE=1`` forces
the numpy fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("OPINION_NASH_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback

cubic_roots_batch = _impl.cubic_roots_batch
select_control = _impl.select_control
closed_loop_em = _impl.closed_loop_em
control_coefficients = _fallback.control_coefficients


def backends():
    """Every importable implementation, keyed by name (for parity tests and benchmarks)."""
    out = {"python": _fallback}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
