"""Backend selection for the likelihood kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``FUELMIX_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("FUELMIX_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

log_choose = _impl.log_choose
bb_mix_logpmf = _impl.bb_mix_logpmf
bb_mix_delta = _impl.bb_mix_delta
mix_relative = _impl.mix_relative

__all__ = ["BACKEND", "log_choose", "bb_mix_logpmf", "bb_mix_delta", "mix_relative"]
