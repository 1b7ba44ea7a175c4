"""Select the compiled kernels when available, else the numpy fallback.

Set ``SOCIAL_SAMPLER_PURE=1`` to force the fallback (used by the benchmark
and the cross-backend tests).
"""

from __future__ import annotations

import os

from . import _fallback

try:
    if os.environ.get("SOCIAL_SAMPLER_PURE", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _core
except ImportError:
    _core = None

BACKEND = "compiled" if _core is not None else "python"
_impl = _core if _core is not None else _fallback

simulate_counts = _impl.simulate_counts
social_sampling_loglik = _impl.social_sampling_loglik
