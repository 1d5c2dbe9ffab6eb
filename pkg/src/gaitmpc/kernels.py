"""Kernel backend selection.

The compiled extension (``gaitmpc._core``, Cython) fuses the per-step work
of the hot loops; ``gaitmpc._core_np`` is the pure-numpy fallback with
identical contracts. The extension is preferred when importable; set
GAITMPC_KERNELS=python to force the fallback (used by the benchmark and by
cross-backend tests).
"""

from __future__ import annotations

import os

from . import _core_np

_FORCED = os.environ.get("GAITMPC_KERNELS", "").strip().lower()

_impl = None
if _FORCED in ("", "cython", "ext"):
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _FORCED in ("cython", "ext"):
            raise
        _impl = None
if _impl is None:
    _impl = _core_np

BACKEND = "cython" if _impl is not _core_np else "python"

forward_batch = _core_np.forward_batch  # thin numpy op, no compiled variant
rollout_returns = _impl.rollout_returns
multistep_loss_grad = _impl.multistep_loss_grad

REWARD_TRACK = _core_np.REWARD_TRACK
REWARD_TURN = _core_np.REWARD_TURN


def backend() -> str:
    return BACKEND
