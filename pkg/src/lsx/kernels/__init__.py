"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when it imported cleanly; setting
LSX_PURE_PYTHON=1 forces the fallback (used by the benchmark and the
backend-parity tests).  Both expose the same four functions with
bit-identical outputs: fps, ball_query, nn_sqdist, auction.
"""

import os

from . import _fallback

if os.environ.get("LSX_PURE_PYTHON", "0") not in ("", "0"):
    _impl = _fallback
    COMPILED = False
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        COMPILED = True
    except ImportError:
        _impl = _fallback
        COMPILED = False

AssignmentError = _fallback.AssignmentError

fps = _impl.fps
ball_query = _impl.ball_query
nn_sqdist = _impl.nn_sqdist
auction = _impl.auction


def backend_name() -> str:
    return "compiled" if COMPILED else "fallback"
