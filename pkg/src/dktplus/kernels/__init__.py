"""Recurrent hot loops with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set ``DKTPLUS_BACKEND=python``
to force the fallback. ``use_backend`` switches at runtime (benchmarks, tests).
The two backends agree to rounding error, not bitwise.
"""

import os

from . import _py

try:
    from . import _recurrent as _ext
except ImportError:
    _ext = None

_BACKENDS = {"python": _py}
if _ext is not None:
    _BACKENDS["cython"] = _ext


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> None:
    global BACKEND, lstm_forward, lstm_backward, rnn_forward, rnn_backward
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    mod = _BACKENDS[name]
    BACKEND = name
    lstm_forward = mod.lstm_forward
    lstm_backward = mod.lstm_backward
    rnn_forward = mod.rnn_forward
    rnn_backward = mod.rnn_backward


BACKEND = ""
use_backend(os.environ.get("DKTPLUS_BACKEND") or ("cython" if _ext is not None else "python"))
