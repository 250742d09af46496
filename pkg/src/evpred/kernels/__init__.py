"""Backend selection for the recurrent-layer kernels.

Set ``EVPRED_BACKEND=numpy`` to force the pure-numpy reference path,
``EVPRED_BACKEND=numba`` to require the jitted path (ImportError if numba
is missing). The default ("auto") uses numba when available.
``benchmarks/bench_kernels.py`` times the two side by side.
"""

import os

from . import numpy_backend

_choice = os.environ.get("EVPRED_BACKEND", "auto").lower()

if _choice == "numpy":
    _impl = numpy_backend
elif _choice in ("auto", "numba"):
    try:
        from . import numba_backend as _impl
    except ImportError:
        if _choice == "numba":
            raise
        _impl = numpy_backend
else:
    raise ValueError(f"unknown EVPRED_BACKEND {_choice!r} (use numpy|numba|auto)")

BACKEND = _impl.NAME

lstm_layer_forward = _impl.lstm_layer_forward
lstm_layer_backward = _impl.lstm_layer_backward
gru_layer_forward = _impl.gru_layer_forward
gru_layer_backward = _impl.gru_layer_backward
