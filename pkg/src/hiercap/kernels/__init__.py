"""Hot-path kernels for the recurrent decoder.

Two interchangeable lanes provide the fused LSTM cell: a compiled Cython
extension (``_core``) and a pure-numpy fallback (``_numpy``).  The lane is
chosen once at import time; set ``HIERCAP_PURE=1`` to force the fallback,
e.g. when comparing lanes with ``benchmarks/bench_kernels.py``.

Gate layout in the fused bias/weight blocks is [input, forget, output,
candidate], each of width H.
"""

import os

from . import _numpy as _fallback

_want_compiled = os.environ.get("HIERCAP_PURE", "0") not in ("1", "true", "yes")

if _want_compiled:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"
else:
    _impl = _fallback
    BACKEND = "python"

lstm_cell_forward = _impl.lstm_cell_forward
lstm_cell_backward = _impl.lstm_cell_backward
adam_update = _impl.adam_update

__all__ = ["lstm_cell_forward", "lstm_cell_backward", "adam_update", "BACKEND"]
