"""Kernel selection for the LSTM recurrence.

The compiled extension is used when it imports; set ``ANCHORASR_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _lstm_py

python_kernels = _lstm_py
compiled_kernels = None

if os.environ.get("ANCHORASR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _lstm_ext as compiled_kernels  # type: ignore[no-redef]
    except ImportError:  # extension not built
        compiled_kernels = None

_active = compiled_kernels or python_kernels
NAME = "compiled" if compiled_kernels is not None else "python"


def recurrence_forward(xw, U):
    return _active.recurrence_forward(xw, U)


def recurrence_backward(dhs, U, hs, cache):
    return _active.recurrence_backward(dhs, U, hs, cache)


def use(name: str) -> None:
    """Switch kernels at runtime (``"python"`` or ``"compiled"``)."""
    global _active, NAME
    if name == "python":
        _active = python_kernels
    elif name == "compiled":
        if compiled_kernels is None:
            raise RuntimeError("compiled LSTM kernels are not available")
        _active = compiled_kernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    NAME = name
