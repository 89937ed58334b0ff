"""Kernel backend selection.

Two interchangeable implementations of the graph-convolution primitives:
a compiled extension (`pbnas._gcn_cy`, flat C loops) and a pure-numpy
fallback (`pbnas._gcn_np`, BLAS matmuls). The compiled loops win for the
small layer widths of desk-scale searches (up to ~10x on the training
backward pass), while BLAS wins for wide layers (e.g. width 256), so in
auto mode dispatch is by weight size. `benchmarks/bench_kernels.py`
measures the crossover on the host machine.

PBNAS_KERNELS=auto|cython|python forces a mode; `cython` fails fast when
the extension was not built.
"""

import os

from . import _gcn_np

_MODE = os.environ.get("PBNAS_KERNELS", "auto").lower()
if _MODE not in ("auto", "cython", "python"):
    raise RuntimeError(
        f"PBNAS_KERNELS must be auto, cython or python, got {_MODE!r}"
    )

_cy = None
if _MODE in ("auto", "cython"):
    try:
        from . import _gcn_cy as _cy
    except ImportError:
        if _MODE == "cython":
            raise RuntimeError(
                "PBNAS_KERNELS=cython but the compiled extension is not "
                "available; build it with `pip install -e .`"
            )

# widths up to this many weight entries run in the compiled loops
_COMPILED_LIMIT = 64 * 64


def _backend_for(w):
    if _cy is None or _MODE == "python":
        return _gcn_np
    if _MODE == "cython":
        return _cy
    return _cy if w.shape[0] * w.shape[1] <= _COMPILED_LIMIT else _gcn_np


def conv_forward(ahat, h, w):
    """relu((ahat @ h) @ w) for a batch: (B,L,L) x (B,L,din) x (din,dout)."""
    return _backend_for(w).conv_forward(ahat, h, w)


def conv_backward(ahat, h_prev, h_post, w, g_post, need_g_ahat=False):
    """Backward pass of conv_forward; gradients summed over the batch."""
    return _backend_for(w).conv_backward(ahat, h_prev, h_post, w, g_post,
                                         need_g_ahat)


def backend_name() -> str:
    """Active mode: 'python', 'cython', or 'auto' (size-based dispatch)."""
    if _cy is None:
        return "python"
    return _MODE


def get_backend(name: str):
    """Fetch a specific backend module (for parity tests and benchmarks)."""
    if name == "python":
        return _gcn_np
    if name == "cython":
        from . import _gcn_cy

        return _gcn_cy
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    names = ["python"]
    if _cy is not None:
        names.append("cython")
    else:
        try:
            from . import _gcn_cy  # noqa: F401

            names.append("cython")
        except ImportError:
            pass
    return names
