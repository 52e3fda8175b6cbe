"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist: the compiled
Cython module (`spikefed._kernels_cy`, BLAS-backed) and the pure-numpy
fallback (`spikefed._kernels_np`). The compiled one is picked at import when
available; set SPIKEFED_BACKEND=python|cython to force a choice ("auto" is
the default). Results agree across backends to float64 contraction-order
noise (~1e-13 relative); bitwise reproducibility is only promised within a
single backend, so runs record which one they used.
"""

import os

from . import _kernels_np


def load(name):
    """Return the kernel module for an explicit backend name."""
    if name == "python":
        return _kernels_np
    if name == "cython":
        from . import _kernels_cy

        return _kernels_cy
    raise ValueError(f"unknown backend {name!r} (expected 'python' or 'cython')")


def available():
    """Names of importable backends, fallback first."""
    names = ["python"]
    try:
        load("cython")
    except ImportError:
        pass
    else:
        names.append("cython")
    return names


def select(requested="auto"):
    if requested == "auto":
        try:
            return load("cython")
        except ImportError:
            return _kernels_np
    return load(requested)


def use(requested="auto"):
    """Rebind the module-level kernel aliases; returns the active name.

    Callers reach kernels as `backend.<fn>` attribute lookups, so a rebind
    (from config or tests) takes effect everywhere at once.
    """
    global _impl, name
    global conv1d_forward, conv1d_grad_kernel, conv1d_grad_input
    global dense_forward, dense_grad_weight, dense_grad_input
    global lif_forward, lif_backward
    _impl = select(requested)
    name = _impl.NAME
    conv1d_forward = _impl.conv1d_forward
    conv1d_grad_kernel = _impl.conv1d_grad_kernel
    conv1d_grad_input = _impl.conv1d_grad_input
    dense_forward = _impl.dense_forward
    dense_grad_weight = _impl.dense_grad_weight
    dense_grad_input = _impl.dense_grad_input
    lif_forward = _impl.lif_forward
    lif_backward = _impl.lif_backward
    return name


use(os.environ.get("SPIKEFED_BACKEND", "auto").strip().lower())
