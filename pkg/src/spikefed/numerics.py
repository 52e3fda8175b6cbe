"""Validated dense-tensor operations for small convolutional networks.

Everything is float64 and row-major; the heavy lifting is delegated to the
active kernel backend (`spikefed.backend`). Each backward here is the exact
gradient of its forward, which the test suite pins against independent
oracles (triple-loop matmul, direct convolution sums, central finite
differences).

These wrappers accept single samples ([C,L] / [N]) or batches ([B,C,L] /
[B,N]) and validate shapes; the model layers call the backend directly on
pre-validated stacked batches.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DimensionError

Tensor = np.ndarray


def tensor(data):
    """Coerce to a C-contiguous float64 array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("tensor input contains non-finite values")
    return arr


@dataclass
class ParamGrad:
    """A flat parameter vector and the gradient evaluated at it."""

    params: np.ndarray
    grads: np.ndarray

    def __post_init__(self):
        if self.params.ndim != 1 or self.grads.ndim != 1:
            raise DimensionError("params and grads must be flat vectors")
        if self.params.shape != self.grads.shape:
            raise DimensionError(
                f"params/grads length mismatch: {self.params.shape[0]} vs {self.grads.shape[0]}"
            )


def matmul(a, b):
    a = tensor(a)
    b = tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def _batched(x, sample_ndim):
    """Add a leading batch axis when given a single sample."""
    if x.ndim == sample_ndim:
        return x[None], True
    if x.ndim == sample_ndim + 1:
        return x, False
    raise DimensionError(
        f"expected a {sample_ndim}-d sample or {sample_ndim + 1}-d batch, got {x.ndim}-d"
    )


def _check_conv_args(x, kernel, stride):
    if kernel.ndim != 3:
        raise DimensionError(f"conv1d kernel must be [C_out, C_in, K], got {kernel.ndim}-d")
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise DimensionError(f"stride must be a positive integer, got {stride!r}")
    co, ci, k = kernel.shape
    if x.shape[1] != ci:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {ci}")
    if x.shape[2] < k:
        raise DimensionError(f"kernel length {k} exceeds input length {x.shape[2]}")
    return (x.shape[2] - k) // stride + 1


def conv1d_forward(input, kernel, stride=1):
    """Valid (no-padding) strided cross-correlation, no bias."""
    x = tensor(input)
    kern = tensor(kernel)
    x, single = _batched(x, 2)
    _check_conv_args(x, kern, stride)
    y = backend.conv1d_forward(x, kern, int(stride))
    return y[0] if single else y


def conv1d_backward(input, kernel, upstream, stride=1):
    """Gradients of conv1d_forward wrt (input, kernel)."""
    x = tensor(input)
    kern = tensor(kernel)
    gy = tensor(upstream)
    x, single = _batched(x, 2)
    gy, gy_single = _batched(gy, 2)
    if single != gy_single or x.shape[0] != gy.shape[0]:
        raise DimensionError("input and upstream batch shapes disagree")
    lo = _check_conv_args(x, kern, stride)
    if gy.shape[1] != kern.shape[0] or gy.shape[2] != lo:
        raise DimensionError(
            f"upstream shape {gy.shape[1:]} does not match forward output "
            f"({kern.shape[0]}, {lo})"
        )
    gx = backend.conv1d_grad_input(kern, gy, int(stride), x.shape[2])
    gk = backend.conv1d_grad_kernel(x, gy, int(stride), kern.shape[2])
    return (gx[0] if single else gx), gk


def _check_dense_args(x, w):
    if w.ndim != 2:
        raise DimensionError(f"dense weights must be [out, in], got {w.ndim}-d")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"input width {x.shape[1]} does not match weight fan-in {w.shape[1]}")


def dense_forward(input, weights):
    """y = x @ W^T for W of shape [out, in]."""
    x = tensor(input)
    w = tensor(weights)
    x, single = _batched(x, 1)
    _check_dense_args(x, w)
    y = backend.dense_forward(x, w)
    return y[0] if single else y


def dense_backward(input, weights, upstream):
    x = tensor(input)
    w = tensor(weights)
    gy = tensor(upstream)
    x, single = _batched(x, 1)
    gy, gy_single = _batched(gy, 1)
    if single != gy_single or x.shape[0] != gy.shape[0]:
        raise DimensionError("input and upstream batch shapes disagree")
    _check_dense_args(x, w)
    if gy.shape[1] != w.shape[0]:
        raise DimensionError(f"upstream width {gy.shape[1]} does not match fan-out {w.shape[0]}")
    gx = backend.dense_grad_input(w, gy)
    gw = backend.dense_grad_weight(x, gy)
    return (gx[0] if single else gx), gw


def relu(x):
    return np.maximum(tensor(x), 0.0)


def relu_backward(x, upstream):
    x = tensor(x)
    gy = tensor(upstream)
    if x.shape != gy.shape:
        raise DimensionError(f"relu upstream shape {gy.shape} does not match input {x.shape}")
    return gy * (x > 0.0)


def softmax(logits):
    z = tensor(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch (plain value for a single sample).

    Returns (loss, grad wrt logits). The gradient of the batch mean carries
    the 1/B factor, so per-sample contributions add linearly.
    """
    z = tensor(logits)
    z2, single = _batched(z, 1)
    y = np.asarray(labels)
    if single:
        y = y.reshape(1)
    if y.ndim != 1 or y.shape[0] != z2.shape[0]:
        raise DimensionError(f"labels shape {y.shape} does not match logits batch {z2.shape[0]}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be integers")
    ncls = z2.shape[1]
    if y.min() < 0 or y.max() >= ncls:
        bad = y[(y < 0) | (y >= ncls)][0]
        raise ValueError(f"label {bad} out of range [0, {ncls})")

    shifted = z2 - z2.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z2.shape[0])
    loss = float(np.mean(logsum - shifted[rows, y]))
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, y] -= 1.0
    grad /= z2.shape[0]
    return loss, (grad[0] if single else grad)
