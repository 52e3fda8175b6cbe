"""Pure-numpy kernel backend.

Contract shared with the compiled backend (`spikefed._kernels_cy`): every
array argument is float64 and C-contiguous, shapes are validated by the
caller. Convolutions are valid (no padding) strided cross-correlations
without bias, which is what the model layers mean by "conv1d".

The LIF pair implements the two-phase membrane update

    V(t) = (1 - leak) * U(t-1) + leak * z(t)
    S(t) = 1[V(t) >= threshold]
    U(t) = V(t) * (1 - S(t))          # hard reset to zero

and its backward recursion with the spike nonlinearity replaced by the
arctan surrogate derivative and reset gates treated as constants:

    a(t)  = gS(t) * phi'(V(t) - threshold) + (1 - leak) * (1 - gate(t)) * a(t+1)
    gz(t) = leak * a(t)

`gates` is passed separately from the spikes so the same backward serves
both the spiking forward (gates == spikes) and the frozen-gate
differentiable twin used by the gradient oracle.
"""

import numpy as np

NAME = "python"


def _im2col(x, kernel_size, stride):
    # x [B, Ci, L] -> patches [B, Lo, Ci*K]; the reshape materialises the copy
    b, ci, length = x.shape
    lo = (length - kernel_size) // stride + 1
    sb, sc, sl = x.strides
    shape = (b, lo, ci, kernel_size)
    strides = (sb, sl * stride, sc, sl)
    patches = np.lib.stride_tricks.as_strided(x, shape=shape, strides=strides)
    return patches.reshape(b, lo, ci * kernel_size), lo


def conv1d_forward(x, kernel, stride):
    """x [B,Ci,L], kernel [Co,Ci,K] -> y [B,Co,Lo]."""
    co, ci, k = kernel.shape
    cols, lo = _im2col(x, k, stride)
    y = cols @ kernel.reshape(co, ci * k).T        # [B, Lo, Co]
    return np.ascontiguousarray(y.transpose(0, 2, 1))


def conv1d_grad_kernel(x, grad_out, stride, kernel_size):
    """Gradient of conv1d_forward wrt kernel. grad_out [B,Co,Lo] -> [Co,Ci,K]."""
    b, co, lo = grad_out.shape
    ci = x.shape[1]
    k = kernel_size
    cols, _ = _im2col(x, k, stride)                # [B, Lo, Ci*K]
    g = grad_out.transpose(1, 0, 2).reshape(co, b * lo)
    gk = g @ cols.reshape(b * lo, ci * k)
    return np.ascontiguousarray(gk.reshape(co, ci, k))


def conv1d_grad_input(kernel, grad_out, stride, input_length):
    """Gradient of conv1d_forward wrt input. Returns [B,Ci,input_length]."""
    b, co, lo = grad_out.shape
    co_, ci, k = kernel.shape
    g = grad_out.transpose(0, 2, 1).reshape(b * lo, co)
    cols = (g @ kernel.reshape(co, ci * k)).reshape(b, lo, ci, k)
    gx = np.zeros((b, ci, input_length))
    for t in range(k):  # K strided scatter-adds; windows overlap so no vector scatter
        gx[:, :, t : t + lo * stride : stride] += cols[:, :, :, t].transpose(0, 2, 1)
    return gx


def dense_forward(x, w):
    """x [B,N], w [M,N] -> y [B,M] = x @ w.T."""
    return x @ w.T


def dense_grad_weight(x, grad_out):
    """grad_out [B,M], x [B,N] -> [M,N]."""
    return np.ascontiguousarray(grad_out.T @ x)


def dense_grad_input(w, grad_out):
    """grad_out [B,M], w [M,N] -> [B,N]."""
    return grad_out @ w


def lif_forward(drive, leak, threshold):
    """drive [T,B,N] -> (pre-reset V, spikes S, post-reset U), each [T,B,N]."""
    steps = drive.shape[0]
    v = np.empty_like(drive)
    s = np.empty_like(drive)
    u = np.empty_like(drive)
    prev = np.zeros_like(drive[0])
    keep = 1.0 - leak
    for t in range(steps):
        vt = keep * prev + leak * drive[t]
        st = (vt >= threshold).astype(np.float64)
        prev = vt * (1.0 - st)
        v[t] = vt
        s[t] = st
        u[t] = prev
    return v, s, u


def lif_backward(v, gates, grad_spikes, leak, threshold, eta):
    """Reverse-time credit assignment; returns grad wrt drive, [T,B,N]."""
    steps = v.shape[0]
    gz = np.empty_like(v)
    carry = np.zeros_like(v[0])
    keep = 1.0 - leak
    half_pi_eta = np.pi * eta / 2.0
    for t in range(steps - 1, -1, -1):
        centred = v[t] - threshold
        sg = (eta / 2.0) / (1.0 + (half_pi_eta * centred) ** 2)
        carry = grad_spikes[t] * sg + keep * (1.0 - gates[t]) * carry
        gz[t] = leak * carry
    return gz
