"""Independent oracles shared across the test suite.

Everything here recomputes results from the mathematical definitions with
deliberately different code than the package: triple loops instead of BLAS,
materialized banded matrices instead of im2col, explicit per-step recursions
instead of the fused kernels. Agreement between the two routes is the
evidence; neither side is trusted alone, so central finite differences
cross-check the analytic oracles as well.
"""

import numpy as np

from spikefed.models import build_model, conv1d, dense, ArchitectureSpec
from spikefed.spiking import LIFConfig

# Acceptance-criterion outcomes, rendered by the conftest terminal summary.
# Shared here (not in conftest) so there is exactly one instance regardless
# of how pytest names its conftest modules.
ACCEPTANCE_RESULTS = {}


def record_criterion(num, ok, detail):
    ACCEPTANCE_RESULTS[int(num)] = (bool(ok), str(detail))


def rel_inf(a, b):
    """Max-norm relative error of a against reference b."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def loop_matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def conv_forward_loops(x, kernel, stride):
    """Valid strided cross-correlation by direct summation."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    bsz, ci, length = x.shape
    co, _, k = kernel.shape
    lo = (length - k) // stride + 1
    out = np.zeros((bsz, co, lo))
    for b in range(bsz):
        for o in range(co):
            for p in range(lo):
                acc = 0.0
                for i in range(ci):
                    for j in range(k):
                        acc += kernel[o, i, j] * x[b, i, p * stride + j]
                out[b, o, p] = acc
    return out


def conv_grad_loops(x, kernel, grad_out, stride):
    """Adjoints of conv_forward_loops wrt (input, kernel), by direct sums."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    bsz, ci, length = x.shape
    co, _, k = kernel.shape
    lo = grad_out.shape[2]
    gx = np.zeros_like(x)
    gk = np.zeros_like(kernel)
    for b in range(bsz):
        for o in range(co):
            for p in range(lo):
                g = grad_out[b, o, p]
                for i in range(ci):
                    for j in range(k):
                        gk[o, i, j] += g * x[b, i, p * stride + j]
                        gx[b, i, p * stride + j] += g * kernel[o, i, j]
    return gx, gk


def central_diff(f, x0, eps=3e-6):
    """Central finite differences of scalar f over a flat float64 vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        hi = x0.copy()
        hi[i] += eps
        lo = x0.copy()
        lo[i] -= eps
        g[i] = (f(hi) - f(lo)) / (2.0 * eps)
    return g


def lif_scalar_oracle(drive, leak, threshold):
    """Hard LIF recursion, one Python step at a time. drive is [T, N]."""
    drive = np.asarray(drive, dtype=np.float64)
    steps, n = drive.shape
    v = np.zeros((steps, n))
    s = np.zeros((steps, n))
    u_arr = np.zeros((steps, n))
    u = np.zeros(n)
    for t in range(steps):
        for i in range(n):
            vt = (1.0 - leak) * u[i] + leak * drive[t, i]
            st = 1.0 if vt >= threshold else 0.0
            v[t, i] = vt
            s[t, i] = st
            u[i] = vt * (1.0 - st)
            u_arr[t, i] = u[i]
    return v, s, u_arr


def phi(s, eta):
    return np.arctan(np.pi * eta * np.asarray(s, dtype=np.float64) / 2.0) / np.pi + 0.5


def dphi(s, eta):
    x = np.pi * eta * np.asarray(s, dtype=np.float64) / 2.0
    return (eta / 2.0) / (1.0 + x * x)


# ---------------------------------------------------------------------------
# materialized-matrix model oracles


def conv_matrix(kernel, length, stride):
    """The conv layer as an explicit [Co*Lo, Ci*L] matrix on flat inputs."""
    co, ci, k = kernel.shape
    lo = (length - k) // stride + 1
    m = np.zeros((co * lo, ci * length))
    for o in range(co):
        for p in range(lo):
            for i in range(ci):
                for j in range(k):
                    m[o * lo + p, i * length + p * stride + j] += kernel[o, i, j]
    return m


def conv_kernel_grad_from_matrix(gmat, co, ci, length, k, stride):
    """Fold a matrix-space gradient back to kernel coordinates by summing
    the entries tied to each shared weight."""
    lo = (length - k) // stride + 1
    gk = np.zeros((co, ci, k))
    for o in range(co):
        for p in range(lo):
            for i in range(ci):
                for j in range(k):
                    gk[o, i, j] += gmat[o * lo + p, i * length + p * stride + j]
    return gk


def _model_matrices(model):
    """Every layer as a dense matrix acting on flat features, plus the conv
    metadata needed to fold matrix gradients back to kernels."""
    mats, meta = [], []
    feats = model.arch.feature_shapes()
    for i, ls in enumerate(model.arch.layers):
        w = np.asarray(model.weights(i), dtype=np.float64)
        if ls.kind == "conv1d":
            _, ci, length = feats[i]
            mats.append(conv_matrix(w, length, ls.stride))
            meta.append((ls.out_channels, ci, length, ls.kernel_size, ls.stride))
        else:
            mats.append(w.copy())
            meta.append(None)
    return mats, meta


def twin_oracle(model, x, y, gates):
    """Loss and analytic parameter gradient of the frozen-gate smooth twin.

    Reimplements the whole chain on materialized matrices: static first-layer
    drive, per-step membrane recursion with frozen reset gates, phi outputs,
    time-averaged readout, softmax cross-entropy. The backward runs the
    reverse recursion a_t = gout_t * phi'(V_t - th) + (1-leak)(1-gate_t) *
    a_{t+1} with drive gradient leak * a_t.
    """
    arch, cfg = model.arch, model.lif
    steps = cfg.steps
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    bsz = x.shape[0]
    n = model.num_layers
    mats, meta = _model_matrices(model)
    xflat = x.reshape(bsz, -1)

    outs, vs, gats = [], [], []
    cur = None
    logits = None
    for i in range(n):
        if i == 0:
            z = xflat @ mats[0].T
            drive = np.repeat(z[None], steps, axis=0)
        else:
            drive = np.einsum("tbu,vu->tbv", cur, mats[i])
        if i < n - 1:
            g = np.asarray(gates[i], dtype=np.float64).reshape(steps, bsz, -1)
            v = np.zeros_like(drive)
            prev = np.zeros_like(drive[0])
            for t in range(steps):
                vt = (1.0 - cfg.leak) * prev + cfg.leak * drive[t]
                prev = vt * (1.0 - g[t])
                v[t] = vt
            cur = phi(v - cfg.threshold, cfg.eta)
            outs.append(cur)
            vs.append(v)
            gats.append(g)
        else:
            logits = drive.mean(axis=0)

    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    rows = np.arange(bsz)
    loss = float(np.mean(lse - logits[rows, y]))
    gl = np.exp(logits - lse[:, None])
    gl[rows, y] -= 1.0
    gl /= bsz

    gmats = [np.zeros_like(m) for m in mats]
    go = np.repeat((gl / steps)[None], steps, axis=0)
    gmats[n - 1] += np.einsum("tbr,tbc->rc", go, outs[n - 2])
    gout = np.einsum("tbr,rc->tbc", go, mats[n - 1])
    for i in range(n - 2, -1, -1):
        v, g = vs[i], gats[i]
        gz = np.zeros_like(v)
        a = np.zeros_like(v[0])
        for t in range(steps - 1, -1, -1):
            a = gout[t] * dphi(v[t] - cfg.threshold, cfg.eta) \
                + (1.0 - cfg.leak) * (1.0 - g[t]) * a
            gz[t] = cfg.leak * a
        if i == 0:
            gz0 = gz.sum(axis=0)
            gmats[0] += np.einsum("bu,bi->ui", gz0, xflat)
        else:
            gmats[i] += np.einsum("tbu,tbi->ui", gz, outs[i - 1])
            gout = np.einsum("tbu,ui->tbi", gz, mats[i])

    parts = []
    for i in range(n):
        if meta[i] is None:
            parts.append(gmats[i].reshape(-1))
        else:
            co, ci, length, k, stride = meta[i]
            parts.append(conv_kernel_grad_from_matrix(
                gmats[i], co, ci, length, k, stride).reshape(-1))
    return loss, np.concatenate(parts)


def snn_hard_logits_oracle(model, x):
    """Hard-spiking forward on materialized matrices: binary spikes, reset
    to zero, static first-layer drive, time-averaged readout."""
    arch, cfg = model.arch, model.lif
    steps = cfg.steps
    x = np.asarray(x, dtype=np.float64)
    bsz = x.shape[0]
    n = model.num_layers
    mats, _ = _model_matrices(model)
    cur = None
    for i in range(n):
        if i == 0:
            z = x.reshape(bsz, -1) @ mats[0].T
            drive = np.repeat(z[None], steps, axis=0)
        else:
            drive = np.einsum("tbu,vu->tbv", cur, mats[i])
        if i < n - 1:
            out = np.zeros_like(drive)
            u = np.zeros_like(drive[0])
            for t in range(steps):
                vt = (1.0 - cfg.leak) * u + cfg.leak * drive[t]
                st = (vt >= cfg.threshold).astype(np.float64)
                u = vt * (1.0 - st)
                out[t] = st
            cur = out
        else:
            return drive.mean(axis=0)


def ann_logits_oracle(model, x):
    """ReLU twin forward on the same materialized matrices."""
    x = np.asarray(x, dtype=np.float64)
    bsz = x.shape[0]
    n = model.num_layers
    mats, _ = _model_matrices(model)
    cur = x.reshape(bsz, -1)
    for i in range(n):
        z = cur @ mats[i].T
        if i < n - 1:
            cur = np.maximum(z, 0.0)
        else:
            return z


# ---------------------------------------------------------------------------
# random tiny networks for gradient checking


def random_tiny_net(gen):
    """A random small spiking model plus a batch and frozen gate patterns.

    Stays within: at most 3 trainable layers, at most 16 neurons per layer,
    at most 4 time steps.
    """
    ncls = int(gen.integers(2, 4))
    channels = int(gen.integers(1, 3))
    length = int(gen.integers(6, 11))
    steps = int(gen.integers(1, 5))
    batch = int(gen.integers(1, 4))
    layout = int(gen.integers(0, 4))
    if layout == 0:
        layers = (dense(int(gen.integers(2, 13))), dense(ncls))
    elif layout == 1:
        layers = (conv1d(int(gen.integers(1, 3)), int(gen.integers(2, 4)),
                         stride=int(gen.integers(1, 3))), dense(ncls))
    elif layout == 2:
        layers = (conv1d(int(gen.integers(1, 3)), int(gen.integers(2, 4)),
                         stride=int(gen.integers(1, 3))),
                  dense(int(gen.integers(2, 10))), dense(ncls))
    else:
        layers = (dense(int(gen.integers(2, 13))),
                  dense(int(gen.integers(2, 10))), dense(ncls))
    arch = ArchitectureSpec(
        input_channels=channels, input_length=length,
        num_classes=ncls, layers=layers)
    lif = LIFConfig(
        steps=steps,
        leak=float(gen.choice([0.3, 0.5, 0.7])),
        threshold=float(gen.choice([0.8, 1.0])),
        eta=float(gen.choice([1.5, 2.0])),
    )
    model = build_model(arch, seed=int(gen.integers(0, 2 ** 31)),
                        backbone="snn", lif=lif)
    x = gen.uniform(-1.5, 1.5, size=(batch, channels, length))
    y = gen.integers(0, ncls, size=batch)
    fire_p = float(gen.uniform(0.2, 0.5))
    gates = [(gen.random(g.shape) < fire_p).astype(np.float64)
             for g in model.hard_gates(x)]
    return model, x, y, gates


# ---------------------------------------------------------------------------
# quadratic toy client (closed-form prox)


class QuadClient:
    """Client with F_k(v) = 0.5 ||v - a||^2, so grad F_k(v) = v - a and the
    proximal point argmin_v F_k(v) + (mu/2)||v - w||^2 is (a + mu w)/(1 + mu).
    Matches the duck-typed client surface the diagnostics use.
    """

    def __init__(self, a, p_k):
        self.a = np.asarray(a, dtype=np.float64)
        self.p_k = float(p_k)

    def eval_gradient(self, theta=None, idx=None):
        return np.asarray(theta, dtype=np.float64) - self.a

    def sample_gradient(self, theta=None, gen=None, batch_size=None):
        return self.eval_gradient(theta)

    def prox_closed_form(self, w, mu):
        return (self.a + mu * np.asarray(w, dtype=np.float64)) / (1.0 + mu)
