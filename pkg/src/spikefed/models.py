"""Shared backbone with a spiking (LIF) variant and a conventional (ReLU) twin.

The two variants use the same layer stack, the same flat parameter vector
layout, and the same initialization streams; only the nonlinearity between
layers differs. Spiking layers carry hidden state over ``lif.steps`` time
steps and the readout layer accumulates: logits are the time average of the
final dense layer's output, so the readout itself never spikes.

Inputs are static: the first layer's weighted drive is computed once and
reused at every time step. The backward pass exploits the same structure by
summing the per-step drive gradients before the single synapse-gradient call.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import backend, rng
from .errors import DimensionError, UsageError
from .numerics import ParamGrad, softmax_cross_entropy, tensor
from .spiking import (
    LIFConfig,
    lif_sequence,
    lif_sequence_backward,
    lif_sequence_twin,
)

BACKBONES = ("snn", "ann")


# ---------------------------------------------------------------------------
# architecture description


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the stack: a 1-D convolution or a dense (linear) map."""

    kind: str
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    width: int = 0

    def __post_init__(self):
        if self.kind == "conv1d":
            if int(self.out_channels) < 1:
                raise DimensionError("conv1d layer needs out_channels >= 1")
            if int(self.kernel_size) < 1:
                raise DimensionError("conv1d layer needs kernel_size >= 1")
            if int(self.stride) < 1:
                raise DimensionError("conv1d layer needs stride >= 1")
        elif self.kind == "dense":
            if int(self.width) < 1:
                raise DimensionError("dense layer needs width >= 1")
        else:
            raise DimensionError(f"unknown layer kind {self.kind!r}")


def conv1d(out_channels, kernel_size, stride=1):
    return LayerSpec("conv1d", out_channels=int(out_channels),
                     kernel_size=int(kernel_size), stride=int(stride))


def dense(width):
    return LayerSpec("dense", width=int(width))


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer stack plus input geometry. Immutable and validated on creation.

    Convolutions may only appear before the first dense layer, and the last
    layer must be dense with ``width == num_classes``.
    """

    input_channels: int
    input_length: int
    num_classes: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_channels < 1 or self.input_length < 1:
            raise DimensionError("input geometry must be positive")
        if self.num_classes < 2:
            raise DimensionError("need at least two classes")
        if len(self.layers) < 2:
            raise DimensionError("architecture needs at least two layers")
        for ls in self.layers:
            if not isinstance(ls, LayerSpec):
                raise DimensionError("layers must be LayerSpec instances")
        last = self.layers[-1]
        if last.kind != "dense" or last.width != self.num_classes:
            raise DimensionError(
                "last layer must be dense with width == num_classes")
        seen_dense = False
        for ls in self.layers:
            if ls.kind == "dense":
                seen_dense = True
            elif seen_dense:
                raise DimensionError("conv1d layers must precede dense layers")
        self.feature_shapes()  # validates the length chain

    def feature_shapes(self):
        """Per-layer input descriptors: ("conv", C, L) or ("dense", N)."""
        shapes = []
        c, length = self.input_channels, self.input_length
        flat = None
        for ls in self.layers:
            if ls.kind == "conv1d":
                if length < ls.kernel_size:
                    raise DimensionError(
                        f"feature length {length} shorter than kernel "
                        f"{ls.kernel_size}")
                shapes.append(("conv", c, length))
                length = (length - ls.kernel_size) // ls.stride + 1
                c = ls.out_channels
            else:
                if flat is None:
                    flat = c * length
                shapes.append(("dense", flat))
                flat = ls.width
        return shapes

    def weight_shapes(self):
        shapes = []
        for ls, feat in zip(self.layers, self.feature_shapes()):
            if ls.kind == "conv1d":
                shapes.append((ls.out_channels, feat[1], ls.kernel_size))
            else:
                shapes.append((ls.width, feat[1]))
        return shapes

    def param_count(self):
        return int(sum(int(np.prod(s)) for s in self.weight_shapes()))

    def op_counts(self):
        """Multiply-accumulate count per layer for one sample, one pass."""
        counts = []
        c, length = self.input_channels, self.input_length
        flat = None
        for ls in self.layers:
            if ls.kind == "conv1d":
                out_len = (length - ls.kernel_size) // ls.stride + 1
                counts.append(ls.out_channels * out_len * c * ls.kernel_size)
                c, length = ls.out_channels, out_len
            else:
                if flat is None:
                    flat = c * length
                counts.append(ls.width * flat)
                flat = ls.width
        return counts


def default_architecture(input_channels=8, input_length=128, num_classes=4):
    """Compact stack sized for multichannel sequence classification."""
    return ArchitectureSpec(
        input_channels=input_channels,
        input_length=input_length,
        num_classes=num_classes,
        layers=(
            conv1d(16, 7, stride=2),
            conv1d(32, 5, stride=2),
            dense(64),
            dense(num_classes),
        ),
    )


# ---------------------------------------------------------------------------
# model


@dataclass
class _LayerCache:
    in_rows: np.ndarray      # synapse input, flattened over time x batch
    state: object = None     # LIFState for spiking layers
    preact: np.ndarray = None  # pre-activation (ANN hidden layers only)


@dataclass
class ForwardCache:
    """Everything backward() needs. Tied to the parameter version that
    produced it; using it after the parameters changed is an error."""

    version: int
    batch: int
    loss: float
    grad_logits: np.ndarray
    layers: list


@dataclass
class Prediction:
    labels: np.ndarray
    firing_rates: list = None   # per spiking layer, None for ANN
    rho_bar: float = None       # spike-count-weighted mean rate


class Model:
    """Parameter container plus forward/backward for one backbone.

    All trainable weights live in one flat float64 vector ``theta``;
    per-layer arrays are reshaped views into it, so in-place updates to
    ``theta`` are immediately visible to the forward pass. Code that
    mutates ``theta`` directly must call ``mark_updated()`` so stale
    forward caches are detected.
    """

    def __init__(self, arch, backbone="snn", lif=None):
        if backbone not in BACKBONES:
            raise UsageError(f"backbone must be one of {BACKBONES}, got {backbone!r}")
        self.arch = arch
        self.backbone = backbone
        self.lif = lif if lif is not None else LIFConfig()
        if not isinstance(self.lif, LIFConfig):
            raise UsageError("lif must be a LIFConfig")
        self._wshapes = arch.weight_shapes()
        sizes = [int(np.prod(s)) for s in self._wshapes]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.theta = np.zeros(int(self._offsets[-1]), dtype=np.float64)
        self._views = [
            self.theta[self._offsets[i]:self._offsets[i + 1]].reshape(shape)
            for i, shape in enumerate(self._wshapes)
        ]
        self._version = 0

    # -- parameters -----------------------------------------------------

    @property
    def spiking(self):
        return self.backbone == "snn"

    @property
    def num_layers(self):
        return len(self._wshapes)

    def weights(self, i):
        return self._views[i]

    def flatten(self):
        return self.theta.copy()

    def load_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != self.theta.shape:
            raise DimensionError(
                f"parameter vector has {vec.size} entries, model needs "
                f"{self.theta.size}")
        self.theta[:] = vec
        self._version += 1

    def mark_updated(self):
        self._version += 1

    # -- forward / backward ----------------------------------------------

    def _check_inputs(self, inputs):
        x = tensor(inputs)
        if x.ndim != 3:
            raise DimensionError(
                f"inputs must be [batch, channels, length], got {x.ndim}-d")
        if x.shape[1] != self.arch.input_channels or x.shape[2] != self.arch.input_length:
            raise DimensionError(
                f"inputs {x.shape[1:]} do not match architecture "
                f"({self.arch.input_channels}, {self.arch.input_length})")
        return x

    def _forward_snn(self, x, twin_gates=None):
        """Returns (logits, layer_caches). Spiking layers on all but the
        last layer; the readout accumulates dense outputs over time."""
        arch, cfg = self.arch, self.lif
        steps = cfg.steps
        batch = x.shape[0]
        n = self.num_layers
        if twin_gates is not None and len(twin_gates) != n - 1:
            raise DimensionError(
                f"need gate patterns for {n - 1} spiking layers, got "
                f"{len(twin_gates)}")
        caches = []
        cur = None      # spike tensor [steps, batch, ...] after each layer
        logits = None
        for i, ls in enumerate(arch.layers):
            w = self._views[i]
            if i == 0:
                # Static input: one synapse pass, drive repeated over time.
                if ls.kind == "conv1d":
                    in_rows = x
                    z = backend.conv1d_forward(x, w, ls.stride)
                else:
                    in_rows = x.reshape(batch, -1)
                    z = backend.dense_forward(in_rows, w)
                # Explicit copy: a broadcast view would be read-only (and,
                # for steps == 1, already "contiguous"), which the compiled
                # kernels reject.
                drive = np.empty((steps,) + z.shape)
                drive[:] = z
            else:
                if ls.kind == "conv1d":
                    c, length = cur.shape[2], cur.shape[3]
                    in_rows = cur.reshape(steps * batch, c, length)
                    z = backend.conv1d_forward(in_rows, w, ls.stride)
                    drive = z.reshape((steps, batch) + z.shape[1:])
                else:
                    in_rows = cur.reshape(steps * batch, -1)
                    z = backend.dense_forward(in_rows, w)
                    drive = z.reshape(steps, batch, -1)
            if i < n - 1:
                if twin_gates is None:
                    state = lif_sequence(drive, cfg)
                else:
                    state = lif_sequence_twin(drive, twin_gates[i], cfg)
                cur = state.spikes
                caches.append(_LayerCache(in_rows=in_rows, state=state))
            else:
                logits = drive.mean(axis=0)
                caches.append(_LayerCache(in_rows=in_rows))
        return logits, caches

    def _forward_ann(self, x):
        arch = self.arch
        batch = x.shape[0]
        n = self.num_layers
        caches = []
        cur = x
        logits = None
        for i, ls in enumerate(arch.layers):
            w = self._views[i]
            if ls.kind == "conv1d":
                in_rows = cur
                z = backend.conv1d_forward(cur, w, ls.stride)
            else:
                in_rows = cur.reshape(batch, -1)
                z = backend.dense_forward(in_rows, w)
            if i < n - 1:
                caches.append(_LayerCache(in_rows=in_rows, preact=z))
                cur = np.maximum(z, 0.0)
            else:
                caches.append(_LayerCache(in_rows=in_rows))
                logits = z
        return logits, caches

    def raw_forward(self, inputs, twin_gates=None):
        """Logits plus layer caches, no loss. ``twin_gates`` switches the
        spiking layers to their smooth surrogate with the given frozen
        reset/gate patterns (SNN only)."""
        x = self._check_inputs(inputs)
        if self.backbone == "ann":
            if twin_gates is not None:
                raise UsageError("twin_gates only applies to the snn backbone")
            return self._forward_ann(x)
        return self._forward_snn(x, twin_gates)

    def forward_loss(self, inputs, labels, twin_gates=None):
        """Mean cross-entropy over the batch. Returns (loss, cache)."""
        logits, caches = self.raw_forward(inputs, twin_gates)
        loss, grad_logits = softmax_cross_entropy(logits, labels)
        return loss, ForwardCache(
            version=self._version,
            batch=logits.shape[0],
            loss=loss,
            grad_logits=grad_logits,
            layers=caches,
        )

    def backward(self, cache):
        """Gradient of the cached loss w.r.t. the flat parameter vector."""
        if not isinstance(cache, ForwardCache):
            raise UsageError("backward() needs the cache from forward_loss()")
        if cache.version != self._version:
            raise UsageError(
                "forward cache is stale: parameters changed since forward_loss()")
        if self.backbone == "ann":
            return self._backward_ann(cache)
        return self._backward_snn(cache)

    def _backward_snn(self, cache):
        arch, cfg = self.arch, self.lif
        steps = cfg.steps
        batch = cache.batch
        n = self.num_layers
        grads = [None] * n

        # Readout: logits = mean_t dense(spikes_t), so each step sees 1/T
        # of the logits gradient.
        last = cache.layers[n - 1]
        go = np.empty((steps,) + cache.grad_logits.shape)
        go[:] = cache.grad_logits / steps
        go = go.reshape(steps * batch, -1)
        w_last = self._views[n - 1]
        grads[n - 1] = backend.dense_grad_weight(last.in_rows, go)
        gspk = backend.dense_grad_input(w_last, go)

        for i in range(n - 2, -1, -1):
            layer = cache.layers[i]
            state = layer.state
            gs = gspk.reshape(state.spikes.shape)
            gz = lif_sequence_backward(state, gs, cfg)
            ls = arch.layers[i]
            w = self._views[i]
            if i == 0:
                # Constant drive: the per-step gradients all flow into the
                # single synapse pass, so they sum over time.
                gz_sum = gz.sum(axis=0)
                if ls.kind == "conv1d":
                    gz_sum = gz_sum.reshape(
                        (batch,) + state.spikes.shape[2:])
                    grads[0] = backend.conv1d_grad_kernel(
                        layer.in_rows, gz_sum, ls.stride, ls.kernel_size)
                else:
                    gz_sum = gz_sum.reshape(batch, -1)
                    grads[0] = backend.dense_grad_weight(layer.in_rows, gz_sum)
            else:
                if ls.kind == "conv1d":
                    co, lo = state.spikes.shape[2], state.spikes.shape[3]
                    gz_rows = gz.reshape(steps * batch, co, lo)
                    grads[i] = backend.conv1d_grad_kernel(
                        layer.in_rows, gz_rows, ls.stride, ls.kernel_size)
                    gspk = backend.conv1d_grad_input(
                        w, gz_rows, ls.stride, layer.in_rows.shape[2])
                else:
                    gz_rows = gz.reshape(steps * batch, -1)
                    grads[i] = backend.dense_grad_weight(layer.in_rows, gz_rows)
                    gspk = backend.dense_grad_input(w, gz_rows)
        return self._assemble(grads)

    def _backward_ann(self, cache):
        arch = self.arch
        n = self.num_layers
        grads = [None] * n
        gz = cache.grad_logits
        for i in range(n - 1, -1, -1):
            layer = cache.layers[i]
            ls = arch.layers[i]
            w = self._views[i]
            if ls.kind == "conv1d":
                grads[i] = backend.conv1d_grad_kernel(
                    layer.in_rows, gz, ls.stride, ls.kernel_size)
                gin = backend.conv1d_grad_input(
                    w, gz, ls.stride, layer.in_rows.shape[2]) if i > 0 else None
            else:
                grads[i] = backend.dense_grad_weight(layer.in_rows, gz)
                gin = backend.dense_grad_input(w, gz) if i > 0 else None
            if i > 0:
                prev = cache.layers[i - 1]
                gin = gin.reshape(prev.preact.shape)
                gz = gin * (prev.preact > 0.0)
        return self._assemble(grads)

    def _assemble(self, grads):
        flat = np.concatenate([g.reshape(-1) for g in grads])
        return ParamGrad(params=self.theta.copy(), grads=flat)

    # -- inference --------------------------------------------------------

    def hard_gates(self, inputs):
        """Binary reset patterns from a hard forward pass, for the twin."""
        if not self.spiking:
            raise UsageError("hard_gates() only applies to the snn backbone")
        _, caches = self.raw_forward(inputs)
        return [c.state.gates.copy() for c in caches[:-1]]

    def predict(self, inputs, batch_size=256):
        """Argmax class labels (ties: lowest index). For the spiking
        backbone also reports per-layer mean firing rates."""
        x = self._check_inputs(inputs)
        total = x.shape[0]
        if total == 0:
            raise DimensionError("predict() needs at least one sample")
        labels = []
        n_spk = self.num_layers - 1
        spike_sums = np.zeros(n_spk)
        slot_counts = np.zeros(n_spk)
        for lo in range(0, total, batch_size):
            chunk = x[lo:lo + batch_size]
            logits, caches = self.raw_forward(chunk)
            labels.append(np.argmax(logits, axis=1))
            if self.spiking:
                for j in range(n_spk):
                    spikes = caches[j].state.spikes
                    spike_sums[j] += spikes.sum()
                    slot_counts[j] += spikes.size
        labels = np.concatenate(labels)
        if not self.spiking:
            return Prediction(labels=labels)
        rates = [float(s / c) for s, c in zip(spike_sums, slot_counts)]
        rho_bar = float(spike_sums.sum() / slot_counts.sum())
        return Prediction(labels=labels, firing_rates=rates, rho_bar=rho_bar)


# ---------------------------------------------------------------------------
# functional entry points


# Uniform fan-in init bound: binary spike inputs carry far less power than
# dense activations, so the usual sqrt(6) gain leaves deep LIF layers below
# threshold and silent. Gain 5 keeps all layers firing at unit threshold
# while the ReLU backbone still trains; both backbones share the same draw.
_INIT_GAIN = 5.0


def build_model(spec, seed, backbone="snn", lif=None):
    """Fresh model with fan-in-scaled uniform weights. Identical seeds give
    identical parameters regardless of backbone."""
    model = Model(spec, backbone=backbone, lif=lif)
    for i, shape in enumerate(model._wshapes):
        fan_in = int(np.prod(shape[1:]))
        bound = _INIT_GAIN / math.sqrt(fan_in)
        gen = rng.stream(seed, rng.INIT, i)
        model._views[i][...] = gen.uniform(-bound, bound, size=shape)
    model.mark_updated()
    return model


def forward_loss(model, inputs, labels, twin_gates=None):
    return model.forward_loss(inputs, labels, twin_gates=twin_gates)


def backward(model, cache):
    return model.backward(cache)


def predict(model, inputs):
    return model.predict(inputs)
