"""LIF neuron dynamics, arctan surrogate, and sequence-level BPTT.

Membrane update (two-phase, hard reset to zero, spike at V >= threshold):

    V(t) = (1 - leak) * U(t-1) + leak * z(t)     # z = post-synaptic drive
    S(t) = 1[V(t) >= threshold]
    U(t) = V(t) * (1 - S(t))

The forward always emits hard binary spikes; the surrogate

    phi(s)  = (1/pi) * arctan(pi*eta*s/2) + 1/2
    phi'(s) = (eta/2) / (1 + (pi*eta*s/2)^2)

appears only in the backward pass, where the spike derivative is replaced by
phi'(V - threshold) and the reset gate is treated as a constant, so the
temporal factor is (1 - leak)*(1 - S(t)).

`lif_sequence_twin` builds the differentiable twin used by the gradient
oracle: reset gates frozen to a given binary pattern, layer output replaced
by the continuous phi(V - threshold). The twin is exactly the function the
production backward differentiates, and it is smooth, so central finite
differences validate the whole chain.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DimensionError


@dataclass(frozen=True)
class LIFConfig:
    leak: float = 0.5        # lambda; fraction of the new drive admitted per step
    threshold: float = 1.0
    eta: float = 2.0         # surrogate sharpness; sup |phi'| = eta/2
    steps: int = 6           # simulation window T

    def __post_init__(self):
        if not (0.0 < self.leak <= 1.0):
            raise ValueError(f"leak must be in (0, 1], got {self.leak}")
        if self.threshold <= 0.0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.eta <= 0.0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")


@dataclass
class LIFState:
    """Per-step recording of one LIF layer, kept for BPTT and rate counts.

    `gates` are the reset gates the backward pass uses; they alias `spikes`
    after a hard forward and hold the frozen binary pattern in twin mode
    (where `spikes` carries the continuous phi outputs instead).
    """

    pre_reset_potentials: np.ndarray   # V(t), argument of the surrogate
    spikes: np.ndarray                 # S(t) hard, or phi(V - th) in twin mode
    potentials: np.ndarray             # U(t), post-reset
    gates: np.ndarray

    @property
    def steps(self):
        return self.pre_reset_potentials.shape[0]


@dataclass
class LIFLayerState(LIFState):
    """LIFState plus what a dense-synapse layer backward needs."""

    inputs: np.ndarray = None
    weights: np.ndarray = None


def surrogate_value(s, eta):
    if eta <= 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    return np.arctan(np.pi * eta * np.asarray(s, dtype=np.float64) / 2.0) / np.pi + 0.5


def surrogate_deriv(s, eta):
    if eta <= 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    x = np.pi * eta * np.asarray(s, dtype=np.float64) / 2.0
    return (eta / 2.0) / (1.0 + x * x)


def lif_step(u_prev, weighted_input, cfg):
    """One membrane update. Returns (pre-reset V, spikes, post-reset U)."""
    u_prev = np.asarray(u_prev, dtype=np.float64)
    drive = np.asarray(weighted_input, dtype=np.float64)
    if u_prev.shape != drive.shape:
        raise DimensionError(f"potential shape {u_prev.shape} != input shape {drive.shape}")
    v = (1.0 - cfg.leak) * u_prev + cfg.leak * drive
    s = (v >= cfg.threshold).astype(np.float64)
    return v, s, v * (1.0 - s)


def _flat(arr, steps):
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.ndim < 2 or a.shape[0] != steps:
        raise DimensionError(f"expected a [T={steps}, ...] sequence, got shape {a.shape}")
    return a, a.reshape(steps, -1)


def lif_sequence(drive, cfg):
    """Run the hard LIF recursion over a [T, ...] drive sequence."""
    drive, flat = _flat(drive, cfg.steps)
    v, s, u = backend.lif_forward(flat, cfg.leak, cfg.threshold)
    shape = drive.shape
    s = s.reshape(shape)
    return LIFState(
        pre_reset_potentials=v.reshape(shape),
        spikes=s,
        potentials=u.reshape(shape),
        gates=s,
    )


def lif_sequence_twin(drive, gates, cfg):
    """Differentiable twin: frozen reset gates, phi outputs.

    V(t) = (1 - leak) * V(t-1) * (1 - gates(t-1)) + leak * z(t)
    out(t) = phi(V(t) - threshold)
    """
    drive, _ = _flat(drive, cfg.steps)
    gates = np.ascontiguousarray(gates, dtype=np.float64)
    if gates.shape != drive.shape:
        raise DimensionError(f"gate shape {gates.shape} != drive shape {drive.shape}")
    keep = 1.0 - cfg.leak
    v = np.empty_like(drive)
    prev = np.zeros_like(drive[0])
    for t in range(cfg.steps):
        vt = keep * prev + cfg.leak * drive[t]
        prev = vt * (1.0 - gates[t])
        v[t] = vt
    out = surrogate_value(v - cfg.threshold, cfg.eta)
    return LIFState(
        pre_reset_potentials=v,
        spikes=out,
        potentials=v * (1.0 - gates),
        gates=gates,
    )


def lif_sequence_backward(state, upstream, cfg):
    """Grad of the loss wrt the drive, given grads wrt the spike outputs.

    Works unchanged for hard and twin states: both record the pre-reset
    potentials the surrogate is evaluated at and the reset gates of the
    temporal path.
    """
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.shape != state.pre_reset_potentials.shape:
        raise DimensionError(
            f"upstream shape {upstream.shape} != state shape {state.pre_reset_potentials.shape}"
        )
    steps = state.steps
    gz = backend.lif_backward(
        state.pre_reset_potentials.reshape(steps, -1),
        state.gates.reshape(steps, -1),
        upstream.reshape(steps, -1),
        cfg.leak,
        cfg.threshold,
        cfg.eta,
    )
    return gz.reshape(upstream.shape)


def lif_layer_forward(inputs, weights, cfg):
    """Dense synapse then LIF dynamics over all T steps.

    inputs: [T, N_in] or [T, B, N_in]; weights: [N_out, N_in].
    Returns (spike outputs, layer state for the backward).
    """
    inputs, flat = _flat(inputs, cfg.steps)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != inputs.shape[-1]:
        raise DimensionError(
            f"weights {weights.shape} do not match input width {inputs.shape[-1]}"
        )
    rows = flat.reshape(cfg.steps * (flat.shape[1] // inputs.shape[-1]), inputs.shape[-1])
    drive = backend.dense_forward(rows, weights)
    drive = drive.reshape(inputs.shape[:-1] + (weights.shape[0],))
    state = lif_sequence(drive, cfg)
    return state.spikes, LIFLayerState(
        pre_reset_potentials=state.pre_reset_potentials,
        spikes=state.spikes,
        potentials=state.potentials,
        gates=state.gates,
        inputs=inputs,
        weights=weights,
    )


def lif_layer_backward(state, upstream, cfg):
    """Gradients of a lif_layer_forward call: (grad_weights, grad_inputs)."""
    if getattr(state, "inputs", None) is None \
            or getattr(state, "weights", None) is None:
        raise DimensionError("state was not produced by lif_layer_forward")
    gz = lif_sequence_backward(state, upstream, cfg)
    n_in = state.inputs.shape[-1]
    n_out = state.weights.shape[0]
    in_rows = state.inputs.reshape(-1, n_in)
    gz_rows = gz.reshape(-1, n_out)
    grad_w = backend.dense_grad_weight(in_rows, gz_rows)
    grad_in = backend.dense_grad_input(state.weights, gz_rows).reshape(state.inputs.shape)
    return grad_w, grad_in


def measure_firing_rate(state):
    """Fraction of (step, neuron) slots carrying a spike, in [0, 1]."""
    return float(state.spikes.mean())
