"""Inference-energy accounting: operation counts per layer, combined with
measured firing rates and per-operation energy constants.

Dense-arithmetic (ANN) layers pay one multiply-accumulate per weight use.
Spike-driven layers only accumulate when an input spike arrives, so their
cost per time step is the layer's MAC-equivalent fan-out count scaled by the
firing rate of the layer's *input* spike train.

The first layer of a direct-encoding network receives analog input, not
spikes, so its accounting is a convention, selected by ``input_layer``:

    ac_once       drive computed once and reused every step (static input),
                  priced at accumulate cost              [default]
    mac_once      same single pass, priced at MAC cost
    mac_per_step  recomputed every step at MAC cost
    ac_per_step   recomputed every step at accumulate cost

Alternatively ``input_rate`` treats the first layer as spike-driven with the
given input rate, which overrides the convention.
"""

from dataclasses import dataclass

import numpy as np

from .errors import UsageError

INPUT_CONVENTIONS = ("ac_once", "mac_once", "mac_per_step", "ac_per_step")


@dataclass(frozen=True)
class EnergyConstants:
    """Per-operation costs in picojoules and the first-layer convention."""

    e_mac_pj: float = 4.6
    e_ac_pj: float = 0.9
    input_layer: str = "ac_once"

    def __post_init__(self):
        if not self.e_mac_pj > 0 or not self.e_ac_pj > 0:
            raise ValueError("energy constants must be positive")
        if self.input_layer not in INPUT_CONVENTIONS:
            raise ValueError(
                f"input_layer must be one of {INPUT_CONVENTIONS}, "
                f"got {self.input_layer!r}")


@dataclass(frozen=True)
class OpCount:
    """Per-layer operation potential: MACs for dense arithmetic, which is
    also the number of accumulate positions per time step for spikes."""

    name: str
    macs: int
    neurons: int

    def __post_init__(self):
        if self.macs < 0 or self.neurons < 0:
            raise ValueError("operation counts must be non-negative")


def count_ops(arch):
    """OpCount per layer of an architecture; identical for both backbones."""
    counts = []
    macs = arch.op_counts()
    feats = arch.feature_shapes()
    for i, (ls, m) in enumerate(zip(arch.layers, macs)):
        if ls.kind == "conv1d":
            feat = feats[i]
            out_len = (feat[2] - ls.kernel_size) // ls.stride + 1
            neurons = ls.out_channels * out_len
        else:
            neurons = ls.width
        counts.append(OpCount(name=f"{ls.kind}{i}", macs=int(m), neurons=neurons))
    return counts


@dataclass
class EnergyReport:
    layer_names: list
    layer_macs: list
    input_rates: list          # rate feeding each layer; None = analog input
    steps: int
    e_mac_pj: float
    e_ac_pj: float
    input_layer: str
    e_ann_pj: float
    e_snn_pj: float
    e_snn_layer_pj: list
    ratio: float

    def to_dict(self):
        return {
            "layer_names": list(self.layer_names),
            "layer_macs": [int(m) for m in self.layer_macs],
            "input_rates": [None if r is None else float(r)
                            for r in self.input_rates],
            "steps": int(self.steps),
            "e_mac_pj": float(self.e_mac_pj),
            "e_ac_pj": float(self.e_ac_pj),
            "input_layer": self.input_layer,
            "e_ann_pj": float(self.e_ann_pj),
            "e_snn_pj": float(self.e_snn_pj),
            "e_snn_layer_pj": [float(v) for v in self.e_snn_layer_pj],
            "ratio": float(self.ratio),
        }


def _check_rate(value, what):
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{what} must be in [0, 1], got {value}")
    return v


def estimate_energy(ops, rates, steps, constants=None, input_rate=None):
    """Single-inference energy for the ANN/SNN pair sharing ``ops``.

    ``rates[i]`` is the measured output firing rate of layer ``i``; layer
    ``i + 1`` consumes it as its input rate. Rates beyond the last consuming
    layer are accepted and ignored (the readout's own output is not a spike
    train). ``input_rate``, when given, makes the first layer spike-driven.
    """
    if not ops:
        raise ValueError("need at least one layer")
    steps = int(steps)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    constants = constants if constants is not None else EnergyConstants()
    rates = [_check_rate(r, f"rates[{i}]") for i, r in enumerate(rates)]
    if len(rates) < len(ops) - 1:
        raise ValueError(
            f"{len(ops)} layers need at least {len(ops) - 1} rates, "
            f"got {len(rates)}")
    if input_rate is not None:
        input_rate = _check_rate(input_rate, "input_rate")

    e_mac, e_ac = constants.e_mac_pj, constants.e_ac_pj
    e_ann = float(sum(op.macs for op in ops)) * e_mac

    per_layer = []
    input_rates = []
    first = ops[0].macs
    if input_rate is not None:
        per_layer.append(((steps * input_rate) * first) * e_ac)
        input_rates.append(input_rate)
    else:
        input_rates.append(None)
        if constants.input_layer == "ac_once":
            per_layer.append(first * e_ac)
        elif constants.input_layer == "mac_once":
            per_layer.append(first * e_mac)
        elif constants.input_layer == "mac_per_step":
            per_layer.append((steps * first) * e_mac)
        else:  # ac_per_step
            per_layer.append((steps * first) * e_ac)
    for i in range(1, len(ops)):
        rho_in = rates[i - 1]
        input_rates.append(rho_in)
        per_layer.append(((steps * rho_in) * ops[i].macs) * e_ac)

    e_snn = float(sum(per_layer))
    return EnergyReport(
        layer_names=[op.name for op in ops],
        layer_macs=[op.macs for op in ops],
        input_rates=input_rates,
        steps=steps,
        e_mac_pj=e_mac,
        e_ac_pj=e_ac,
        input_layer="spike_input" if input_rate is not None else constants.input_layer,
        e_ann_pj=e_ann,
        e_snn_pj=e_snn,
        e_snn_layer_pj=per_layer,
        ratio=e_ann / e_snn,
    )


def measure_rates(model, eval_x):
    """Per-layer mean firing rates plus the spike-weighted aggregate."""
    if not getattr(model, "spiking", False):
        raise UsageError("firing rates are only defined for the snn backbone")
    pred = model.predict(np.asarray(eval_x, dtype=np.float64))
    return pred.firing_rates, pred.rho_bar
