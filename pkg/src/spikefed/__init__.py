"""Personalized federated learning over spiking neural networks.

A deterministic simulator pairing leaky integrate-and-fire backbones
(trained by backpropagation through time with a smooth surrogate around the
spike threshold) with proximal personalized federated optimization, plus
the diagnostics that make the training theory measurable: client drift,
firing-rate-scaled drift bounds, envelope stationarity, and an operation-
level inference-energy comparison against a matched conventional network.
"""

from . import backend
from .config import BUILTIN_CONFIGS, ResolvedConfig, load_config, resolve
from .data import ClientPartition, DataConfig, export_container, ingest, synth_generate
from .diagnostics import (
    ConstantsSnapshot,
    DriftReport,
    EnvelopeReport,
    SparsityBound,
    drift_metric,
    drift_sparsity_bound,
    envelope_grad_proxy,
    estimate_constants,
)
from .energy import (
    EnergyConstants,
    EnergyReport,
    OpCount,
    count_ops,
    estimate_energy,
    measure_rates,
)
from .errors import (
    ConfigError,
    DimensionError,
    IngestError,
    ProtocolError,
    UsageError,
)
from .federated import (
    REGIMES,
    ClientState,
    ExperimentPlan,
    RoundMetrics,
    ServerState,
    TrainConfig,
    aggregate,
    local_update,
    run_experiment,
    run_round,
)
from .models import (
    ArchitectureSpec,
    LayerSpec,
    Model,
    Prediction,
    build_model,
    backward,
    conv1d,
    default_architecture,
    dense,
    forward_loss,
    predict,
)
from .spiking import (
    LIFConfig,
    LIFState,
    lif_sequence,
    lif_sequence_backward,
    lif_sequence_twin,
    surrogate_deriv,
    surrogate_value,
)

__version__ = "0.1.0"
