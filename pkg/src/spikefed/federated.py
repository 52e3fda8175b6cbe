"""Federated orchestration: proximal local updates, weighted aggregation,
round loop, and the four-regime experiment runner.

Regimes pair an orchestration mode with a backbone. Personalized (pfl-*)
clients keep their own parameters between rounds and regularize toward the
global reference with strength mu; plain (fl-*) clients are reset to the
global parameters each round and train without the proximal term. With
mu = 0 and warm starts disabled, the personalized code path reproduces the
plain one bit for bit; that reduction is a tested invariant, not a separate
implementation.

All randomness is drawn from named streams keyed by (master seed, purpose,
client, round), so client execution order, regime order, and process
scheduling cannot change any result.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics, rng
from .data import ClientPartition
from .errors import ConfigError, DimensionError, ProtocolError
from .models import ArchitectureSpec, Model, build_model, default_architecture
from .spiking import LIFConfig

REGIMES = ("pfl-snn", "pfl-ann", "fl-snn", "fl-ann")

_GRAD_CHUNK = 160   # full-batch gradient accumulation chunk (memory bound)


@dataclass(frozen=True)
class TrainConfig:
    """Local-update hyperparameters plus the regime selector.

    ``warm_start`` defaults to the regime's natural behavior (True for
    personalized regimes); overriding it exists for equivalence testing.
    """

    learning_rate: float = 0.01
    batch_size: int = 64
    local_epochs: int = 2
    mu: float = 1e-5
    rounds: int = 30
    regime: str = "pfl-snn"
    warm_start: bool = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}",
                              path="train.learning_rate")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}",
                              path="train.batch_size")
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be >= 1, got {self.local_epochs}",
                              path="train.local_epochs")
        if self.mu < 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}", path="train.mu")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}",
                              path="train.rounds")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}",
                              path="train.regime")

    @property
    def personalized(self):
        return self.regime.startswith("pfl")

    @property
    def spiking(self):
        return self.regime.endswith("snn")

    @property
    def prox_mu(self):
        return self.mu if self.personalized else 0.0

    @property
    def warm(self):
        return self.personalized if self.warm_start is None else self.warm_start


@dataclass
class ClientState:
    """One client: its data partition, its model (parameters included), and
    its aggregation weight. Gradient evaluations chunk the batch dimension
    to bound peak memory on full-batch calls."""

    client_id: int
    partition: ClientPartition
    model: Model
    p_k: float = 0.0
    master_seed: int = 0
    last_train_loss: float = field(default=None, repr=False)

    def __post_init__(self):
        if self.partition.num_train < 1:
            raise ConfigError(f"client {self.client_id} has no training data",
                              path=f"clients[{self.client_id}]")
        self._x = self.partition.train_x.astype(np.float64)
        self._y = self.partition.train_y.astype(np.int64)
        self._test_x = self.partition.test_x.astype(np.float64)
        self._test_y = self.partition.test_y.astype(np.int64)

    @property
    def n(self):
        return self._x.shape[0]

    def batch_stream(self, round_idx):
        return rng.stream(self.master_seed, rng.BATCH, self.client_id, round_idx)

    def params(self):
        return self.model.flatten()

    def set_params(self, vec):
        self.model.load_flat(vec)

    def _grad_at_current(self, x, y):
        total = x.shape[0]
        g = np.zeros_like(self.model.theta)
        for lo in range(0, total, _GRAD_CHUNK):
            xs, ys = x[lo:lo + _GRAD_CHUNK], y[lo:lo + _GRAD_CHUNK]
            _, cache = self.model.forward_loss(xs, ys)
            g += (xs.shape[0] / total) * self.model.backward(cache).grads
        return g

    def _with_params(self, theta, fn):
        if theta is None:
            return fn()
        saved = self.model.flatten()
        self.model.load_flat(np.asarray(theta, dtype=np.float64))
        try:
            return fn()
        finally:
            self.model.load_flat(saved)

    def eval_gradient(self, theta=None, idx=None):
        """Mean train-set gradient at theta (default: current params)."""
        x = self._x if idx is None else self._x[idx]
        y = self._y if idx is None else self._y[idx]
        return self._with_params(theta, lambda: self._grad_at_current(x, y))

    def sample_gradient(self, theta=None, gen=None, batch_size=None):
        """Mini-batch gradient at theta; indices drawn from gen without
        replacement. gen=None or a covering batch size falls back to the
        full batch."""
        if gen is None or batch_size is None or batch_size >= self.n:
            return self.eval_gradient(theta)
        idx = gen.choice(self.n, size=int(batch_size), replace=False)
        return self.eval_gradient(theta, idx=idx)

    def accuracy(self, params=None):
        """Test accuracy (and mean firing rate for spiking backbones),
        evaluated at ``params`` without disturbing the client's own state."""
        def run():
            pred = self.model.predict(self._test_x)
            acc = float(np.mean(pred.labels == self._test_y))
            return acc, pred.rho_bar
        return self._with_params(params, run)


@dataclass
class ServerState:
    """Global reference parameters plus the aggregation roster."""

    params: np.ndarray
    weights: dict
    round: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if not self.weights:
            raise ProtocolError("server roster is empty")
        total = math.fsum(self.weights.values())
        if abs(total - 1.0) > 1e-12:
            raise ProtocolError(
                f"aggregation weights sum to {total!r}, expected 1")
        if any(w <= 0 for w in self.weights.values()):
            raise ProtocolError("aggregation weights must be positive")


def client_weights(partitions):
    """p_k = |D_k| / |D| over the train splits, keyed by client id."""
    total = sum(p.num_train for p in partitions)
    return {p.client_id: p.num_train / total for p in partitions}


def prox_step(params, grad, anchor, lr, mu):
    """One proximal SGD step: params - lr * (grad + mu * (params - anchor)).

    mu = 0 skips the anchor term entirely so the result is bitwise equal to
    a plain SGD step (adding a zero vector can flip signed zeros).
    """
    if mu != 0.0:
        return params - lr * (grad + mu * (params - anchor))
    return params - lr * grad


def local_update(client, w_global, cfg, round_idx=0):
    """E epochs of proximal mini-batch SGD from the client's current
    parameters, anchored at w_global. Returns the new parameter vector;
    w_global is never mutated."""
    if client.n < 1:
        raise ConfigError(f"client {client.client_id} has an empty dataset",
                          path=f"clients[{client.client_id}]")
    w_global = np.asarray(w_global, dtype=np.float64)
    if w_global.shape != client.model.theta.shape:
        raise ProtocolError(
            f"global params have {w_global.size} entries, client model has "
            f"{client.model.theta.size}")
    model = client.model
    mu, lr = cfg.prox_mu, cfg.learning_rate
    gen = client.batch_stream(round_idx)
    losses = []
    for _ in range(cfg.local_epochs):
        order = gen.permutation(client.n)
        for lo in range(0, client.n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss, cache = model.forward_loss(client._x[idx], client._y[idx])
            g = model.backward(cache).grads
            model.theta[:] = prox_step(model.theta, g, w_global, lr, mu)
            model.mark_updated()
            losses.append(loss)
    client.last_train_loss = float(np.mean(losses))
    return model.flatten()


def aggregate(server, updates):
    """Weighted sum over updates in ascending client-id order. A consensus
    of bitwise-identical updates returns that vector unchanged, which makes
    aggregation exactly idempotent."""
    expected = set(server.weights)
    got = set(updates)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        parts = []
        if missing:
            parts.append(f"missing clients {missing}")
        if extra:
            parts.append(f"unknown clients {extra}")
        raise ProtocolError("aggregation roster mismatch: " + ", ".join(parts))
    size = server.params.size
    for k in sorted(updates):
        if np.asarray(updates[k]).shape != server.params.shape:
            raise ProtocolError(
                f"client {k} update has shape {np.asarray(updates[k]).shape}, "
                f"expected {server.params.shape}")
    ids = sorted(updates)
    first = updates[ids[0]]
    if all(np.array_equal(updates[k], first) for k in ids[1:]):
        return np.array(first, dtype=np.float64, copy=True)
    acc = np.zeros(size, dtype=np.float64)
    for k in ids:
        acc += server.weights[k] * updates[k]
    return acc


@dataclass
class RoundMetrics:
    regime: str
    round: int
    train_loss: dict
    accuracy: dict
    weighted_accuracy: float
    rho_bar: dict = None   # per-client mean firing rate, spiking only


def run_round(server, clients, cfg, round_idx=None):
    """One synchronous round: local updates, aggregation, evaluation.

    Personalized regimes warm-start each client from its own parameters and
    evaluate those; plain regimes reset clients to the global parameters and
    evaluate the freshly aggregated model.
    """
    r = server.round if round_idx is None else round_idx
    ordered = sorted(clients, key=lambda c: c.client_id)
    updates = {}
    for c in ordered:
        if not cfg.warm:
            c.set_params(server.params)
        updates[c.client_id] = local_update(c, server.params, cfg, round_idx=r)
    new_global = aggregate(server, updates)
    server.params = new_global
    server.round = r + 1

    losses, accs, rhos = {}, {}, {}
    for c in ordered:
        losses[c.client_id] = c.last_train_loss
        if cfg.personalized:
            acc, rho = c.accuracy()
        else:
            acc, rho = c.accuracy(params=new_global)
        accs[c.client_id] = acc
        if rho is not None:
            rhos[c.client_id] = rho
    weighted = math.fsum(server.weights[k] * accs[k] for k in sorted(accs))
    return RoundMetrics(
        regime=cfg.regime,
        round=r,
        train_loss=losses,
        accuracy=accs,
        weighted_accuracy=weighted,
        rho_bar=rhos if rhos else None,
    )


# ---------------------------------------------------------------------------
# experiment runner


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything run_experiment needs beyond the data source."""

    train: TrainConfig
    regimes: tuple = REGIMES
    seed: int = 0
    lif: LIFConfig = None
    layers: tuple = None         # LayerSpec sequence; None picks the default
    diag_cadence: int = 10
    prox_steps: int = 50
    diagnostics_enabled: bool = True

    def __post_init__(self):
        if self.lif is None:
            object.__setattr__(self, "lif", LIFConfig())
        if not self.regimes:
            raise ConfigError("no regimes selected", path="regimes")
        for reg in self.regimes:
            if reg not in REGIMES:
                raise ConfigError(f"unknown regime {reg!r}", path="regimes")
        if self.diag_cadence < 1:
            raise ConfigError("diagnostics cadence must be >= 1",
                              path="diagnostics.cadence")
        if self.prox_steps < 1:
            raise ConfigError("prox_steps must be >= 1",
                              path="diagnostics.prox_steps")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative", path="seed")


@dataclass
class RegimeResult:
    regime: str
    rounds: list
    drift: list
    envelope: list
    constants: object
    final_global: np.ndarray
    final_clients: dict


@dataclass
class ExperimentResult:
    arch: object
    lif: LIFConfig
    partitions: list
    regimes: dict


def _clone_model(proto):
    m = Model(proto.arch, backbone=proto.backbone, lif=proto.lif)
    m.load_flat(proto.theta)
    return m


def _diag_rounds(total, cadence):
    marks = {r for r in range(total) if (r + 1) % cadence == 0}
    marks.add(0)
    marks.add(total - 1)
    return marks


def run_experiment(plan, data_cfg, record=None):
    """Run every selected regime from one model seed and one data partition.

    ``record``, when given, is called as record(metrics: RoundMetrics) after
    each round, so long runs can stream progress. Identical plans and data
    produce identical results, bit for bit.
    """
    partitions = data_cfg.load(plan.seed)
    geometry = dict(
        input_channels=partitions[0].channels,
        input_length=partitions[0].length,
        num_classes=partitions[0].num_classes,
    )
    if plan.layers is None:
        arch = default_architecture(**geometry)
    else:
        try:
            arch = ArchitectureSpec(layers=plan.layers, **geometry)
        except DimensionError as exc:
            raise ConfigError(str(exc), path="model.architecture") from exc
    weights = client_weights(partitions)
    total_rounds = plan.train.rounds
    diag_rounds = _diag_rounds(total_rounds, plan.diag_cadence)

    results = {}
    for regime in plan.regimes:
        backbone = "snn" if regime.endswith("snn") else "ann"
        proto = build_model(arch, plan.seed, backbone=backbone, lif=plan.lif)
        clients = [
            ClientState(
                client_id=p.client_id,
                partition=p,
                model=_clone_model(proto),
                p_k=weights[p.client_id],
                master_seed=plan.seed,
            )
            for p in partitions
        ]
        server = ServerState(params=proto.flatten(), weights=dict(weights))
        cfg = replace(plan.train, regime=regime)

        rounds, drifts, envelopes, snapshots = [], [], [], []
        for r in range(total_rounds):
            metrics = run_round(server, clients, cfg, round_idx=r)
            rounds.append(metrics)
            if record is not None:
                record(metrics)
            if plan.diagnostics_enabled and r in diag_rounds:
                w = server.params.copy()
                grads = [c.eval_gradient(w) for c in clients]
                rho = None
                if metrics.rho_bar:
                    rho = math.fsum(server.weights[k] * v
                                    for k, v in sorted(metrics.rho_bar.items()))
                dr = diagnostics.drift_from_gradients(
                    grads, [c.p_k for c in clients], round_idx=r, rho_bar=rho)
                drifts.append(dr)
                envelopes.append(diagnostics.envelope_grad_proxy(
                    w, clients, cfg.prox_mu,
                    prox_steps=plan.prox_steps,
                    step0=cfg.learning_rate / 5.0,
                    batch_size=cfg.batch_size,
                    round_idx=r,
                    seed=plan.seed,
                ))
                gbar = np.zeros_like(w)
                for c, g in zip(clients, grads):
                    gbar += c.p_k * g
                var_samples = []
                for c, g_full in zip(clients, grads):
                    gen = rng.stream(plan.seed, rng.PROBE, c.client_id, r)
                    g_mb = c.sample_gradient(w, gen, cfg.batch_size)
                    var_samples.append(float(np.sum((g_mb - g_full) ** 2)))
                snapshots.append({
                    "round": r,
                    "params": w,
                    "mean_gradient": gbar,
                    "grad_norms": dr.grad_norms,
                    "rho_bar": rho,
                    "variance_samples": var_samples,
                })
        constants = diagnostics.estimate_constants(snapshots, eta=plan.lif.eta)
        results[regime] = RegimeResult(
            regime=regime,
            rounds=rounds,
            drift=drifts,
            envelope=envelopes,
            constants=constants,
            final_global=server.params.copy(),
            final_clients={c.client_id: c.params() for c in clients},
        )
    return ExperimentResult(
        arch=arch, lif=plan.lif, partitions=partitions, regimes=results)
