"""Runtime measurements of the quantities the training analysis is built on:
gradient dissimilarity across clients (drift), its firing-rate-scaled bound,
a smoothed-objective stationarity proxy, and empirical constant estimates.

Clients are duck-typed here: anything exposing ``p_k``, ``eval_gradient(w)``
and ``sample_gradient(w, gen, batch_size)`` works, which keeps the toy
problems in the test suite on exactly the code paths the trainer uses.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

# Relative slack for the Jensen check only; it guards against rounding on
# the equality case (all client gradients identical), not against violations.
_JENSEN_EPS = 1e-12


@dataclass
class DriftReport:
    round: int
    delta: float
    grad_norms: list
    g_hat: float
    bound_general: float
    rho_bar: float
    holds: bool
    jensen_holds: bool

    def to_dict(self):
        return {
            "round": int(self.round),
            "delta": float(self.delta),
            "grad_norms": [float(g) for g in self.grad_norms],
            "g_hat": float(self.g_hat),
            "bound_general": float(self.bound_general),
            "rho_bar": None if self.rho_bar is None else float(self.rho_bar),
            "holds": bool(self.holds),
            "jensen_holds": bool(self.jensen_holds),
        }


def drift_from_gradients(grads, weights, round_idx=0, rho_bar=None):
    """Drift report from per-client gradients already evaluated at one w."""
    if len(grads) == 0:
        raise DimensionError("need at least one client gradient")
    if len(weights) != len(grads):
        raise DimensionError("one weight per gradient required")
    shape = grads[0].shape
    for i, g in enumerate(grads):
        if g.shape != shape:
            raise DimensionError(
                f"gradient {i} has shape {g.shape}, expected {shape}")
    weights = np.asarray(weights, dtype=np.float64)
    gbar = np.zeros(shape)
    for w_k, g in zip(weights, grads):
        gbar += w_k * g
    delta = float(sum(w_k * np.sum((g - gbar) ** 2)
                      for w_k, g in zip(weights, grads)))
    norms = [float(np.linalg.norm(g)) for g in grads]
    g_hat = max(norms)
    bound = 4.0 * g_hat * g_hat
    sq_mean = float(np.sum(gbar ** 2))
    sq_each = float(np.dot(weights, [n * n for n in norms]))
    jensen = sq_mean <= sq_each + _JENSEN_EPS * max(1.0, sq_each)
    return DriftReport(
        round=round_idx,
        delta=delta,
        grad_norms=norms,
        g_hat=g_hat,
        bound_general=bound,
        rho_bar=rho_bar,
        holds=delta <= bound,
        jensen_holds=jensen,
    )


def drift_metric(clients, w, eval_batches=None, round_idx=0, rho_bar=None):
    """Weighted gradient dissimilarity at the shared parameter point w.

    Every client evaluates its gradient at the *same* w, full-batch by
    default or over the optional per-client index arrays in eval_batches.
    """
    w = np.asarray(w, dtype=np.float64)
    grads = []
    for i, c in enumerate(clients):
        idx = None if eval_batches is None else eval_batches[i]
        grads.append(np.asarray(c.eval_gradient(w, idx=idx), dtype=np.float64))
    weights = [c.p_k for c in clients]
    return drift_from_gradients(grads, weights, round_idx=round_idx,
                                rho_bar=rho_bar)


@dataclass
class SparsityBound:
    bound_rho: float
    c_hat: float
    rho: float
    holds: bool
    flagged: bool   # rho == 0 while gradients are nonzero

    def to_dict(self):
        return {
            "bound_rho": float(self.bound_rho),
            "c_hat": float(self.c_hat),
            "rho": float(self.rho),
            "holds": bool(self.holds),
            "flagged": bool(self.flagged),
        }


def drift_sparsity_bound(drift, c_hat, rho):
    """Firing-rate-scaled drift bound 4 * c_hat^2 * rho.

    A zero rate with nonzero gradients is flagged rather than rejected: the
    readout path carries gradient even when every hidden neuron is silent.
    """
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    c_hat = float(c_hat)
    if c_hat < 0.0:
        raise ValueError(f"c_hat must be non-negative, got {c_hat}")
    bound = 4.0 * c_hat * c_hat * rho
    flagged = rho == 0.0 and drift.g_hat > 0.0
    return SparsityBound(
        bound_rho=bound,
        c_hat=c_hat,
        rho=rho,
        holds=drift.delta <= bound,
        flagged=flagged,
    )


# ---------------------------------------------------------------------------
# envelope-gradient proxy


@dataclass
class EnvelopeReport:
    round: int
    proxy_norm: float
    mu: float
    prox_points: list = None   # per-client approximate prox solutions

    def to_dict(self):
        return {
            "round": int(self.round),
            "proxy_norm": float(self.proxy_norm),
            "mu": float(self.mu),
        }


def prox_point(client, w, mu, steps, step0, gen=None, batch_size=None):
    """Approximate argmin_v F_k(v) + (mu/2)||v - w||^2 by SGD from w.

    Step size decays as step0 / (1 + t/10). With gen=None the client's
    full-batch gradient is used at every step.
    """
    w = np.asarray(w, dtype=np.float64)
    v = w.copy()
    for t in range(int(steps)):
        g = client.sample_gradient(v, gen, batch_size)
        lr = step0 / (1.0 + t / 10.0)
        v -= lr * (g + mu * (v - w))
    return v


def envelope_grad_proxy(server_or_params, clients, mu, prox_steps=50,
                        step0=0.002, batch_size=None, round_idx=0, seed=0):
    """Stationarity proxy mu * sum_k p_k (w - w_hat_k) of the smoothed
    objective, with w_hat_k from the inner prox solver. mu = 0 short-circuits
    to an exactly zero proxy."""
    from . import rng

    w = getattr(server_or_params, "params", server_or_params)
    w = np.asarray(w, dtype=np.float64)
    mu = float(mu)
    if mu == 0.0:
        return EnvelopeReport(round=round_idx, proxy_norm=0.0, mu=0.0)
    points = []
    proxy = np.zeros_like(w)
    for k, c in enumerate(clients):
        gen = rng.stream(seed, rng.ENVELOPE, k, round_idx)
        what = prox_point(c, w, mu, prox_steps, step0, gen=gen,
                          batch_size=batch_size)
        points.append(what)
        proxy += c.p_k * (w - what)
    proxy *= mu
    return EnvelopeReport(
        round=round_idx,
        proxy_norm=float(np.linalg.norm(proxy)),
        mu=mu,
        prox_points=points,
    )


# ---------------------------------------------------------------------------
# empirical constants


@dataclass
class ConstantsSnapshot:
    c_phi: float = None
    g_hat: float = None
    c_hat: float = None
    sigma2_hat: float = None
    l_hat: float = None
    num_snapshots: int = 0

    @property
    def empty(self):
        return self.num_snapshots < 2

    def to_dict(self):
        out = {"num_snapshots": int(self.num_snapshots)}
        for key in ("c_phi", "g_hat", "c_hat", "sigma2_hat", "l_hat"):
            val = getattr(self, key)
            out[key] = None if val is None else float(val)
        return out


def estimate_constants(snapshots, eta=2.0):
    """Empirical stand-ins for the analysis constants, from run history.

    Each snapshot is a dict with keys "round", "params", "mean_gradient",
    "grad_norms", and optionally "rho_bar" and "variance_samples" (squared
    deviations of mini-batch gradients from the full-batch gradient).
    Fewer than two snapshots yield an empty report.
    """
    n = len(snapshots)
    if n < 2:
        return ConstantsSnapshot(num_snapshots=n)

    g_hat = max(max(s["grad_norms"]) for s in snapshots)

    var_pool = [v for s in snapshots for v in s.get("variance_samples") or []]
    sigma2 = float(np.mean(var_pool)) if var_pool else 0.0

    l_hat = 0.0
    for a, b in zip(snapshots, snapshots[1:]):
        dw = float(np.linalg.norm(b["params"] - a["params"]))
        if dw < 1e-15:
            continue
        dg = float(np.linalg.norm(b["mean_gradient"] - a["mean_gradient"]))
        l_hat = max(l_hat, dg / dw)

    c_hat = None
    for s in snapshots:
        rho = s.get("rho_bar")
        if rho is not None and rho > 0.0:
            cand = max(s["grad_norms"]) / np.sqrt(rho)
            c_hat = cand if c_hat is None else max(c_hat, cand)

    return ConstantsSnapshot(
        c_phi=eta / 2.0,
        g_hat=float(g_hat),
        c_hat=None if c_hat is None else float(c_hat),
        sigma2_hat=sigma2,
        l_hat=float(l_hat),
        num_snapshots=n,
    )
