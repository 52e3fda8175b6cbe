"""Command-line experiment runner.

Subcommands:
    run       execute the configured regime matrix and write artifacts
    validate  check a config and print the fully resolved tree
    gen-data  synthesize partitions and export them as a container file
    energy    offline energy report from saved parameters and the config

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

A run writes into the output directory:
    metrics.jsonl         streaming per-round records (includes wall-clock)
    accuracy.csv          accuracy per (regime, round, client) plus mean rows
    drift.csv             drift and envelope diagnostics per eval round
    energy_summary.json   measured-rate energy comparison (spiking runs)
    resolved_config.json  snapshot that reproduces the run exactly
    params/               final parameter vectors per regime and client

Summary artifacts are written to a temporary name and renamed, so a crash
never leaves a partial file; the metrics stream is the deliberate exception
(append-per-round, safe to tail).
"""

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import backend as backend_mod
from .config import load_config, resolve
from .energy import count_ops, estimate_energy, measure_rates
from .errors import ConfigError, IngestError, ProtocolError, UsageError
from .federated import run_experiment
from .models import ArchitectureSpec, Model, default_architecture


def _atomic_write(path, data):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _save_params(path, vec):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".npy")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.save(fh, vec)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="spikefed",
        description="Personalized federated learning over spiking networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured experiment matrix")
    run.add_argument("--config", default="default",
                     help="config file path or builtin name (default, smoke)")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--regimes",
                     help="comma-separated subset, e.g. pfl-snn,fl-snn")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--rounds", type=int, help="override the round count")

    val = sub.add_parser("validate", help="validate a config without running")
    val.add_argument("--config", default="default")

    gen = sub.add_parser("gen-data", help="export synthetic data as a container")
    gen.add_argument("--config", default="default")
    gen.add_argument("--out", required=True, help="container file to write")
    gen.add_argument("--seed", type=int)

    eng = sub.add_parser("energy", help="energy report from saved parameters")
    eng.add_argument("--config", default="default")
    eng.add_argument("--model", required=True,
                     help=".npy file with a flat parameter vector")
    eng.add_argument("--out", help="write the JSON report here (default: stdout)")
    return parser


def _overrides(args):
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "rounds", None) is not None:
        over.setdefault("train", {})["rounds"] = args.rounds
    if getattr(args, "regimes", None):
        over["regimes"] = [tok.strip().lower()
                           for tok in args.regimes.split(",") if tok.strip()]
    if getattr(args, "out", None):
        over["output_dir"] = args.out
    return over


def _architecture(rc, partitions):
    geometry = dict(
        input_channels=partitions[0].channels,
        input_length=partitions[0].length,
        num_classes=partitions[0].num_classes,
    )
    if rc.layers is None:
        return default_architecture(**geometry)
    return ArchitectureSpec(layers=rc.layers, **geometry)


def _cmd_run(args):
    rc = resolve(load_config(args.config), _overrides(args))
    rc.tree["backend"] = backend_mod.use(rc.backend)
    outdir = rc.output_dir
    os.makedirs(os.path.join(outdir, "params"), exist_ok=True)

    started = time.time()
    metrics_path = os.path.join(outdir, "metrics.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as stream:
        def emit(regime, round_idx, client, metric, value):
            stream.write(json.dumps({
                "regime": regime,
                "round": round_idx,
                "client": client,
                "metric": metric,
                "value": value,
                "wall_clock": round(time.time() - started, 3),
            }, sort_keys=True) + "\n")

        def record(m):
            for k in sorted(m.train_loss):
                emit(m.regime, m.round, k, "train_loss", m.train_loss[k])
            for k in sorted(m.accuracy):
                emit(m.regime, m.round, k, "test_accuracy", m.accuracy[k])
            if m.rho_bar:
                for k in sorted(m.rho_bar):
                    emit(m.regime, m.round, k, "rho_bar", m.rho_bar[k])
            emit(m.regime, m.round, "server", "weighted_accuracy",
                 m.weighted_accuracy)
            stream.flush()

        result = run_experiment(rc.plan(), rc.data_config(), record=record)

    _write_accuracy_csv(os.path.join(outdir, "accuracy.csv"), result)
    _write_drift_csv(os.path.join(outdir, "drift.csv"), result)
    _write_json(os.path.join(outdir, "energy_summary.json"),
                _energy_summary(rc, result))
    _atomic_write(os.path.join(outdir, "resolved_config.json"), rc.to_json())
    for regime, reg in result.regimes.items():
        tag = regime.replace("-", "_")
        _save_params(os.path.join(outdir, "params", f"{tag}_global.npy"),
                     reg.final_global)
        for k, vec in sorted(reg.final_clients.items()):
            _save_params(
                os.path.join(outdir, "params", f"{tag}_client{k}.npy"), vec)

    for regime in rc.regimes:
        final = result.regimes[regime].rounds[-1]
        print(f"{regime}: final weighted accuracy "
              f"{final.weighted_accuracy:.4f} over {final.round + 1} rounds")
    print(f"artifacts written to {outdir}")
    return 0


def _write_accuracy_csv(path, result):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["regime", "round", "client", "accuracy"])
    for regime in result.regimes.values():
        for m in regime.rounds:
            for k in sorted(m.accuracy):
                writer.writerow([m.regime, m.round, k, f"{m.accuracy[k]:.10f}"])
            writer.writerow([m.regime, m.round, "mean",
                             f"{m.weighted_accuracy:.10f}"])
    _atomic_write(path, buf.getvalue())


def _write_drift_csv(path, result):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["regime", "round", "delta", "g_hat", "bound_general",
                     "rho_bar", "holds", "jensen_holds", "envelope_proxy_norm"])
    for regime in result.regimes.values():
        for dr, er in zip(regime.drift, regime.envelope):
            writer.writerow([
                regime.regime, dr.round,
                f"{dr.delta:.12e}", f"{dr.g_hat:.12e}",
                f"{dr.bound_general:.12e}",
                "" if dr.rho_bar is None else f"{dr.rho_bar:.8f}",
                int(dr.holds), int(dr.jensen_holds),
                f"{er.proxy_norm:.12e}",
            ])
    _atomic_write(path, buf.getvalue())


def _energy_summary(rc, result):
    spiking = [r for r in ("pfl-snn", "fl-snn") if r in result.regimes]
    if not spiking:
        return {"skipped": "no spiking regime in this run"}
    regime = spiking[0]
    lif = result.lif
    model = Model(result.arch, backbone="snn", lif=lif)
    model.load_flat(result.regimes[regime].final_global)
    eval_x = np.concatenate(
        [p.test_x for p in result.partitions]).astype(np.float64)
    rates, rho_bar = measure_rates(model, eval_x)
    report = estimate_energy(
        count_ops(result.arch), rates, lif.steps,
        constants=rc.energy_constants())
    out = report.to_dict()
    out.update({
        "source_regime": regime,
        "measured_rho_bar": float(rho_bar),
        "eval_samples": int(eval_x.shape[0]),
    })
    return out


def _cmd_validate(args):
    rc = resolve(load_config(args.config))
    print("valid")
    print(rc.to_json(), end="")
    return 0


def _cmd_gen_data(args):
    rc = resolve(load_config(args.config), _overrides(args))
    data_cfg = rc.data_config()
    if data_cfg.source != "synthetic":
        raise ConfigError("gen-data requires a synthetic data source",
                          path="data.source")
    partitions = data_cfg.load(rc.seed)
    from .data import export_container
    export_container(partitions, args.out)
    total = sum(p.num_train + p.num_test for p in partitions)
    print(f"wrote {len(partitions)} clients, {total} samples to {args.out}")
    return 0


def _cmd_energy(args):
    rc = resolve(load_config(args.config))
    backend_mod.use(rc.backend)
    params = np.load(args.model)
    partitions = rc.data_config().load(rc.seed)
    arch = _architecture(rc, partitions)
    model = Model(arch, backbone="snn", lif=rc.lif_config())
    model.load_flat(params)
    eval_x = np.concatenate([p.test_x for p in partitions]).astype(np.float64)
    rates, rho_bar = measure_rates(model, eval_x)
    report = estimate_energy(count_ops(arch), rates, rc.lif_config().steps,
                             constants=rc.energy_constants())
    out = report.to_dict()
    out.update({"measured_rho_bar": float(rho_bar),
                "eval_samples": int(eval_x.shape[0])})
    if args.out:
        _write_json(args.out, out)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(out, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "validate": _cmd_validate,
    "gen-data": _cmd_gen_data,
    "energy": _cmd_energy,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, ProtocolError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
