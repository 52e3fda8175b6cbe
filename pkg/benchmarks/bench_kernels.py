#!/usr/bin/env python3
"""Timing comparison of the compiled kernel backend against the numpy
fallback, over the shapes the default training configuration actually hits.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--batch B]

Prints a table of per-call wall times and the speedup factor. Numbers are
medians over `--repeats` timed batches, each batch sized so a single
measurement stays well above timer resolution.
"""

import argparse
import timeit

import numpy as np

from spikefed import backend

# (label, kernel name, argument builder). Shapes mirror the default
# architecture on batch-size inputs: conv 8ch x 128 -> 16ch, the wide dense
# contraction 928 -> 64, and LIF sequences over T * batch rows.


def _cases(batch, steps):
    gen = np.random.default_rng(0)

    def c(a):
        return np.ascontiguousarray(np.asarray(a, dtype=np.float64))

    x_conv = c(gen.normal(size=(batch * steps, 8, 128)))
    k_conv = c(gen.normal(size=(16, 8, 7)))
    lo = (128 - 7) // 2 + 1
    gy_conv = c(gen.normal(size=(batch * steps, 16, lo)))

    x_dense = c(gen.normal(size=(batch * steps, 928)))
    w_dense = c(gen.normal(size=(64, 928)))
    gy_dense = c(gen.normal(size=(batch * steps, 64)))

    neurons = 976
    drive = c(gen.normal(size=(steps, batch * neurons)))
    gates = c(gen.integers(0, 2, size=(steps, batch * neurons)))
    gs = c(gen.normal(size=(steps, batch * neurons)))

    return [
        ("conv1d forward 8x128->16", "conv1d_forward",
         (x_conv, k_conv, 2)),
        ("conv1d kernel grad", "conv1d_grad_kernel",
         (x_conv, gy_conv, 2, 7)),
        ("conv1d input grad", "conv1d_grad_input",
         (k_conv, gy_conv, 2, 128)),
        ("dense forward 928->64", "dense_forward",
         (x_dense, w_dense)),
        ("dense weight grad", "dense_grad_weight",
         (x_dense, gy_dense)),
        ("dense input grad", "dense_grad_input",
         (w_dense, gy_dense)),
        (f"lif forward T={steps}", "lif_forward",
         (drive, 0.5, 1.0)),
        (f"lif backward T={steps}", "lif_backward",
         (drive, gates, gs, 0.5, 1.0, 2.0)),
    ]


def _time_call(fn, args, repeats):
    # choose an inner count so each sample takes >= ~2 ms
    once = timeit.timeit(lambda: fn(*args), number=1)
    inner = max(1, int(0.002 / max(once, 1e-9)))
    samples = [timeit.timeit(lambda: fn(*args), number=inner) / inner
               for _ in range(repeats)]
    return float(np.median(samples))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timed samples per kernel (default 7)")
    parser.add_argument("--batch", type=int, default=64,
                        help="batch size for the shapes (default 64)")
    parser.add_argument("--steps", type=int, default=6,
                        help="spiking time steps (default 6)")
    args = parser.parse_args()

    names = backend.available()
    if len(names) < 2:
        print("compiled backend not built; only the numpy fallback is "
              "available, nothing to compare")
        return 1
    mods = {name: backend.load(name) for name in names}

    cases = _cases(args.batch, args.steps)
    width = max(len(label) for label, _, _ in cases)
    header = f"{'kernel':<{width}}  " + "".join(f"{n:>12}" for n in names)
    print(header + f"{'speedup':>10}")
    print("-" * len(header + f"{'speedup':>10}"))
    for label, kernel, call_args in cases:
        times = {}
        for name in names:
            fn = getattr(mods[name], kernel)
            times[name] = _time_call(fn, call_args, args.repeats)
        base = times["python"]
        best = min(n for n in names if n != "python")
        row = f"{label:<{width}}  "
        row += "".join(f"{times[n] * 1e3:>10.3f}ms" for n in names)
        row += f"{base / times[best]:>9.2f}x"
        print(row)
    print(f"\nshapes: batch {args.batch}, {args.steps} time steps; "
          f"medians over {args.repeats} samples")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
