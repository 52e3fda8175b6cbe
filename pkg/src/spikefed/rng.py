"""Named deterministic RNG streams.

Every random draw in the package comes from a PCG64 generator keyed by
(master seed, stream tag, *ids). Streams are independent of regime and
backbone so that, e.g., batch order at (client, round) is identical across
the four regimes, which is what makes the FL/PFL reduction bitwise.
"""

import numpy as np

INIT = 1       # (INIT, layer_index): model weight initialization
DATA = 2       # (DATA, ...): synthetic generator streams
BATCH = 3      # (BATCH, client, round): mini-batch order
ENVELOPE = 4   # (ENVELOPE, client, round): envelope inner solver batches
PROBE = 5      # (PROBE, client, round): variance-probe mini-batch


def stream(master_seed, *key):
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
