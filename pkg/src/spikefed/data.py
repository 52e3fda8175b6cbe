"""Per-client datasets: synthetic multichannel-signal generator and a flat
binary container for preprocessed recordings.

The generator builds one base pattern of band-limited oscillations (one
frequency/phase pair per channel, plus a weaker second harmonic); class c
is that pattern rotated by c channel steps, plus a faint class-specific
high-band tone. Clients become statistically distinct through a mixing
matrix (1 - b) * I + b * R_k, where R_k rolls channels by a client-specific
offset on the same lattice the classes live on and the blend b grows
linearly with the heterogeneity knob theta. theta=0 gives identical
clients; as theta approaches _BALANCE_THETA, mirrored-rotation clients emit
near-identical signals under different labels and only the tone separates
them globally, while every client stays cleanly separable on its own.
Client 0 always mixes with the identity and serves as the reference
distribution. Amplitude gain and additive noise at the configured SNR are
applied per client.

Container layout (all little-endian):
    magic b"SFED" | version u16 | num_clients u16
    per client: train_count u32, test_count u32
    channels u16 | length u32 | num_classes u16
    then per client, train records followed by test records,
    one record = label u16 + channels*length float32 values.
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DimensionError, IngestError

MAGIC = b"SFED"
VERSION = 1


@dataclass
class ClientPartition:
    """One client's train/test split. Arrays are float32 [N, C, L] signals
    and int64 labels; mixing/gain describe how the client was synthesized
    (None for ingested data)."""

    client_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    mixing: np.ndarray = None
    gain: float = None

    def __post_init__(self):
        for name in ("train", "test"):
            x = getattr(self, name + "_x")
            y = getattr(self, name + "_y")
            if x.ndim != 3:
                raise ValueError(f"{name} signals must be [N, C, L], got {x.shape}")
            if x.shape[0] == 0:
                raise ValueError(f"{name} split is empty")
            if y.shape != (x.shape[0],):
                raise ValueError(
                    f"{name} labels {y.shape} do not match {x.shape[0]} samples")
            if not np.all(np.isfinite(x)):
                raise ValueError(f"{name} signals contain non-finite values")
            if y.min() < 0 or y.max() >= self.num_classes:
                bad = int(y[(y < 0) | (y >= self.num_classes)][0])
                raise ValueError(
                    f"{name} label {bad} out of range [0, {self.num_classes})")
        if self.train_x.shape[1:] != self.test_x.shape[1:]:
            raise ValueError("train/test channel or length mismatch")
        present = np.unique(self.test_y)
        if len(present) != self.num_classes:
            missing = sorted(set(range(self.num_classes)) - set(present.tolist()))
            raise ValueError(f"test split missing classes {missing}")

    @property
    def channels(self):
        return self.train_x.shape[1]

    @property
    def length(self):
        return self.train_x.shape[2]

    @property
    def num_train(self):
        return self.train_x.shape[0]

    @property
    def num_test(self):
        return self.test_x.shape[0]

    def class_histogram(self):
        return (
            np.bincount(self.train_y, minlength=self.num_classes),
            np.bincount(self.test_y, minlength=self.num_classes),
        )


# ---------------------------------------------------------------------------
# synthetic generator


# Relative amplitude of the class-specific high-band tone mixed into every
# template. Each class is a channel rotation of one shared base pattern, and
# client mixing rotates on the same lattice, so one client's class overlaps
# a different class elsewhere; the faint tone is the only mixing-invariant
# class cue. Its weight dials how far a single shared model can get:
# calibrated so a pooled model still learns the task while federated
# averaging over heterogeneous clients clearly lags per-client
# personalization.
_DETAIL = 0.08

# Half-width of the per-client amplitude scaling band at full heterogeneity.
# Kept narrow so overall signal power does not become a client fingerprint.
_GAIN_SPREAD = 0.1

# Heterogeneity level at which a client's own rotation component pulls even
# with the identity component. Clients with mirrored rotations (+r and -r)
# then emit identical signals under different labels, so past this point a
# shared model cannot separate them from channel structure alone and must
# fall back on the faint tone. This is the regime the default config probes.
_BALANCE_THETA = 0.6


def _stratified_labels(n, num_classes, gen):
    counts = [n // num_classes + (1 if i < n % num_classes else 0)
              for i in range(num_classes)]
    labels = np.concatenate([np.full(c, i, dtype=np.int64)
                             for i, c in enumerate(counts)])
    return labels[gen.permutation(n)]


def _client_split(labels, mixed, sigma, gen, channels, length):
    noise = gen.standard_normal((labels.size, channels, length))
    x = mixed[labels] + sigma[labels, None, None] * noise
    return x.astype(np.float32)


def synth_generate(num_clients=3, train_per_client=480, test_per_client=120,
                   channels=8, length=128, num_classes=4, heterogeneity=0.6,
                   snr_db=10.0, seed=0):
    """Deterministic per-seed list of ClientPartition objects."""
    if num_clients < 1:
        raise DimensionError("need at least one client")
    if train_per_client < 1 or test_per_client < 1:
        raise DimensionError("per-client sample counts must be >= 1")
    if channels < 1 or length < 2:
        raise DimensionError("need channels >= 1 and length >= 2")
    if num_classes < 2:
        raise DimensionError("need at least two classes")
    if test_per_client < num_classes:
        raise DimensionError(
            f"test split of {test_per_client} cannot cover {num_classes} classes")
    theta = float(heterogeneity)
    if not 0.0 <= theta <= 1.0:
        raise DimensionError(f"heterogeneity must be in [0, 1], got {theta}")

    gen0 = rng.stream(seed, rng.DATA, 0)
    freqs = np.linspace(4.0, 20.0, channels) + gen0.uniform(-0.5, 0.5, channels)
    phases = gen0.uniform(0.0, 2.0 * np.pi, channels)
    detail_freqs = (np.linspace(24.0, 32.0, num_classes)
                    + gen0.uniform(-0.5, 0.5, num_classes))
    detail_phases = gen0.uniform(0.0, 2.0 * np.pi, (num_classes, channels))
    stride = max(1, channels // num_classes)
    t = np.arange(length) / length

    base = np.empty((channels, length))
    for ch in range(channels):
        wave = (np.sin(2.0 * np.pi * freqs[ch] * t + phases[ch])
                + 0.35 * np.sin(4.0 * np.pi * freqs[ch] * t + 2.0 * phases[ch]))
        base[ch] = wave / np.sqrt(np.mean(wave ** 2))
    norm = np.sqrt(1.0 + _DETAIL ** 2)
    templates = np.empty((num_classes, channels, length))
    for c in range(num_classes):
        for ch in range(channels):
            tone = np.sin(2.0 * np.pi * detail_freqs[c] * t
                          + detail_phases[c, ch])
            tone /= np.sqrt(np.mean(tone ** 2))
            templates[c, ch] = (base[(ch + c * stride) % channels]
                                + _DETAIL * tone) / norm

    eye = np.eye(channels)
    noise_power = 10.0 ** (-snr_db / 10.0)
    # Client k rotates by ceil(k/2) class steps, alternating direction, so
    # successive clients form mirrored (+r, -r) pairs around the identity
    # client. The blend weight reaches 1/2 at theta = _BALANCE_THETA and
    # keeps growing linearly past it.
    blend = min(1.0, 0.5 * theta / _BALANCE_THETA)
    partitions = []
    for k in range(num_clients):
        genk = rng.stream(seed, rng.DATA, 1 + k)
        steps_away = (k + 1) // 2
        direction = 1 if k % 2 == 1 else -1
        rot = (direction * steps_away * stride) % channels
        mix = (1.0 - blend) * eye + blend * np.roll(eye, rot, axis=0)
        gain = 1.0 + _GAIN_SPREAD * theta * genk.uniform(-1.0, 1.0)
        mixed = gain * np.einsum("ij,cjl->cil", mix, templates)
        sigma = np.sqrt(np.mean(mixed ** 2, axis=(1, 2)) * noise_power)

        train_y = _stratified_labels(train_per_client, num_classes, genk)
        train_x = _client_split(train_y, mixed, sigma, genk, channels, length)
        test_y = _stratified_labels(test_per_client, num_classes, genk)
        test_x = _client_split(test_y, mixed, sigma, genk, channels, length)
        partitions.append(ClientPartition(
            client_id=k,
            train_x=train_x, train_y=train_y,
            test_x=test_x, test_y=test_y,
            num_classes=num_classes,
            mixing=mix, gain=float(gain),
        ))
    return partitions


# ---------------------------------------------------------------------------
# container export / ingest


def _record_dtype(channels, length):
    return np.dtype([("label", "<u2"), ("signal", "<f4", (channels, length))])


def export_container(partitions, path):
    """Serialize partitions to the flat binary container, atomically."""
    if not partitions:
        raise DimensionError("nothing to export")
    channels = partitions[0].channels
    length = partitions[0].length
    num_classes = partitions[0].num_classes
    for p in partitions:
        if (p.channels, p.length, p.num_classes) != (channels, length, num_classes):
            raise DimensionError(
                f"client {p.client_id} geometry differs from client "
                f"{partitions[0].client_id}")
    if len(partitions) > 0xFFFF or num_classes > 0xFFFF:
        raise DimensionError("client or class count exceeds container limits")

    parts = [struct.pack("<4sHH", MAGIC, VERSION, len(partitions))]
    for p in partitions:
        parts.append(struct.pack("<II", p.num_train, p.num_test))
    parts.append(struct.pack("<HIH", channels, length, num_classes))

    dtype = _record_dtype(channels, length)
    for p in partitions:
        for x, y in ((p.train_x, p.train_y), (p.test_x, p.test_y)):
            rec = np.empty(x.shape[0], dtype=dtype)
            rec["label"] = y.astype("<u2")
            rec["signal"] = x.astype("<f4")
            parts.append(rec.tobytes())

    blob = b"".join(parts)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".sfed-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _resplit(x, y, fraction, num_classes, gen):
    train_idx, test_idx = [], []
    for c in range(num_classes):
        idx = np.nonzero(y == c)[0]
        if idx.size < 2:
            raise ValueError(
                f"class {c} has {idx.size} samples, cannot split")
        take = int(round(fraction * idx.size))
        take = min(max(take, 1), idx.size - 1)
        order = gen.permutation(idx.size)
        train_idx.append(idx[order[:take]])
        test_idx.append(idx[order[take:]])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return (x[train_idx], y[train_idx], x[test_idx], y[test_idx])


def _normalize(train_x, test_x):
    # Statistics from the train split only; test may keep nonzero mean.
    mean = train_x.astype(np.float64).mean(axis=(0, 2))
    std = train_x.astype(np.float64).std(axis=(0, 2))
    std = np.where(std < 1e-8, 1.0, std)
    norm = lambda a: (((a.astype(np.float64) - mean[None, :, None])
                       / std[None, :, None]).astype(np.float32))
    return norm(train_x), norm(test_x)


def ingest(path, normalize=False, resplit=None, seed=0):
    """Read a container back into ClientPartition objects.

    The default is a verbatim load (bitwise inverse of export_container).
    ``resplit`` re-partitions each client's pooled samples into a new
    stratified train fraction with a seeded shuffle; ``normalize`` then
    standardizes each channel using train-split statistics only.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8:
        raise IngestError(
            f"truncated header: need at least 8 bytes, got {len(data)}",
            byte_offset=len(data))
    magic = data[:4]
    if magic != MAGIC:
        raise IngestError(f"bad magic {magic!r}, expected {MAGIC!r}", byte_offset=0)
    version, num_clients = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise IngestError(f"unsupported container version {version}", byte_offset=4)
    if num_clients == 0:
        raise IngestError("container declares zero clients", byte_offset=6)
    header_len = 8 + 8 * num_clients + 8
    if len(data) < header_len:
        raise IngestError(
            f"truncated header: expected {header_len} bytes, got {len(data)}",
            byte_offset=len(data))
    counts = [struct.unpack_from("<II", data, 8 + 8 * i) for i in range(num_clients)]
    channels, length, num_classes = struct.unpack_from(
        "<HIH", data, 8 + 8 * num_clients)
    geom_offset = 8 + 8 * num_clients
    if channels == 0 or length == 0:
        raise IngestError(
            f"invalid geometry: channels={channels}, length={length}",
            byte_offset=geom_offset)
    if num_classes < 2:
        raise IngestError(
            f"invalid class count {num_classes}", byte_offset=geom_offset + 6)
    for i, (tr, te) in enumerate(counts):
        if tr == 0 or te == 0:
            raise IngestError(
                f"client {i} declares an empty split (train={tr}, test={te})",
                byte_offset=8 + 8 * i)

    record_size = 2 + 4 * channels * length
    total_records = sum(tr + te for tr, te in counts)
    expected = header_len + record_size * total_records
    if len(data) < expected:
        raise IngestError(
            f"truncated payload: expected {expected} bytes, available {len(data)}",
            byte_offset=len(data))
    if len(data) > expected:
        raise IngestError(
            f"{len(data) - expected} trailing bytes after the last record",
            byte_offset=expected)

    dtype = _record_dtype(channels, length)
    partitions = []
    offset = header_len
    for k, (tr, te) in enumerate(counts):
        seg = np.frombuffer(data, dtype=dtype, count=tr + te, offset=offset)
        labels = seg["label"]
        bad = np.nonzero(labels >= num_classes)[0]
        if bad.size:
            i = int(bad[0])
            raise IngestError(
                f"client {k} record {i}: label {int(labels[i])} out of range "
                f"[0, {num_classes})",
                byte_offset=offset + i * record_size)
        train_x = seg["signal"][:tr].copy()
        train_y = labels[:tr].astype(np.int64)
        test_x = seg["signal"][tr:].copy()
        test_y = labels[tr:].astype(np.int64)
        if resplit is not None:
            frac = float(resplit)
            if not 0.0 < frac < 1.0:
                raise ValueError(f"resplit fraction must be in (0, 1), got {frac}")
            gen = rng.stream(seed, rng.DATA, 1000 + k)
            pool_x = np.concatenate([train_x, test_x])
            pool_y = np.concatenate([train_y, test_y])
            train_x, train_y, test_x, test_y = _resplit(
                pool_x, pool_y, frac, num_classes, gen)
        if normalize:
            train_x, test_x = _normalize(train_x, test_x)
        try:
            partitions.append(ClientPartition(
                client_id=k,
                train_x=train_x, train_y=train_y,
                test_x=test_x, test_y=test_y,
                num_classes=num_classes,
            ))
        except ValueError as exc:
            raise IngestError(f"client {k}: {exc}", byte_offset=offset) from exc
        offset += (tr + te) * record_size
    return partitions


# ---------------------------------------------------------------------------
# config-level entry point


@dataclass
class DataConfig:
    """Data source description used by the experiment runner."""

    source: str = "synthetic"
    num_clients: int = 3
    train_per_client: int = 480
    test_per_client: int = 120
    channels: int = 8
    length: int = 128
    num_classes: int = 4
    heterogeneity: float = 0.6
    snr_db: float = 10.0
    path: str = None
    normalize: bool = False
    resplit: float = None

    def load(self, seed):
        if self.source == "synthetic":
            return synth_generate(
                num_clients=self.num_clients,
                train_per_client=self.train_per_client,
                test_per_client=self.test_per_client,
                channels=self.channels,
                length=self.length,
                num_classes=self.num_classes,
                heterogeneity=self.heterogeneity,
                snr_db=self.snr_db,
                seed=seed,
            )
        if self.source == "file":
            if not self.path:
                raise ValueError("file source needs a path")
            return ingest(self.path, normalize=self.normalize,
                          resplit=self.resplit, seed=seed)
        raise ValueError(f"unknown data source {self.source!r}")
