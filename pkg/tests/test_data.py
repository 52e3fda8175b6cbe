"""Synthetic generator statistics and the binary container round trip,
including the malformed-file ladder with exact byte offsets."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikefed.data import (
    ClientPartition,
    DataConfig,
    export_container,
    ingest,
    synth_generate,
)
from spikefed.errors import DimensionError, IngestError


def _partitions(**kwargs):
    base = dict(num_clients=3, train_per_client=12, test_per_client=8,
                channels=4, length=16, num_classes=4, heterogeneity=0.6,
                snr_db=10.0, seed=5)
    base.update(kwargs)
    return synth_generate(**base)


# ---------------------------------------------------------------------------
# generator


def test_generator_shapes_dtypes_and_coverage():
    parts = _partitions()
    assert [p.client_id for p in parts] == [0, 1, 2]
    for p in parts:
        assert p.train_x.shape == (12, 4, 16)
        assert p.test_x.shape == (8, 4, 16)
        assert p.train_x.dtype == np.float32
        assert p.train_y.dtype == np.int64
        assert p.num_classes == 4
        assert set(np.unique(p.test_y)) == {0, 1, 2, 3}


def test_generator_stratifies_labels():
    parts = _partitions(train_per_client=14, num_classes=4)
    for p in parts:
        train_hist, test_hist = p.class_histogram()
        assert train_hist.max() - train_hist.min() <= 1
        assert train_hist.sum() == 14
        assert test_hist.min() >= 1


def test_generator_is_deterministic_per_seed():
    a = _partitions(seed=9)
    b = _partitions(seed=9)
    c = _partitions(seed=10)
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.train_x, pb.train_x)
        np.testing.assert_array_equal(pa.train_y, pb.train_y)
        np.testing.assert_array_equal(pa.test_x, pb.test_x)
        np.testing.assert_array_equal(pa.mixing, pb.mixing)
        assert pa.gain == pb.gain
    assert not np.array_equal(a[0].train_x, c[0].train_x)


def test_zero_heterogeneity_gives_identical_client_distributions():
    parts = _partitions(heterogeneity=0.0)
    for p in parts:
        np.testing.assert_array_equal(p.mixing, np.eye(4))
        assert p.gain == 1.0


def test_client_zero_is_always_the_reference_distribution():
    for theta in (0.0, 0.3, 0.6, 1.0):
        parts = _partitions(heterogeneity=theta)
        np.testing.assert_array_equal(parts[0].mixing, np.eye(4))


def test_clients_form_mirrored_rotation_pairs():
    parts = _partitions(heterogeneity=0.6, num_clients=3)
    # At theta = 0.6 the blend is exactly 1/2; clients 1 and 2 rotate one
    # class step in opposite directions (stride = channels // classes = 1).
    blend = 0.5
    eye = np.eye(4)
    np.testing.assert_allclose(
        parts[1].mixing, (1 - blend) * eye + blend * np.roll(eye, 1, axis=0),
        atol=1e-15)
    np.testing.assert_allclose(
        parts[2].mixing, (1 - blend) * eye + blend * np.roll(eye, -1, axis=0),
        atol=1e-15)


def test_heterogeneity_scales_mixing_distance():
    low = _partitions(heterogeneity=0.2)
    high = _partitions(heterogeneity=0.8)
    d_low = np.linalg.norm(low[1].mixing - np.eye(4))
    d_high = np.linalg.norm(high[1].mixing - np.eye(4))
    assert d_high > d_low > 0.0


def test_snr_controls_within_class_scatter():
    clean = _partitions(snr_db=40.0, train_per_client=24)[0]
    noisy = _partitions(snr_db=0.0, train_per_client=24)[0]

    def scatter(p):
        tot = 0.0
        for c in range(p.num_classes):
            xs = p.train_x[p.train_y == c].astype(np.float64)
            tot += float(np.mean((xs - xs.mean(axis=0)) ** 2))
        return tot / p.num_classes

    assert scatter(noisy) > 30.0 * scatter(clean)


def test_generator_validation():
    with pytest.raises(DimensionError):
        _partitions(num_clients=0)
    with pytest.raises(DimensionError):
        _partitions(train_per_client=0)
    with pytest.raises(DimensionError):
        _partitions(num_classes=1)
    with pytest.raises(DimensionError):
        _partitions(heterogeneity=1.5)
    with pytest.raises(DimensionError):
        _partitions(heterogeneity=-0.1)
    with pytest.raises(DimensionError):
        _partitions(test_per_client=3, num_classes=4)
    with pytest.raises(DimensionError):
        _partitions(length=1)


# ---------------------------------------------------------------------------
# ClientPartition validation


def _valid_arrays():
    gen = np.random.default_rng(0)
    x = gen.normal(size=(8, 2, 6)).astype(np.float32)
    y = np.array([0, 1, 0, 1, 0, 1, 0, 1], dtype=np.int64)
    return x, y


def test_partition_validation():
    x, y = _valid_arrays()
    ClientPartition(client_id=0, train_x=x, train_y=y, test_x=x, test_y=y,
                    num_classes=2)
    with pytest.raises(ValueError, match="empty"):
        ClientPartition(client_id=0, train_x=x[:0], train_y=y[:0],
                        test_x=x, test_y=y, num_classes=2)
    with pytest.raises(ValueError, match="out of range"):
        ClientPartition(client_id=0, train_x=x, train_y=y + 5,
                        test_x=x, test_y=y, num_classes=2)
    with pytest.raises(ValueError, match="do not match"):
        ClientPartition(client_id=0, train_x=x, train_y=y[:-1],
                        test_x=x, test_y=y, num_classes=2)
    with pytest.raises(ValueError, match="non-finite"):
        bad = x.copy()
        bad[0, 0, 0] = np.nan
        ClientPartition(client_id=0, train_x=bad, train_y=y,
                        test_x=x, test_y=y, num_classes=2)
    with pytest.raises(ValueError, match="missing classes"):
        ClientPartition(client_id=0, train_x=x, train_y=y,
                        test_x=x, test_y=np.zeros(8, dtype=np.int64),
                        num_classes=2)


# ---------------------------------------------------------------------------
# container round trip


def test_round_trip_is_bitwise_lossless(tmp_path):
    parts = _partitions()
    path = tmp_path / "data.sfed"
    export_container(parts, str(path))
    loaded = ingest(str(path))
    assert len(loaded) == len(parts)
    for orig, back in zip(parts, loaded):
        assert back.client_id == orig.client_id
        assert back.num_classes == orig.num_classes
        np.testing.assert_array_equal(orig.train_x, back.train_x)
        np.testing.assert_array_equal(orig.train_y, back.train_y)
        np.testing.assert_array_equal(orig.test_x, back.test_x)
        np.testing.assert_array_equal(orig.test_y, back.test_y)
        assert back.train_x.dtype == np.float32
        assert back.train_y.dtype == np.int64


def test_export_is_byte_deterministic(tmp_path):
    parts = _partitions()
    a, b = tmp_path / "a.sfed", tmp_path / "b.sfed"
    export_container(parts, str(a))
    export_container(parts, str(b))
    assert a.read_bytes() == b.read_bytes()


def test_container_header_layout(tmp_path):
    parts = _partitions(num_clients=2, train_per_client=4, test_per_client=4,
                        channels=2, length=8)
    path = tmp_path / "layout.sfed"
    export_container(parts, str(path))
    blob = path.read_bytes()
    assert blob[:4] == b"SFED"
    version, nclients = struct.unpack_from("<HH", blob, 4)
    assert (version, nclients) == (1, 2)
    assert struct.unpack_from("<II", blob, 8) == (4, 4)
    assert struct.unpack_from("<II", blob, 16) == (4, 4)
    channels, length, ncls = struct.unpack_from("<HIH", blob, 24)
    assert (channels, length, ncls) == (2, 8, 4)
    # header 32 bytes + 16 records of (2 + 2*8*4) bytes each
    assert len(blob) == 32 + 16 * 66


@settings(max_examples=12, deadline=None)
@given(
    st.integers(1, 4),   # clients
    st.integers(1, 5),   # channels
    st.integers(4, 20),  # length
    st.integers(2, 4),   # classes
    st.integers(0, 2 ** 31 - 1),
)
def test_round_trip_bitwise_across_geometries(tmp_path_factory, clients,
                                              channels, length, ncls, seed):
    parts = synth_generate(num_clients=clients, train_per_client=2 * ncls,
                           test_per_client=ncls, channels=channels,
                           length=length, num_classes=ncls, seed=seed)
    path = tmp_path_factory.mktemp("rt") / "x.sfed"
    export_container(parts, str(path))
    for orig, back in zip(parts, ingest(str(path))):
        np.testing.assert_array_equal(orig.train_x, back.train_x)
        np.testing.assert_array_equal(orig.test_y, back.test_y)


def test_export_validation(tmp_path):
    with pytest.raises(DimensionError):
        export_container([], str(tmp_path / "x.sfed"))
    a = _partitions(channels=4)[0]
    b = _partitions(channels=2, num_clients=1)[0]
    with pytest.raises(DimensionError, match="geometry"):
        export_container([a, b], str(tmp_path / "x.sfed"))


# ---------------------------------------------------------------------------
# malformed containers


@pytest.fixture
def container(tmp_path):
    parts = _partitions(num_clients=2, train_per_client=3, test_per_client=4,
                        channels=2, length=4)
    path = tmp_path / "good.sfed"
    export_container(parts, str(path))
    return path, path.read_bytes()


def _write(tmp_path, blob, name="bad.sfed"):
    p = tmp_path / name
    p.write_bytes(blob)
    return str(p)


def test_ingest_truncated_payload(container, tmp_path):
    path, blob = container
    cut = len(blob) - 7
    bad = _write(tmp_path, blob[:cut])
    with pytest.raises(IngestError, match="truncated payload") as exc:
        ingest(bad)
    assert exc.value.byte_offset == cut
    assert f"expected {len(blob)} bytes, available {cut}" in str(exc.value)


def test_ingest_truncated_header(container, tmp_path):
    _, blob = container
    with pytest.raises(IngestError, match="truncated header") as exc:
        ingest(_write(tmp_path, blob[:5]))
    assert exc.value.byte_offset == 5
    with pytest.raises(IngestError, match="truncated header") as exc:
        ingest(_write(tmp_path, blob[:20]))   # counts table cut short
    assert exc.value.byte_offset == 20


def test_ingest_bad_magic(container, tmp_path):
    _, blob = container
    bad = _write(tmp_path, b"NOPE" + blob[4:])
    with pytest.raises(IngestError, match="bad magic") as exc:
        ingest(bad)
    assert exc.value.byte_offset == 0


def test_ingest_bad_version(container, tmp_path):
    _, blob = container
    bad = _write(tmp_path, blob[:4] + struct.pack("<H", 9) + blob[6:])
    with pytest.raises(IngestError, match="version 9") as exc:
        ingest(bad)
    assert exc.value.byte_offset == 4


def test_ingest_zero_clients(container, tmp_path):
    _, blob = container
    bad = _write(tmp_path, blob[:6] + struct.pack("<H", 0) + blob[8:])
    with pytest.raises(IngestError, match="zero clients") as exc:
        ingest(bad)
    assert exc.value.byte_offset == 6


def test_ingest_empty_split_declared(container, tmp_path):
    _, blob = container
    # zero out client 1's train count (offset 8 + 8*1)
    bad = _write(tmp_path, blob[:16] + struct.pack("<I", 0) + blob[20:])
    with pytest.raises(IngestError, match="client 1 declares an empty split") as exc:
        ingest(bad)
    assert exc.value.byte_offset == 16


def test_ingest_out_of_range_label(container, tmp_path):
    _, blob = container
    # header: 8 + 8*2 counts + 8 geometry = 32; record = 2 + 4*2*4 = 34.
    # Corrupt the label of client 1's record 2 (client 0 holds 7 records).
    offset = 32 + (7 + 2) * 34
    bad = _write(tmp_path,
                 blob[:offset] + struct.pack("<H", 99) + blob[offset + 2:])
    with pytest.raises(IngestError, match=r"client 1 record 2: label 99") as exc:
        ingest(bad)
    assert exc.value.byte_offset == offset


def test_ingest_trailing_bytes(container, tmp_path):
    _, blob = container
    bad = _write(tmp_path, blob + b"\x00\x01\x02")
    with pytest.raises(IngestError, match="3 trailing bytes") as exc:
        ingest(bad)
    assert exc.value.byte_offset == len(blob)


def test_ingest_zero_geometry(container, tmp_path):
    _, blob = container
    geom = 8 + 8 * 2
    bad = _write(tmp_path, blob[:geom] + struct.pack("<H", 0) + blob[geom + 2:])
    with pytest.raises(IngestError, match="invalid geometry") as exc:
        ingest(bad)
    assert exc.value.byte_offset == geom


def test_ingest_bad_class_count(container, tmp_path):
    _, blob = container
    geom = 8 + 8 * 2
    bad = _write(tmp_path,
                 blob[:geom + 6] + struct.pack("<H", 1) + blob[geom + 8:])
    with pytest.raises(IngestError, match="invalid class count") as exc:
        ingest(bad)
    assert exc.value.byte_offset == geom + 6


# ---------------------------------------------------------------------------
# resplit / normalize


def test_resplit_fraction_and_pool_preservation(tmp_path):
    parts = _partitions(train_per_client=16, test_per_client=8)
    path = tmp_path / "x.sfed"
    export_container(parts, str(path))
    loaded = ingest(str(path), resplit=0.5, seed=3)
    for orig, back in zip(parts, loaded):
        # 24 pooled samples, 6 per class, half to train
        assert back.num_train == 12 and back.num_test == 12
        train_hist, test_hist = back.class_histogram()
        np.testing.assert_array_equal(train_hist, [3, 3, 3, 3])
        np.testing.assert_array_equal(test_hist, [3, 3, 3, 3])
        pool_orig = np.concatenate([orig.train_x, orig.test_x]).reshape(24, -1)
        pool_back = np.concatenate([back.train_x, back.test_x]).reshape(24, -1)
        key = lambda a: np.lexsort(a.T[::-1])
        np.testing.assert_array_equal(pool_orig[key(pool_orig)],
                                      pool_back[key(pool_back)])


def test_resplit_is_seeded(tmp_path):
    parts = _partitions(train_per_client=16, test_per_client=8)
    path = tmp_path / "x.sfed"
    export_container(parts, str(path))
    a = ingest(str(path), resplit=0.5, seed=3)
    b = ingest(str(path), resplit=0.5, seed=3)
    c = ingest(str(path), resplit=0.5, seed=4)
    np.testing.assert_array_equal(a[0].train_x, b[0].train_x)
    assert not np.array_equal(a[0].train_x, c[0].train_x)


def test_resplit_invalid_fraction(tmp_path):
    parts = _partitions()
    path = tmp_path / "x.sfed"
    export_container(parts, str(path))
    with pytest.raises(ValueError, match="fraction"):
        ingest(str(path), resplit=1.0)


def test_normalize_uses_train_statistics_only(tmp_path):
    parts = _partitions(train_per_client=64, test_per_client=16)
    path = tmp_path / "x.sfed"
    export_container(parts, str(path))
    loaded = ingest(str(path), normalize=True)
    for p in loaded:
        mean = p.train_x.astype(np.float64).mean(axis=(0, 2))
        std = p.train_x.astype(np.float64).std(axis=(0, 2))
        np.testing.assert_allclose(mean, 0.0, atol=1e-6)
        np.testing.assert_allclose(std, 1.0, atol=1e-5)
        # test is transformed with the train statistics, not its own
        test_mean = p.test_x.astype(np.float64).mean(axis=(0, 2))
        assert np.max(np.abs(test_mean)) > 1e-8


def test_normalize_guards_constant_channels(tmp_path):
    x, y = np.zeros((8, 2, 4), dtype=np.float32), None
    gen = np.random.default_rng(1)
    x[:, 0] = 3.0                                    # constant channel
    x[:, 1] = gen.normal(size=(8, 4)).astype(np.float32)
    y = np.array([0, 1] * 4, dtype=np.int64)
    part = ClientPartition(client_id=0, train_x=x, train_y=y,
                           test_x=x.copy(), test_y=y.copy(), num_classes=2)
    path = tmp_path / "const.sfed"
    export_container([part], str(path))
    loaded = ingest(str(path), normalize=True)[0]
    assert np.all(np.isfinite(loaded.train_x))
    np.testing.assert_allclose(loaded.train_x[:, 0], 0.0, atol=1e-7)


# ---------------------------------------------------------------------------
# DataConfig


def test_data_config_synthetic_load_matches_direct_call():
    cfg = DataConfig(num_clients=2, train_per_client=8, test_per_client=4,
                     channels=3, length=12, num_classes=2,
                     heterogeneity=0.4, snr_db=6.0)
    via_cfg = cfg.load(seed=2)
    direct = synth_generate(num_clients=2, train_per_client=8,
                            test_per_client=4, channels=3, length=12,
                            num_classes=2, heterogeneity=0.4, snr_db=6.0,
                            seed=2)
    np.testing.assert_array_equal(via_cfg[0].train_x, direct[0].train_x)
    np.testing.assert_array_equal(via_cfg[1].test_y, direct[1].test_y)


def test_data_config_file_source(tmp_path):
    parts = _partitions()
    path = tmp_path / "x.sfed"
    export_container(parts, str(path))
    cfg = DataConfig(source="file", path=str(path))
    loaded = cfg.load(seed=0)
    np.testing.assert_array_equal(loaded[0].train_x, parts[0].train_x)
    with pytest.raises(ValueError, match="path"):
        DataConfig(source="file").load(seed=0)
    with pytest.raises(ValueError, match="unknown data source"):
        DataConfig(source="csv").load(seed=0)
