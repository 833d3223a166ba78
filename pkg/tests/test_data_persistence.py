import os
import struct

import numpy as np
import pytest

from nncomm.accounting import sparsity_report, storage_bytes
from nncomm.compression import prune_magnitude, quantize_kmeans, retrain
from nncomm.datagen import (CsiDataset, angular_delay_matrix, energy_concentration, gen_channel,
                            gen_csi_dataset, gen_csi_splits, gen_detection_dataset,
                            gen_detection_splits, load_external_dataset, noise_variance,
                            save_csi_dataset, save_dataset, split_sizes)
from nncomm.errors import ConfigError, DataError, DimensionError, ParseError
from nncomm.graph import ModelGraph
from nncomm.layers import Conv2d, Dense, ReLU, Reshape, Sigmoid
from nncomm.persistence import (file_size_prediction, load_model, payload_bytes, read_sections,
                                save_model)
from nncomm.training import Schedule
from nncomm.zoo import FeedbackConfig, build_convsqucsinet, build_csinet_plus_like


# -- detection data --------------------------------------------------------------

def test_channel_statistics():
    h = gen_channel(300, 200, 0)
    assert h.var() == pytest.approx(1 / 300, rel=0.02)
    np.testing.assert_array_equal(gen_channel(30, 20, 5), gen_channel(30, 20, 5))


def test_noise_variance_matches_snr():
    h = gen_channel(30, 20, 1)
    d = gen_detection_dataset(h, 50_000, 10.0, 3)
    signal = d.s @ h.T
    noise = d.y - signal
    snr = 10 * np.log10(np.mean(np.sum(signal ** 2, 1)) / np.mean(np.sum(noise ** 2, 1)))
    assert snr == pytest.approx(10.0, abs=0.05)
    assert noise_variance(h, 0.0) == pytest.approx(np.sum(h ** 2) / 30)


def test_detection_samples_noiseless_and_bits():
    h = gen_channel(30, 20, 1)
    d = gen_detection_dataset(h, 10, np.inf, 0)
    np.testing.assert_allclose(d.y, d.s @ h.T)
    assert set(np.unique(d.bits)) <= {0.0, 1.0}


def test_detection_splits():
    h = gen_channel(30, 20, 0)
    tr, va, te = gen_detection_splits(h, (8, 13), 0, sizes={"train": 100, "val": 50, "test": 40})
    assert len(tr) == 100 and len(va) == 50
    assert sorted(te) == [8.0, 13.0]
    assert 8 <= tr.snr_db.min() and tr.snr_db.max() <= 13
    assert np.all(te[8.0].snr_db == 8.0)
    assert split_sizes("detection", small=True) == {"train": 10_000, "val": 3_000, "test": 2_000}
    with pytest.raises(DataError):
        gen_detection_dataset(h, 0, 10.0, 0)


# -- CSI data ------------------------------------------------------------------------

def test_csi_samples_unit_norm_and_sparse():
    d = gen_csi_dataset("indoor_like", 50, 0)
    assert d.raw.shape == (50, 2, 32, 32)
    np.testing.assert_allclose(np.sum(d.raw ** 2, axis=(1, 2, 3)), 1.0, rtol=1e-5)
    assert np.median(energy_concentration(d.raw)) > 0.8
    assert d.normalized.min() == 0.0 and d.normalized.max() == 1.0


def test_indoor_more_concentrated_than_outdoor():
    indoor = gen_csi_dataset("indoor_like", 1000, 0)
    outdoor = gen_csi_dataset("outdoor_like", 1000, 0)
    assert energy_concentration(indoor.raw).mean() > energy_concentration(outdoor.raw).mean()


def test_single_path_hits_one_bin():
    h = angular_delay_matrix([1.0], [0.0], [0.0])
    power = np.abs(h) ** 2
    assert power[0, 0] == pytest.approx(power.sum(), rel=1e-12)


def test_csi_normalization_roundtrip():
    parts = gen_csi_splits("indoor_like", 0, sizes={"train": 30, "val": 10, "test": 10})
    tr = parts["train"]
    assert tr.normalized.min() == 0.0 and tr.normalized.max() == 1.0
    assert parts["test"].lo == tr.lo and parts["test"].hi == tr.hi
    np.testing.assert_allclose(tr.denormalize(tr.normalized), tr.raw, atol=1e-15)
    with pytest.raises(DataError):
        gen_csi_dataset("rural", 5, 0)


# -- dataset files -----------------------------------------------------------------

def test_dataset_file_roundtrip(tmp_path):
    arr = np.random.default_rng(0).standard_normal((5, 2, 3, 4)).astype(np.float32)
    path = tmp_path / "a.nncd"
    n = save_dataset(path, arr)
    assert n == 4 + 2 + 1 + 16 + 1 + 4 * arr.size + 4 == os.path.getsize(path)
    loaded = load_external_dataset(path, expected_shape=(2, 3, 4))
    np.testing.assert_array_equal(loaded.array, arr)
    assert not loaded.normalized
    with pytest.raises(DimensionError):
        load_external_dataset(path, expected_shape=(2, 32, 32))


def test_csi_dataset_file_keeps_scaling(tmp_path):
    d = gen_csi_dataset("indoor_like", 4, 1)
    path = tmp_path / "csi.nncd"
    save_csi_dataset(path, d, normalized=True)
    loaded = load_external_dataset(path)
    assert loaded.normalized and (loaded.lo, loaded.hi) == (d.lo, d.hi)
    np.testing.assert_allclose(loaded.array, d.normalized, atol=1e-7)


def test_dataset_file_corruption(tmp_path):
    path = tmp_path / "a.nncd"
    save_dataset(path, np.arange(12, dtype=float).reshape(3, 4))
    raw = bytearray(path.read_bytes())
    (tmp_path / "trunc.nncd").write_bytes(raw[:20])
    with pytest.raises(ParseError, match="more bytes"):
        load_external_dataset(tmp_path / "trunc.nncd")
    bad = bytearray(raw)
    bad[30] ^= 0xFF
    (tmp_path / "crc.nncd").write_bytes(bad)
    with pytest.raises(ParseError, match="CRC"):
        load_external_dataset(tmp_path / "crc.nncd")
    bad = bytearray(raw)
    bad[:4] = b"XXXX"
    (tmp_path / "magic.nncd").write_bytes(bad)
    with pytest.raises(ParseError, match="magic"):
        load_external_dataset(tmp_path / "magic.nncd")


def test_load_with_normalize(tmp_path):
    path = tmp_path / "a.nncd"
    save_dataset(path, np.array([[1.0, 3.0], [2.0, 5.0]]))
    loaded = load_external_dataset(path, normalize=True)
    np.testing.assert_allclose(loaded.array, [[0.0, 0.5], [0.25, 1.0]])
    assert (loaded.lo, loaded.hi) == (1.0, 5.0)


# -- model files ---------------------------------------------------------------------

def mixed_model(seed=0):
    layers = [Conv2d(2, 4, 3, name="c1"), ReLU(name="r1"), Reshape((4 * 6 * 6,), name="flat"),
              Dense(144, 10, name="fc"), Sigmoid(name="out")]
    return ModelGraph(layers, (2, 6, 6), name="mixed").init_params(np.random.default_rng(seed))


def as_float32(model):
    for _, _, _, v in model.named_parameters():
        v[...] = v.astype(np.float32)
    return model


def assert_same_params(a, b):
    assert a.param_names() == b.param_names()
    for name in a.param_names():
        np.testing.assert_array_equal(a.get_param(name), b.get_param(name))


def test_dense_roundtrip_bit_exact(tmp_path):
    m = as_float32(mixed_model())
    path = tmp_path / "m.nncm"
    size = save_model(m, "dense32", path, provenance={"seed": 0})
    assert size == os.path.getsize(path)
    back = load_model(path)
    assert_same_params(m, back)
    assert back.topology()["layers"] == m.topology()["layers"]
    x = np.random.default_rng(1).standard_normal((3, 2, 6, 6))
    np.testing.assert_array_equal(back.predict(x), m.predict(x))


def test_csi_model_roundtrip(tmp_path):
    m = as_float32(build_csinet_plus_like(FeedbackConfig(32), seed=1))
    path = tmp_path / "csi.nncm"
    save_model(m, "dense32", path)
    back = load_model(path)
    assert back.topology() == m.topology()
    x = np.random.default_rng(2).random((2, 2, 32, 32))
    np.testing.assert_array_equal(back.predict(x), m.predict(x))
    np.testing.assert_array_equal(back.encode(x), m.encode(x))


def test_sparse_roundtrip_keeps_masks(tmp_path):
    m = as_float32(mixed_model(1))
    prune_magnitude(m, 0.1)
    path = tmp_path / "p.nncm"
    save_model(m, "sparse_bitmask", path)
    back = load_model(path)
    assert_same_params(m, back)
    for name, mask in m.masks.items():
        np.testing.assert_array_equal(back.masks[name], mask)


@pytest.mark.parametrize("bits", [1, 3, 5, 9])
def test_quantized_roundtrip(tmp_path, bits):
    m = mixed_model(2)
    quantize_kmeans(m, bits, seed=0)
    path = tmp_path / "q.nncm"
    save_model(m, "quantized", path)
    back = load_model(path)
    assert_same_params(m, back)
    for name, q in m.quantized.items():
        np.testing.assert_array_equal(back.quantized[name].indices, q.indices)
        np.testing.assert_array_equal(back.quantized[name].codebook, q.codebook)


@pytest.mark.parametrize("rep", ["dense32", "sparse_bitmask", "quantized"])
def test_file_size_equals_accounting(tmp_path, rep):
    m = build_convsqucsinet(FeedbackConfig(8), seed=0)
    if rep == "sparse_bitmask":
        prune_magnitude(m, 0.05)
    if rep == "quantized":
        quantize_kmeans(m, 5, include=lambda n, k: not n.endswith("bias"))
    path = tmp_path / "m.nncm"
    size = save_model(m, rep, path)
    manifest, sections = read_sections(path)
    assert sum(payload_bytes(s) for s in sections) == storage_bytes(m, rep)
    manifest_len = struct.unpack("<I", path.read_bytes()[6:10])[0]
    assert size == file_size_prediction(m, rep, manifest_len)


def test_sparsity_report_matches_file_bitmask(tmp_path):
    m = mixed_model(4)
    prune_magnitude(m, 0.08)
    rng = np.random.default_rng(0)
    x = rng.random((64, 2, 6, 6))
    retrain(m, x, rng.random((64, 10)), Schedule(1e-2, 16, 2), loss="mse")
    path = tmp_path / "p.nncm"
    save_model(m, "sparse_bitmask", path)
    manifest, sections = read_sections(path)
    shapes = {t["name"]: t["shape"] for t in manifest["tensors"]}
    report = sparsity_report(m)
    kept = total = 0
    for sec in sections:
        n = int(np.prod(shapes[sec.name]))
        if sec.representation == "sparse_bitmask":
            bits = np.unpackbits(np.frombuffer(sec.payload[:(n + 7) // 8], np.uint8))[:n]
            k = int(bits.sum())
            assert len(sec.payload) == (n + 7) // 8 + 4 * k
        else:
            k = n
        assert report[sec.name] == k / n
        kept, total = kept + k, total + n
    assert report["overall"] == kept / total


def test_b5_section_payload(tmp_path):
    m = ModelGraph([Dense(8, 1, bias=False, name="fc")], (8,))
    m.set_param("fc.weight", np.arange(8.0)[None] - 3.5)
    quantize_kmeans(m, 5)
    path = tmp_path / "b5.nncm"
    save_model(m, "quantized", path)
    _, (sec,) = read_sections(path)
    # 8 distinct values: bits reduce to 3, payload = B byte + 8 codebook floats + 3 index bytes
    assert sec.payload[0] == 3
    assert len(sec.payload) == 1 + 4 * 8 + 3


def test_resave_is_idempotent(tmp_path):
    m = mixed_model(3)
    prune_magnitude(m, 0.1)
    a, b = tmp_path / "a.nncm", tmp_path / "b.nncm"
    save_model(m, "sparse_bitmask", a)
    save_model(load_model(a), "sparse_bitmask", b)
    assert a.read_bytes() == b.read_bytes()


def test_model_file_corruption(tmp_path):
    m = mixed_model()
    path = tmp_path / "m.nncm"
    save_model(m, "dense32", path)
    raw = path.read_bytes()
    bad = bytearray(raw)
    bad[-10] ^= 0x01
    (tmp_path / "crc.nncm").write_bytes(bad)
    with pytest.raises(ParseError, match="fc.bias"):
        load_model(tmp_path / "crc.nncm")
    (tmp_path / "trunc.nncm").write_bytes(raw[:-7])
    with pytest.raises(ParseError, match="truncated"):
        load_model(tmp_path / "trunc.nncm")
    (tmp_path / "magic.nncm").write_bytes(b"NNCX" + raw[4:])
    with pytest.raises(ParseError, match="magic"):
        load_model(tmp_path / "magic.nncm")


def test_save_rejects_missing_compression_state(tmp_path):
    with pytest.raises(ConfigError):
        save_model(mixed_model(), "quantized", tmp_path / "x.nncm")
    with pytest.raises(ConfigError):
        save_model(mixed_model(), "sparse_bitmask", tmp_path / "x.nncm")
    with pytest.raises(ConfigError):
        save_model(mixed_model(), "float16", tmp_path / "x.nncm")
    assert not (tmp_path / "x.nncm").exists()


def test_csi_dataset_type():
    d = CsiDataset(np.array([[0.0, 2.0]]), 0.0, 2.0)
    np.testing.assert_array_equal(d.normalized, [[0.0, 1.0]])
