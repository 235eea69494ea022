import struct

import numpy as np
import pytest

from cpl.core import ConfigError, Dataset, DatasetError, FormatError, validate_dataset
from cpl.dataio import (
    Checkpoint,
    Manifest,
    SyntheticSpec,
    generate_synthetic,
    load_checkpoint,
    load_dataset,
    make_synthetic,
    read_features,
    read_manifest,
    save_checkpoint,
    save_dataset,
    write_features,
)
from cpl.evaluation import evaluate_with_prototypes, make_prototypes
from cpl.core import HyperParams
from cpl.net import AdamState, forward, init_embedder


def save_and_load(ds, tmp_path):
    m = Manifest.for_dataset(tmp_path, ds)
    save_dataset(ds, m, tmp_path / "manifest.txt")
    return load_dataset(tmp_path / "manifest.txt")


def test_dataset_round_trip(toy, tmp_path):
    assert save_and_load(toy, tmp_path) == toy


def test_synthetic_round_trip_bit_exact(small_synthetic, tmp_path):
    ds = small_synthetic.dataset
    back = save_and_load(ds, tmp_path)
    assert back == ds
    assert back.features.tobytes() == ds.features.tobytes()


def test_manifest_round_trip(toy, tmp_path):
    m = Manifest.for_dataset(tmp_path, toy)
    save_dataset(toy, m, tmp_path / "manifest.txt")
    assert read_manifest(tmp_path / "manifest.txt") == m


def test_feature_header_layout(tmp_path):
    p = tmp_path / "f.cplf"
    write_features(p, np.arange(6, dtype=np.float32).reshape(2, 3))
    raw = p.read_bytes()
    assert raw[:4] == b"CPLF"
    assert struct.unpack("<IQQ", raw[4:24]) == (1, 2, 3)
    assert np.frombuffer(raw[24:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]
    assert len(raw) == 24 + 6 * 4


def test_truncated_feature_file(toy, tmp_path):
    m = Manifest.for_dataset(tmp_path, toy)
    save_dataset(toy, m)
    raw = m.features_path.read_bytes()
    m.features_path.write_bytes(raw[: 24 + 4 * toy.d_feat * 2 + 5])  # mid third row
    with pytest.raises(FormatError) as err:
        read_features(m.features_path)
    assert err.value.offset == 24 + 4 * toy.d_feat * 2
    assert "features.cplf" in str(err.value)


def test_bad_feature_magic(tmp_path):
    p = tmp_path / "f.cplf"
    p.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(FormatError, match="magic"):
        read_features(p)


def test_attribute_width_mismatch(tmp_path):
    # 64 attribute columns on disk; manifest claims 85.
    rng = np.random.default_rng(0)
    ds = Dataset(rng.uniform(size=(4, 3)), [0, 0, 1, 1], rng.uniform(size=(2, 64)), (0,), (1,), [0, 0, 2, 2])
    m = Manifest.for_dataset(tmp_path, ds)
    save_dataset(ds, m)
    wrong = Manifest(m.features_path, m.labels_path, m.attributes_path, 3, 85, 4, 2, m.classes_path)
    with pytest.raises(DatasetError, match="d_attr=85, found 64"):
        load_dataset(wrong)


def test_feature_dimension_mismatch(toy, tmp_path):
    m = Manifest.for_dataset(tmp_path, toy)
    save_dataset(toy, m)
    wrong = Manifest(m.features_path, m.labels_path, m.attributes_path, toy.d_feat + 1, toy.d_attr,
                     toy.n_samples, toy.n_classes, m.classes_path)
    with pytest.raises(DatasetError, match="found"):
        load_dataset(wrong)


def test_invalid_dataset_rejected_on_load(toy, tmp_path):
    m = Manifest.for_dataset(tmp_path, toy)
    save_dataset(toy, m)
    text = m.labels_path.read_text().replace("0,0,train", "0,5,train", 1)
    m.labels_path.write_text(text)
    with pytest.raises(DatasetError) as err:
        load_dataset(m)
    assert err.value.violations


def test_save_to_unwritable_path(toy, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        save_dataset(toy, Manifest.for_dataset(blocker / "sub", toy))


def test_empty_dataset_round_trip(tmp_path):
    ds = Dataset(np.zeros((0, 4)), [], np.ones((3, 2)), (0, 1), (2,), [])
    back = save_and_load(ds, tmp_path)
    assert back.n_samples == 0 and back.d_feat == 4
    assert back == ds


def test_load_without_classes_file_infers_roles(toy, tmp_path):
    m = Manifest.for_dataset(tmp_path, toy)
    save_dataset(toy, m)
    m2 = Manifest(m.features_path, m.labels_path, m.attributes_path, toy.d_feat, toy.d_attr,
                  toy.n_samples, toy.n_classes)
    back = load_dataset(m2)
    assert back.seen_classes == toy.seen_classes
    assert back.unseen_classes == toy.unseen_classes


def test_unknown_manifest_key(toy, tmp_path):
    save_dataset(toy, Manifest.for_dataset(tmp_path, toy), tmp_path / "manifest.txt")
    with open(tmp_path / "manifest.txt", "a") as fh:
        fh.write("colour=blue\n")
    with pytest.raises(FormatError, match="unknown"):
        read_manifest(tmp_path / "manifest.txt")


def _checkpoint(hidden=6, seed=0):
    emb = init_embedder(4, hidden, 5, seed)
    return Checkpoint(HyperParams(hidden_size=hidden, seed=seed), emb, AdamState.fresh(emb))


def test_checkpoint_round_trip(tmp_path):
    ck = _checkpoint()
    save_checkpoint(ck, tmp_path / "a.cplm")
    back = load_checkpoint(tmp_path / "a.cplm")
    assert back.bit_equal(ck)


def test_checkpoint_bad_magic(tmp_path):
    save_checkpoint(_checkpoint(), tmp_path / "a.cplm")
    raw = bytearray((tmp_path / "a.cplm").read_bytes())
    raw[:4] = b"CPLF"
    (tmp_path / "b.cplm").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "b.cplm")


def test_checkpoint_version_mismatch(tmp_path):
    save_checkpoint(_checkpoint(), tmp_path / "a.cplm")
    raw = bytearray((tmp_path / "a.cplm").read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    (tmp_path / "b.cplm").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version 2"):
        load_checkpoint(tmp_path / "b.cplm")


def test_checkpoint_truncated(tmp_path):
    save_checkpoint(_checkpoint(), tmp_path / "a.cplm")
    raw = (tmp_path / "a.cplm").read_bytes()
    (tmp_path / "b.cplm").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "b.cplm")


def test_wide_checkpoint_gives_same_prototypes(tmp_path):
    emb = init_embedder(16, 1024, 64, 3)
    ck = Checkpoint(HyperParams(hidden_size=1024), emb, AdamState.fresh(emb))
    save_checkpoint(ck, tmp_path / "w.cplm")
    back = load_checkpoint(tmp_path / "w.cplm").params
    A = np.random.default_rng(0).uniform(size=(10, 16))
    assert forward(back, A)[0].tobytes() == forward(emb, A)[0].tobytes()
    for (c0, p0), (c1, p1) in zip(make_prototypes(emb, A, range(10)), make_prototypes(back, A, range(10))):
        assert c0 == c1 and p0.tobytes() == p1.tobytes()


def test_synthetic_zero_noise_samples_are_means():
    data = make_synthetic(SyntheticSpec(K=4, L=3, S_per_class_train=5, n_test_per_class=4,
                                        d_attr=3, d_feat=6, noise_sigma=0.0, seed=2))
    ds = data.dataset
    np.testing.assert_array_equal(ds.features, data.class_means[ds.labels].astype(np.float32))


def test_synthetic_deterministic():
    spec = SyntheticSpec(K=5, L=3, S_per_class_train=4, n_test_per_class=2, d_attr=3, d_feat=4, seed=9)
    assert generate_synthetic(spec) == generate_synthetic(spec)
    assert generate_synthetic(spec) != generate_synthetic(SyntheticSpec(**{**spec.__dict__, "seed": 10}))


def test_synthetic_structure(synthetic):
    ds = synthetic.dataset
    assert validate_dataset(ds) == []
    assert ds.seen_classes == tuple(range(27)) and ds.unseen_classes == tuple(range(27, 37))
    assert (ds.features >= 0).all()
    assert (ds.attributes >= 0).all() and (ds.attributes <= 1).all()
    unseen = np.isin(ds.labels, ds.unseen_classes)
    assert (ds.split[unseen] == 2).all()
    assert len(ds.indices("train")) == 27 * 50
    assert len(ds.indices("test_unseen")) == 10 * 30


def test_synthetic_oracle_accuracy(synthetic):
    ds = synthetic.dataset
    report = evaluate_with_prototypes(ds, [(c, synthetic.class_means[c]) for c in ds.unseen_classes])
    assert report.acc_unseen >= 0.99


@pytest.mark.parametrize("kw", [dict(K=1), dict(L=1), dict(d_attr=0), dict(noise_sigma=-0.1),
                                dict(max_classes=30)])
def test_synthetic_bad_spec(kw):
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(**kw))
