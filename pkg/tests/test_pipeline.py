import dataclasses
import struct

import numpy as np
import pytest

from biqa import augment as augment_mod
from biqa import features as features_mod
from biqa import gbdt as gbdt_mod
from biqa import pipeline, toy
from biqa.dataset import Scenario, Split, load_image, split_manifest
from biqa.errors import CorruptModel, InsufficientData, IoError, VersionMismatch
from biqa.pipeline import (
    deserialize_model,
    load_model,
    manifest_digest,
    model_digest,
    predict_image,
    predict_path,
    save_model,
    serialize_model,
    train,
)


def test_trained_model_is_coherent(trained, assigned_manifest):
    assert len(trained.selected) > 0
    assert trained.gbdt.n_columns == len(trained.selected)
    assert len(trained.gbdt.trees) >= 1
    trained.ranking.validate()
    assert trained.provenance.seed == 0
    assert trained.provenance.timestamp == 0.0
    assert trained.provenance.manifest_digest == manifest_digest(assigned_manifest)


def test_empty_val_split_raises(toy_root):
    root, manifest = toy_root
    assigned = split_manifest(manifest, seed=0, fractions=(0.8, 0.0, 0.2))
    with pytest.raises(InsufficientData):
        train(assigned, None, seed=0, root=root)


def test_same_seed_retrains_byte_identical(toy_root, assigned_manifest, trained):
    root, _ = toy_root
    again = train(assigned_manifest, None, seed=0, root=root)
    assert serialize_model(again) == serialize_model(trained)


def test_predict_image_is_mean_of_subimage_scores(toy_root, assigned_manifest,
                                                  trained):
    root, _ = toy_root
    entry = assigned_manifest.subset(Split.TEST)[0]
    img = load_image(root / entry.image_path)
    subs = augment_mod.augment_image(img, trained.augment_cfg)
    fm = features_mod.extract_features(subs, trained.feature_params)
    scores = gbdt_mod.predict(trained.gbdt, fm.values[:, trained.selected])
    assert predict_image(trained, img) == float(scores.mean())


def test_constant_regressor_predicts_constant(toy_root, assigned_manifest,
                                              trained):
    root, _ = toy_root
    entry = assigned_manifest.entries[0]
    stub = dataclasses.replace(
        trained,
        gbdt=gbdt_mod.GbdtModel(base_score=3.25, learning_rate=0.05,
                                n_columns=trained.gbdt.n_columns))
    img = load_image(root / entry.image_path)
    assert predict_image(stub, img) == 3.25


def test_image_score_is_arithmetic_mean(monkeypatch, toy_root,
                                        assigned_manifest, trained):
    root, _ = toy_root
    img = load_image(root / assigned_manifest.entries[0].image_path)
    real_subs = augment_mod.augment_image(img, trained.augment_cfg)
    monkeypatch.setattr("biqa.augment.augment_image",
                        lambda *a, **k: real_subs[:3])
    monkeypatch.setattr("biqa.gbdt.predict",
                        lambda m, x: np.array([2.0, 4.0, 6.0]))
    assert predict_image(trained, img) == 4.0


def test_training_image_prediction_consistency(toy_root, assigned_manifest,
                                               trained):
    # scoring a training image reproduces its training-time subimage
    # predictions exactly
    root, _ = toy_root
    entry = assigned_manifest.subset(Split.TRAIN)[0]
    cfg = pipeline.TrainConfig(Scenario.SYNTHETIC,
                               augment_cfg=trained.augment_cfg)
    values, _, _ = pipeline._feature_table([entry], cfg, root,
                                           trained.feature_params)
    scores = gbdt_mod.predict(trained.gbdt, values[:, trained.selected])
    assert predict_path(trained, root / entry.image_path) == float(scores.mean())


def test_save_load_round_trip(tmp_path, toy_root, assigned_manifest, trained):
    root, _ = toy_root
    path = tmp_path / "model.bin"
    save_model(trained, path)
    loaded = load_model(path)
    assert serialize_model(loaded) == serialize_model(trained)
    entry = assigned_manifest.subset(Split.TEST)[0]
    img = load_image(root / entry.image_path)
    assert predict_image(loaded, img) == predict_image(trained, img)


def test_model_io_errors(tmp_path, trained):
    with pytest.raises(IoError):
        load_model(tmp_path / "missing.bin")
    with pytest.raises(IoError):
        save_model(trained, tmp_path / "no" / "such" / "dir" / "m.bin")


def test_truncated_blob_rejected(trained):
    blob = serialize_model(trained)
    with pytest.raises(CorruptModel):
        deserialize_model(blob[:-10])
    with pytest.raises(CorruptModel):
        deserialize_model(blob[:3])
    with pytest.raises(CorruptModel):
        deserialize_model(b"")


def test_bad_magic_rejected(trained):
    blob = bytearray(serialize_model(trained))
    blob[:4] = b"NOPE"
    with pytest.raises(CorruptModel):
        deserialize_model(bytes(blob))


def test_bumped_version_rejected(trained):
    blob = bytearray(serialize_model(trained))
    blob[4:8] = struct.pack("<I", pipeline.FORMAT_VERSION + 1)
    with pytest.raises(VersionMismatch):
        deserialize_model(bytes(blob))
    # same outcome when the checksum is made consistent again
    import zlib
    body = bytes(blob[:-4])
    with pytest.raises(VersionMismatch):
        deserialize_model(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def test_flipped_byte_fails_checksum(trained):
    blob = bytearray(serialize_model(trained))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(CorruptModel):
        deserialize_model(bytes(blob))


def rewrite_split_mos(manifest, split, transform):
    rows = [e for e in manifest.entries if e.split is split]
    new_mos = iter(transform([e.mos for e in rows]))
    entries = [
        dataclasses.replace(e, mos=next(new_mos)) if e.split is split else e
        for e in manifest.entries
    ]
    return dataclasses.replace(manifest, entries=entries)


def test_manifest_digest_ignores_test_rows(assigned_manifest):
    base = manifest_digest(assigned_manifest)
    shuffled = rewrite_split_mos(assigned_manifest, Split.TEST,
                                 lambda mos: mos[1:] + mos[:1])
    test_mos = [e.mos for e in assigned_manifest.subset(Split.TEST)]
    assert test_mos != test_mos[1:] + test_mos[:1]  # the rewrite is real
    assert manifest_digest(shuffled) == base


def test_manifest_digest_tracks_train_rows(assigned_manifest):
    base = manifest_digest(assigned_manifest)
    bumped = rewrite_split_mos(assigned_manifest, Split.TRAIN,
                               lambda mos: [mos[0] + 0.5] + mos[1:])
    assert manifest_digest(bumped) != base


def test_toy_manifest_counts_and_tags(toy_root):
    _, manifest = toy_root
    spec_levels = 3
    assert len(manifest) == 6 * (1 + 4 * spec_levels)
    pristine = [e for e in manifest.entries if e.distortion == "pristine"]
    assert len(pristine) == 6
    assert all(e.mos == 5.0 for e in pristine)
    tags = {e.distortion for e in manifest.entries}
    assert tags == {"pristine", *toy.DISTORTIONS}
    levels_mos = sorted({e.mos for e in manifest.entries})
    assert levels_mos == [1.0, 3.0, 5.0]


def test_toy_images_exist_and_decode(toy_root):
    root, manifest = toy_root
    entry = manifest.entries[0]
    img = load_image(root / entry.image_path)
    assert img.y_plane.shape == (192, 192)


def test_default_toy_spec_counts():
    spec = toy.ToyDatasetSpec()
    assert spec.total_images == 10 * (1 + 4 * 5)
    assert [toy.mos_for_level(k, 5) for k in range(1, 6)] == [5.0, 4.0, 3.0, 2.0, 1.0]


def test_gen_toy_reruns_byte_identical(tmp_path):
    spec = toy.ToyDatasetSpec(n_references=2, levels=2, image_side=96, seed=3)
    a, b = tmp_path / "a", tmp_path / "b"
    manifest_a = toy.gen_toy(spec, a)
    toy.gen_toy(spec, b)
    assert (a / "manifest.csv").read_bytes() == (b / "manifest.csv").read_bytes()
    for entry in manifest_a.entries:
        assert (a / entry.image_path).read_bytes() == (b / entry.image_path).read_bytes()
