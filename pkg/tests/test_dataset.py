import numpy as np
import pytest
from PIL import Image

from biqa import dataset
from biqa.dataset import (
    DatasetManifest,
    ManifestEntry,
    Scenario,
    Split,
    load_image,
    load_manifest,
    rgb_to_yuv,
    save_manifest,
    split_manifest,
    yuv_to_rgb,
)
from biqa.errors import (
    BadFractions,
    DecodeFailure,
    DegenerateSplit,
    DuplicatePath,
    MalformedRow,
    MissingFile,
    MosOutOfDeclaredRange,
    UnsupportedBitDepth,
)


def write_manifest(path, body):
    path.write_text(body, encoding="utf-8")
    return path


BASIC = """\
# scenario=Authentic
# mos_range=1.0,5.0
image_path,mos,reference_id
a.png,1.0,
b.png,3.5,
c.png,5.0,
"""


def test_load_basic_manifest(tmp_path):
    m = load_manifest(write_manifest(tmp_path / "m.csv", BASIC))
    assert len(m) == 3
    assert m.scenario is Scenario.AUTHENTIC
    assert m.mos_range == (1.0, 5.0)
    assert [e.mos for e in m.entries] == [1.0, 3.5, 5.0]
    assert all(e.split is Split.UNASSIGNED for e in m.entries)


def test_missing_manifest(tmp_path):
    with pytest.raises(MissingFile):
        load_manifest(tmp_path / "nope.csv")


def test_synthetic_requires_reference_id(tmp_path):
    body = BASIC.replace("Authentic", "Synthetic")
    with pytest.raises(MalformedRow) as exc:
        load_manifest(write_manifest(tmp_path / "m.csv", body))
    assert exc.value.line_number == 4


def test_malformed_mos_reports_line(tmp_path):
    body = BASIC.replace("b.png,3.5,", "b.png,abc,")
    with pytest.raises(MalformedRow) as exc:
        load_manifest(write_manifest(tmp_path / "m.csv", body))
    assert "line 5" in str(exc.value)


def test_duplicate_path_rejected(tmp_path):
    body = BASIC.replace("c.png", "a.png")
    with pytest.raises(DuplicatePath):
        load_manifest(write_manifest(tmp_path / "m.csv", body))


def test_mos_outside_declared_range(tmp_path):
    body = BASIC.replace("mos_range=1.0,5.0", "mos_range=2.0,5.0")
    with pytest.raises(MosOutOfDeclaredRange):
        load_manifest(write_manifest(tmp_path / "m.csv", body))


def test_missing_declarations(tmp_path):
    no_scenario = BASIC.replace("# scenario=Authentic\n", "")
    with pytest.raises(MalformedRow):
        load_manifest(write_manifest(tmp_path / "a.csv", no_scenario))
    no_range = BASIC.replace("# mos_range=1.0,5.0\n", "")
    with pytest.raises(MalformedRow):
        load_manifest(write_manifest(tmp_path / "b.csv", no_range))
    bad_header = BASIC.replace("image_path,mos,reference_id", "path,mos,ref")
    with pytest.raises(MalformedRow):
        load_manifest(write_manifest(tmp_path / "c.csv", bad_header))


def test_split_column_round_trip(tmp_path):
    m = load_manifest(write_manifest(tmp_path / "m.csv", BASIC))
    m = split_manifest(m, seed=3, fractions=(0.34, 0.33, 0.33))
    out = tmp_path / "out.csv"
    save_manifest(m, out)
    again = load_manifest(out)
    assert [e.split for e in again.entries] == [e.split for e in m.entries]
    # canonical writer: a second save of the reloaded manifest is byte-equal
    out2 = tmp_path / "out2.csv"
    save_manifest(again, out2)
    assert out.read_bytes() == out2.read_bytes()


def test_toy_manifest_round_trips_byte_identically(toy_root, tmp_path):
    root, _ = toy_root
    src = root / "manifest.csv"
    m = load_manifest(src)
    dst = tmp_path / "copy.csv"
    save_manifest(m, dst)
    assert src.read_bytes() == dst.read_bytes()


def make_synthetic_manifest(n_refs, per_ref):
    entries = [
        ManifestEntry(f"img_{r}_{i}.png", 1.0 + (i % 5), f"ref{r}")
        for r in range(n_refs)
        for i in range(per_ref)
    ]
    return DatasetManifest(entries, Scenario.SYNTHETIC, (1.0, 5.0))


def test_split_keeps_reference_groups_together():
    m = make_synthetic_manifest(5, 2)
    out = split_manifest(m, seed=0, fractions=(0.8, 0.0, 0.2))
    by_ref = {}
    for e in out.entries:
        by_ref.setdefault(e.reference_id, set()).add(e.split)
    assert all(len(s) == 1 for s in by_ref.values())


def test_split_deterministic():
    m = make_synthetic_manifest(7, 3)
    a = split_manifest(m, seed=11, fractions=(0.72, 0.08, 0.20))
    b = split_manifest(m, seed=11, fractions=(0.72, 0.08, 0.20))
    assert [e.split for e in a.entries] == [e.split for e in b.entries]


def test_authentic_split_counts_exact():
    entries = [ManifestEntry(f"i{k}.png", 2.0) for k in range(100)]
    m = DatasetManifest(entries, Scenario.AUTHENTIC, (1.0, 5.0))
    for seed in range(10):
        out = split_manifest(m, seed=seed, fractions=(0.72, 0.08, 0.20))
        counts = {s: 0 for s in Split}
        for e in out.entries:
            counts[e.split] += 1
        assert counts[Split.TRAIN] == 72
        assert counts[Split.VAL] == 8
        assert counts[Split.TEST] == 20


def test_split_purity_property(rng):
    # reference -> split stays single-valued over random group structures
    for trial in range(20):
        n_refs = int(rng.integers(3, 12))
        per_ref = [int(rng.integers(1, 6)) for _ in range(n_refs)]
        entries = [
            ManifestEntry(f"t{trial}_r{r}_{i}.png", 3.0, f"ref{r}")
            for r in range(n_refs)
            for i in range(per_ref[r])
        ]
        m = DatasetManifest(entries, Scenario.SYNTHETIC, (1.0, 5.0))
        out = split_manifest(m, seed=trial, fractions=(0.5, 0.25, 0.25))
        seen = {}
        for e in out.entries:
            assert seen.setdefault(e.reference_id, e.split) is e.split


def test_bad_fractions():
    m = make_synthetic_manifest(5, 1)
    with pytest.raises(BadFractions):
        split_manifest(m, 0, (0.5, 0.5, 0.5))
    with pytest.raises(BadFractions):
        split_manifest(m, 0, (-0.2, 0.6, 0.6))


def test_degenerate_split():
    m = make_synthetic_manifest(3, 1)
    with pytest.raises(DegenerateSplit):
        # 3 units cannot give every positive fraction a whole unit
        split_manifest(m, 0, (0.9, 0.05, 0.05))


def save_rgb(path, arr):
    Image.fromarray(arr.astype(np.uint8), mode="RGB").save(path)
    return path


def test_load_image_white_point(tmp_path):
    p = save_rgb(tmp_path / "w.png", np.full((16, 16, 3), 255))
    img = load_image(p)
    assert np.allclose(img.y_plane, 255.0)
    assert np.allclose(img.u_plane, 0.0, atol=1e-9)
    assert np.allclose(img.v_plane, 0.0, atol=1e-9)


def test_load_image_black_point(tmp_path):
    p = save_rgb(tmp_path / "b.png", np.zeros((16, 16, 3)))
    img = load_image(p)
    for plane in img.planes():
        assert np.allclose(plane, 0.0)


def test_rgb_yuv_matrix_inverts(rng, tmp_path):
    arr = rng.integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
    p = save_rgb(tmp_path / "r.png", arr)
    img = load_image(p)
    back = yuv_to_rgb(img)
    assert np.abs(back - arr).max() < 0.5 / 255.0 * 255.0  # half a code value


def test_yuv_round_trip_real_arithmetic(rng):
    rgb = rng.uniform(0, 255, size=(12, 12, 3))
    img = rgb_to_yuv(rgb)
    again = rgb_to_yuv(yuv_to_rgb(img))
    for a, b in zip(img.planes(), again.planes()):
        assert np.abs(a - b).max() < 1e-6


def test_grayscale_maps_to_luma(tmp_path):
    arr = np.arange(64, dtype=np.uint8).reshape(8, 8)
    p = tmp_path / "g.png"
    Image.fromarray(arr, mode="L").save(p)
    img = load_image(p)
    assert np.array_equal(img.y_plane, arr.astype(np.float64))
    assert not img.u_plane.any()
    assert not img.v_plane.any()


def test_sixteen_bit_rejected(tmp_path):
    arr = (np.arange(64).reshape(8, 8) * 1000).astype(np.uint16)
    p = tmp_path / "deep.png"
    Image.fromarray(arr).save(p)
    with pytest.raises(UnsupportedBitDepth):
        load_image(p)


def test_decode_failure(tmp_path):
    p = tmp_path / "junk.png"
    p.write_bytes(b"not an image at all")
    with pytest.raises(DecodeFailure):
        load_image(p)


def test_yuv_matrix_rows():
    # luma row is the BT.601 triple; chroma rows scaled to half-range
    assert np.allclose(dataset.YUV_FROM_RGB[0], [0.299, 0.587, 0.114])
    assert np.allclose(dataset.YUV_FROM_RGB[1] @ [1, 1, 1], 0.0, atol=1e-12)
    assert np.allclose(dataset.YUV_FROM_RGB[2] @ [1, 1, 1], 0.0, atol=1e-12)
    # blue and red carry the 0.5 peaks
    assert np.isclose(dataset.YUV_FROM_RGB[1][2], 0.5)
    assert np.isclose(dataset.YUV_FROM_RGB[2][0], 0.5)
