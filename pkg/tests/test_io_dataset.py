import csv
import logging

import numpy as np
import pytest

from vrsketch import toy
from vrsketch.dataset import (MANIFEST_COLUMNS, ManifestError, ManifestRecord, convert_released_layout,
                              draw_heldout_participants, load_manifest, load_pair, make_splits,
                              stable_seed, write_manifest)
from vrsketch.geometry import ShapeMesh, Sketch, Stroke, is_normalized
from vrsketch.io import (FormatError, read_obj, read_sketch_json, read_xyz, write_obj, write_sketch_json,
                         write_xyz)


def _write_csv(path, rows, header=MANIFEST_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture
def files(tmp_path):
    (tmp_path / "sk").mkdir()
    (tmp_path / "sh").mkdir()
    for i in range(3):
        sketch, mesh = toy.make_toy_chair(i)
        write_sketch_json(tmp_path / "sk" / f"s{i}.json", sketch)
        write_obj(tmp_path / "sh" / f"m{i}.obj", mesh)
    return tmp_path


def _row(i, split="train", synthetic=0, rot=("", "", ""), pair=None, participant="P1", group="A"):
    return [pair or f"pair{i}", participant, group, split, f"sk/s{i}.json", f"sh/m{i}.obj", synthetic, *rot]


class TestFormats:
    def test_xyz_roundtrip(self, tmp_path, rng):
        cloud = rng.normal(size=(20, 3))
        write_xyz(tmp_path / "c.txt", cloud)
        np.testing.assert_allclose(read_xyz(tmp_path / "c.txt"), cloud, rtol=1e-8)

    def test_xyz_bad_row_names_path(self, tmp_path):
        (tmp_path / "bad.txt").write_text("1 2 3\n4 5\n")
        with pytest.raises(FormatError, match="bad.txt:2"):
            read_xyz(tmp_path / "bad.txt")

    def test_sketch_json_roundtrip(self, tmp_path):
        sketch = Sketch([Stroke([[0, 0, 0], [1, 0, 0], [1, 1, 0]], [0, 0.1, 0.3], 0.02)])
        write_sketch_json(tmp_path / "s.json", sketch)
        back = read_sketch_json(tmp_path / "s.json")
        np.testing.assert_allclose(back.strokes[0].points, sketch.strokes[0].points)
        np.testing.assert_allclose(back.strokes[0].times, [0, 0.1, 0.3])
        assert back.strokes[0].width == 0.02

    def test_sketch_json_malformed(self, tmp_path):
        (tmp_path / "s.json").write_text('{"strokes": [{"width": 1, "points": [[0, 0, 0]]}]}')
        with pytest.raises(FormatError, match="s.json"):
            read_sketch_json(tmp_path / "s.json")

    def test_obj_ignores_other_records_and_triangulates(self, tmp_path):
        (tmp_path / "m.obj").write_text(
            "# comment\nmtllib x.mtl\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\n"
            "usemtl a\nf 1/1/1 2/2/1 3/3/1 4/4/1\n")
        mesh = read_obj(tmp_path / "m.obj")
        assert mesh.faces.shape == (2, 3)
        assert mesh.face_areas().sum() == pytest.approx(1.0)

    def test_obj_drops_degenerate_faces(self, tmp_path):
        mesh = ShapeMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], [[0, 1, 2], [0, 1, 3]])
        write_obj(tmp_path / "m.obj", mesh)
        assert len(read_obj(tmp_path / "m.obj").faces) == 1

    def test_obj_negative_indices(self, tmp_path):
        (tmp_path / "m.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
        np.testing.assert_array_equal(read_obj(tmp_path / "m.obj").faces, [[0, 1, 2]])

    def test_obj_corrupt(self, tmp_path):
        (tmp_path / "m.obj").write_text("v 0 0\nf 1 2 3\n")
        with pytest.raises(FormatError, match="m.obj"):
            read_obj(tmp_path / "m.obj")


class TestManifest:
    def test_three_rows(self, files):
        _write_csv(files / "m.csv", [_row(i) for i in range(3)])
        snap = load_manifest(files / "m.csv")
        assert len(snap.records) == 3
        assert snap.records[0].shape_id == "m0"
        assert snap.records[0].sketch_path == files / "sk" / "s0.json"

    def test_duplicate_pair_id(self, files):
        _write_csv(files / "m.csv", [_row(0, pair="dup"), _row(1, pair="dup")])
        with pytest.raises(ManifestError, match="duplicate pair_id 'dup'"):
            load_manifest(files / "m.csv")

    def test_missing_columns(self, files):
        _write_csv(files / "m.csv", [["a", "b"]], header=("pair_id", "participant_id"))
        with pytest.raises(ManifestError, match="missing column"):
            load_manifest(files / "m.csv")

    def test_unresolvable_path_lists_row(self, files):
        rows = [_row(0), ["pairX", "P1", "A", "train", "sk/nope.json", "sh/m1.obj", 0, "", "", ""]]
        _write_csv(files / "m.csv", rows)
        with pytest.raises(ManifestError) as err:
            load_manifest(files / "m.csv")
        assert any("row 3" in p and "nope.json" in p for p in err.value.problems)

    def test_synthetic_in_test_rejected(self, files):
        _write_csv(files / "m.csv", [_row(0, split="test", synthetic=1)])
        with pytest.raises(ManifestError, match="synthetic"):
            load_manifest(files / "m.csv")

    def test_alignment_parsed(self, files):
        _write_csv(files / "m.csv", [_row(0, rot=("0", "0", "90")), _row(1, rot=("0", "0", "0"))])
        snap = load_manifest(files / "m.csv")
        assert snap.records[0].alignment_fix == (0.0, 0.0, 90.0)
        assert snap.records[1].alignment_fix is None

    def test_gallery_excludes_train_and_val_shapes(self, files):
        rows = [_row(0, split="train"), _row(1, split="test"),
                ["g2", "", "A", "gallery_only", "", "sh/m2.obj", 0, "", "", ""]]
        _write_csv(files / "m.csv", rows)
        snap = load_manifest(files / "m.csv")
        assert snap.gallery_ids == ["m1", "m2"]

    def test_write_manifest_roundtrip(self, files):
        _write_csv(files / "m.csv", [_row(0, rot=("10", "0", "0")), _row(1, split="val")])
        snap = load_manifest(files / "m.csv")
        write_manifest(files / "m2.csv", snap.records)
        assert load_manifest(files / "m2.csv").records == snap.records


def _records(layout):
    """layout: list of (participant, group, count, synthetic)"""
    out = []
    k = 0
    for participant, group, count, synthetic in layout:
        for _ in range(count):
            out.append(ManifestRecord(f"r{k:04d}", participant, group, "train", None, f"shapes/s{k:04d}.obj",
                                      synthetic))
            k += 1
    return out


class TestMakeSplits:
    def test_heldout_participant_all_test(self):
        snap = make_splits(_records([("H", "A", 10, False), ("P", "A", 10, False)]), ["H"])
        assert [r.split for r in snap.records if r.participant_id == "H"] == ["test"] * 10

    def test_proportional_7_1_2(self):
        snap = make_splits(_records([("P", "A", 10, False)]), [])
        assert snap.counts() == {"train": 7, "val": 1, "test": 2, "gallery_only": 0}

    def test_deterministic_given_seed(self):
        recs = _records([("P", "A", 30, False), ("Q", "B", 40, False)])
        assert make_splits(recs, [], seed=3).records == make_splits(recs, [], seed=3).records
        assert make_splits(recs, [], seed=3).records != make_splits(recs, [], seed=4).records

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            make_splits(_records([("P", "A", 3, False)]), [], ratios=(7, 0, 2))

    def test_unknown_heldout(self):
        with pytest.raises(ValueError):
            make_splits(_records([("P", "A", 3, False)]), ["nobody"])

    def test_synthetic_only_train(self):
        snap = make_splits(_records([("P", "A", 20, False), ("S", "A", 20, True)]), [])
        assert all(r.split == "train" for r in snap.records if r.is_synthetic)

    def test_shared_shapes_never_straddle(self):
        recs = _records([("P", "A", 20, False)])
        # a second participant sketches the same shapes
        recs += [ManifestRecord(f"dup{i}", "Q", "B", "train", None, r.shape_path) for i, r in enumerate(recs)]
        snap = make_splits(recs, [])
        by_shape = {}
        for r in snap.records:
            by_shape.setdefault(r.shape_id, set()).add(r.split)
        assert all(len(s) == 1 for s in by_shape.values())
        train_val = {r.shape_id for r in snap.records if r.split in ("train", "val")}
        assert not train_val & set(snap.gallery_ids)
        assert {r.shape_id for r in snap.split("test")} <= set(snap.gallery_ids)

    def test_full_scale_counts(self):
        # 46 group-A participants x 10 + group-B unique-shape counts 21/72/330/120
        layout = [(f"A{i:02d}", "A", 10, False) for i in range(46)]
        layout += [("B1", "B", 21, False), ("B2", "B", 72, False), ("B3", "B", 330, False), ("B4", "B", 120, False)]
        recs = _records(layout)
        assert len(recs) == 1003
        heldout = draw_heldout_participants(recs, 5, seed=0)
        snap = make_splits(recs, heldout, seed=0)
        c = snap.counts()
        assert [r.split for r in snap.records if r.participant_id in heldout] == ["test"] * 50
        # per-participant rounding keeps totals near 7:1:2 of the non-held-out sketches
        rest = 1003 - 50
        assert abs(c["train"] - 0.7 * rest) <= 10
        assert abs(c["val"] - 0.1 * rest) <= 10
        assert c["train"] + c["val"] + c["test"] == 1003


class TestLoadPair:
    def _record(self, tmp_path, sketch_file, rotation=None):
        _, mesh = toy.make_toy_chair(0)
        write_obj(tmp_path / "shape.obj", mesh)
        return ManifestRecord("pair", "P", "A", "train", sketch_file, tmp_path / "shape.obj",
                              alignment_fix=rotation)

    def test_rotation_applied_before_normalization(self, tmp_path):
        write_sketch_json(tmp_path / "s.json", Sketch([Stroke([[0, 0, 0], [2, 0, 0]], [0, 1], 0.01)]))
        rec = self._record(tmp_path, tmp_path / "s.json", (0, 0, 90))
        sketch, shape = load_pair(rec, 16)
        np.testing.assert_allclose(sketch[:, 0], 0, atol=1e-9)
        np.testing.assert_allclose(sorted(sketch[:, 1])[::15], [-0.5, 0.5], atol=1e-9)
        raw, _ = load_pair(rec, 16, aligned=False)
        np.testing.assert_allclose(raw[:, 1], 0, atol=1e-9)
        assert is_normalized(sketch) and is_normalized(shape)

    def test_no_alignment_is_identity(self, tmp_path):
        write_sketch_json(tmp_path / "s.json", Sketch([Stroke([[0, 0, 0], [2, 0, 0]], [0, 1], 0.01)]))
        rec = self._record(tmp_path, tmp_path / "s.json")
        a, _ = load_pair(rec, 16)
        b, _ = load_pair(rec, 16, aligned=False)
        np.testing.assert_array_equal(a, b)

    def test_point_cloud_sketch(self, tmp_path, rng):
        write_xyz(tmp_path / "s.txt", rng.normal(size=(100, 3)))
        sketch, shape = load_pair(self._record(tmp_path, tmp_path / "s.txt"), 32)
        assert sketch.shape == (32, 3) and is_normalized(sketch)
        write_xyz(tmp_path / "few.txt", rng.normal(size=(10, 3)))
        small, _ = load_pair(self._record(tmp_path, tmp_path / "few.txt"), 32)
        assert small.shape == (32, 3)

    def test_deterministic(self, tmp_path):
        sketch, _ = toy.make_toy_chair(4)
        write_sketch_json(tmp_path / "s.json", sketch)
        rec = self._record(tmp_path, tmp_path / "s.json")
        a = load_pair(rec, 64)
        b = load_pair(rec, 64)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_malformed_names_path(self, tmp_path):
        (tmp_path / "s.json").write_text("not json")
        with pytest.raises(FormatError, match="s.json"):
            load_pair(self._record(tmp_path, tmp_path / "s.json"), 16)


def test_stable_seed():
    assert stable_seed("abc") == stable_seed("abc") != stable_seed("abd")


def test_toy_dataset_and_converter(tmp_path, caplog):
    manifest = toy.write_toy_dataset(tmp_path / "toy", n_participants=3, sketches_per_participant=4)
    snap = load_manifest(manifest)
    assert len(snap.records) == 12 + 5

    root = tmp_path / "released"
    (root / "sketches").mkdir(parents=True)
    (root / "shapes").mkdir()
    (root / "splits").mkdir()
    rows = ["pair_id,participant_id,group,shape_id,rx,ry,rz"]
    for i in range(4):
        sketch, mesh = toy.make_toy_chair(i)
        write_sketch_json(root / "sketches" / f"p{i}.json", sketch)
        write_obj(root / "shapes" / f"c{i}.obj", mesh)
        rows.append(f"p{i},U{i % 2},A,c{i},,,{90 if i == 0 else ''}")
    write_obj(root / "shapes" / "c9.obj", toy.make_toy_chair(9)[1])
    (root / "pairs.csv").write_text("\n".join(rows) + "\n")
    (root / "splits" / "test.txt").write_text("p3\n")
    (root / "splits" / "val.txt").write_text("p2\n")
    (root / "gallery.txt").write_text("c3\nc9\n")
    snap = convert_released_layout(root, root / "manifest.csv")
    assert snap.counts() == {"train": 2, "val": 1, "test": 1, "gallery_only": 1}
    assert snap.gallery_ids == ["c3", "c9"]
    assert snap.records[0].alignment_fix == (0.0, 0.0, 90.0)
