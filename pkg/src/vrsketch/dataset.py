"""Manifest-driven ingestion, split construction and sketch/shape pairing."""

from __future__ import annotations

import csv
import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import DEFAULT_N_POINTS
from .io import FormatError, read_obj, read_sketch_json, read_xyz

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("pair_id", "participant_id", "group", "split", "sketch_path",
                    "shape_path", "is_synthetic", "rx", "ry", "rz")
SPLITS = ("train", "val", "test", "gallery_only")
GROUPS = ("A", "B")


class ManifestError(ValueError):
    """Manifest rows failed validation; ``problems`` lists every offender."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid manifest:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class ManifestRecord:
    pair_id: str
    participant_id: str
    group: str
    split: str
    sketch_path: Path | None
    shape_path: Path
    is_synthetic: bool = False
    alignment_fix: tuple[float, float, float] | None = None

    @property
    def shape_id(self) -> str:
        return Path(self.shape_path).stem


@dataclass
class DatasetSnapshot:
    records: list[ManifestRecord]
    gallery_ids: list[str]
    heldout_participants: tuple[str, ...] = ()
    notes: list[str] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def counts(self) -> dict[str, int]:
        return {name: len(self.split(name)) for name in SPLITS}


def stable_seed(key: str) -> int:
    """64-bit seed derived from a string, stable across processes."""
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "y"):
        return True
    if value in ("0", "false", "no", "n", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_rotation(rx: str, ry: str, rz: str):
    if not any(v.strip() for v in (rx, ry, rz)):
        return None
    angles = tuple(float(v) if v.strip() else 0.0 for v in (rx, ry, rz))
    return None if not any(angles) else angles


def build_gallery_ids(records) -> list[str]:
    """Test and gallery-only shapes, minus anything seen in train or val."""
    excluded = {r.shape_id for r in records if r.split in ("train", "val")}
    ids = {r.shape_id for r in records if r.split in ("test", "gallery_only")}
    return sorted(ids - excluded)


def validate_records(records) -> list[str]:
    problems = []
    seen = set()
    for r in records:
        if r.pair_id in seen:
            problems.append(f"duplicate pair_id {r.pair_id!r}")
        seen.add(r.pair_id)
        if r.is_synthetic and r.split in ("val", "test"):
            problems.append(f"{r.pair_id}: synthetic record in {r.split} split")
    return problems


def load_manifest(path, check_paths: bool = True) -> DatasetSnapshot:
    """Read and validate a manifest CSV. Paths are relative to the CSV's folder."""
    path = Path(path)
    base = path.parent
    if not path.is_file():
        raise ManifestError([f"manifest not found: {path}"])
    problems = []
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError([f"missing column(s): {', '.join(missing)}"])
        for rowno, row in enumerate(reader, start=2):
            try:
                split = row["split"].strip()
                if split not in SPLITS:
                    raise ValueError(f"unknown split {split!r}")
                group = row["group"].strip()
                if group not in GROUPS:
                    raise ValueError(f"unknown group {group!r}")
                sketch = row["sketch_path"].strip()
                shape = row["shape_path"].strip()
                if not shape:
                    raise ValueError("empty shape_path")
                if not sketch and split != "gallery_only":
                    raise ValueError("empty sketch_path")
                rec = ManifestRecord(
                    pair_id=row["pair_id"].strip(),
                    participant_id=row["participant_id"].strip(),
                    group=group,
                    split=split,
                    sketch_path=(base / sketch) if sketch else None,
                    shape_path=base / shape,
                    is_synthetic=_parse_bool(row["is_synthetic"]),
                    alignment_fix=_parse_rotation(row["rx"], row["ry"], row["rz"]),
                )
            except ValueError as exc:
                problems.append(f"row {rowno}: {exc}")
                continue
            if check_paths:
                for p in (rec.sketch_path, rec.shape_path):
                    if p is not None and not p.exists():
                        problems.append(f"row {rowno}: unresolvable path {p}")
            records.append(rec)
    problems += validate_records(records)
    if problems:
        raise ManifestError(problems)
    return DatasetSnapshot(records, build_gallery_ids(records))


def write_manifest(path, records) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        if p is None:
            return ""
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            rot = r.alignment_fix or ("", "", "")
            writer.writerow([r.pair_id, r.participant_id, r.group, r.split, rel(r.sketch_path),
                             rel(r.shape_path), int(r.is_synthetic), *rot])


def _largest_remainder(n: int, ratios) -> list[int]:
    ratios = np.asarray(ratios, dtype=np.float64)
    share = n * ratios / ratios.sum()
    counts = np.floor(share).astype(int)
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    return counts.tolist()


def make_splits(records, heldout_participants=(), ratios=(7, 1, 2), seed: int = 0) -> DatasetSnapshot:
    """Assign train/val/test.

    Every sketch of a held-out participant goes to test. The remaining shapes
    are split per participant in the given proportions. All sketches of one
    shape follow that shape, so no shape straddles splits. Synthetic records
    only ever land in train. ``gallery_only`` rows are left alone.
    """
    ratios = tuple(ratios)
    if len(ratios) != 3 or any(not r > 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    records = list(records)
    participants = {r.participant_id for r in records}
    heldout = set(heldout_participants)
    unknown = heldout - participants
    if unknown:
        raise ValueError(f"held-out participants not in records: {sorted(unknown)}")

    rng = np.random.default_rng(seed)
    sketchable = [r for r in records if r.split != "gallery_only"]
    shape_split: dict[str, str] = {}
    for r in sketchable:
        if r.participant_id in heldout and not r.is_synthetic:
            shape_split[r.shape_id] = "test"

    # owner of a shape = participant of its first human sketch (by pair_id)
    owners: dict[str, list[str]] = defaultdict(list)
    owned = set(shape_split)
    for r in sorted((r for r in sketchable if not r.is_synthetic), key=lambda r: r.pair_id):
        if r.shape_id in owned:
            continue
        owned.add(r.shape_id)
        owners[r.participant_id].append(r.shape_id)
    for participant in sorted(owners):
        shapes = owners[participant]
        perm = rng.permutation(len(shapes))
        n_train, n_val, _ = _largest_remainder(len(shapes), ratios)
        for pos, j in enumerate(perm):
            shape_split[shapes[j]] = "train" if pos < n_train else "val" if pos < n_train + n_val else "test"

    out = []
    notes = []
    for r in records:
        if r.split == "gallery_only":
            out.append(r)
            continue
        split = shape_split.get(r.shape_id, "train")
        if r.is_synthetic and split != "train":
            notes.append(f"dropped synthetic {r.pair_id}: its shape is in {split}")
            logger.warning(notes[-1])
            continue
        out.append(replace(r, split=split))
    problems = validate_records(out)
    if problems:
        raise ManifestError(problems)
    return DatasetSnapshot(out, build_gallery_ids(out), tuple(sorted(heldout)), notes)


def draw_heldout_participants(records, count: int = 5, group: str = "A", seed: int = 0) -> list[str]:
    """Seeded draw of participants to hold out entirely for testing."""
    pool = sorted({r.participant_id for r in records if r.group == group and not r.is_synthetic})
    if count > len(pool):
        raise ValueError(f"only {len(pool)} group-{group} participants, asked for {count}")
    rng = np.random.default_rng(seed)
    return sorted(pool[i] for i in rng.choice(len(pool), size=count, replace=False))


def load_sketch_cloud(path, n: int, seed_key: str, rotation=None) -> np.ndarray:
    path = Path(path)
    rot = None if rotation is None else geometry.euler_rotation(rotation)
    if path.suffix.lower() == ".json":
        sketch = read_sketch_json(path)
        if rot is not None:
            sketch = geometry.Sketch([
                geometry.Stroke(s.points @ rot.T, s.times, s.width) for s in sketch.strokes
            ])
        try:
            return geometry.sample_sketch_cloud(sketch, n)
        except (ValueError, geometry.DegenerateInputError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
    cloud = read_xyz(path)
    if rot is not None:
        cloud = cloud @ rot.T
    cloud = geometry.fit_cloud_size(cloud, n, np.random.default_rng(stable_seed(seed_key)))
    try:
        return geometry.normalize_cloud(cloud)
    except geometry.DegenerateInputError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_shape_cloud(path, n: int, seed_key: str) -> np.ndarray:
    path = Path(path)
    rng = np.random.default_rng(stable_seed(seed_key))
    try:
        if path.suffix.lower() == ".obj":
            return geometry.sample_mesh_cloud(read_obj(path), n, rng)
        return geometry.normalize_cloud(geometry.fit_cloud_size(read_xyz(path), n, rng))
    except geometry.DegenerateInputError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_pair(record: ManifestRecord, n_points: int = DEFAULT_N_POINTS, aligned: bool = True):
    """Normalized ``(sketch_cloud, shape_cloud)`` for a record.

    The sketch is seeded from ``pair_id`` and the shape from its ``shape_id``,
    so one shape yields the same cloud wherever it appears.
    """
    sketch = load_record_sketch(record, n_points, aligned)
    shape = load_shape_cloud(record.shape_path, n_points, "shape:" + record.shape_id)
    return sketch, shape


def load_record_sketch(record: ManifestRecord, n_points: int = DEFAULT_N_POINTS,
                       aligned: bool = True) -> np.ndarray:
    if record.sketch_path is None:
        raise ValueError(f"{record.pair_id}: record has no sketch")
    rotation = record.alignment_fix if aligned else None
    return load_sketch_cloud(record.sketch_path, n_points, record.pair_id, rotation)


def convert_released_layout(root, out_manifest, split_files: bool = True) -> DatasetSnapshot:
    """Build a manifest from a dataset folder laid out as::

        root/pairs.csv            pair_id,participant_id,group,shape_id[,rx,ry,rz][,is_synthetic]
        root/sketches/<pair_id>.json | .txt
        root/shapes/<shape_id>.obj | .txt
        root/splits/{train,val,test}.txt   optional, one pair_id per line
        root/gallery.txt          optional, extra shape ids for retrieval

    Pairs absent from the split files are written as ``train``. Shapes listed
    in ``gallery.txt`` without a sketch become ``gallery_only`` rows.
    """
    root = Path(root)

    def find(folder: str, stem: str, suffixes) -> Path:
        for suffix in suffixes:
            p = root / folder / f"{stem}{suffix}"
            if p.exists():
                return p
        raise ManifestError([f"no file for {folder}/{stem} with suffix in {suffixes}"])

    split_of = {}
    if split_files:
        for name in ("train", "val", "test"):
            f = root / "splits" / f"{name}.txt"
            if f.exists():
                for line in f.read_text(encoding="utf-8").split():
                    split_of[line] = name
    records = []
    with (root / "pairs.csv").open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            pid = row["pair_id"].strip()
            rot = _parse_rotation(row.get("rx", ""), row.get("ry", ""), row.get("rz", ""))
            records.append(ManifestRecord(
                pair_id=pid,
                participant_id=row["participant_id"].strip(),
                group=row["group"].strip(),
                split=split_of.get(pid, "train"),
                sketch_path=find("sketches", pid, (".json", ".txt")),
                shape_path=find("shapes", row["shape_id"].strip(), (".obj", ".txt")),
                is_synthetic=_parse_bool(row.get("is_synthetic", "0") or "0"),
                alignment_fix=rot,
            ))
    sketched = {r.shape_id for r in records}
    gallery = root / "gallery.txt"
    if gallery.exists():
        for sid in gallery.read_text(encoding="utf-8").split():
            if sid not in sketched:
                records.append(ManifestRecord(f"gallery:{sid}", "", "A", "gallery_only", None,
                                              find("shapes", sid, (".obj", ".txt"))))
    problems = validate_records(records)
    if problems:
        raise ManifestError(problems)
    write_manifest(out_manifest, records)
    return load_manifest(out_manifest)
