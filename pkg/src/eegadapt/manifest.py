"""Dataset manifests: per-recording metadata, class tables, and
subject-independent splitting.

A manifest is a JSON document:

    {
      "classes": {"cat": 0, "dog": 1},
      "montage": "builtin-table1",          # or a map file path
      "recordings": [
        {"path": "rec/s01_000.raw",
         "format": "f32-binary",            # or "delimited-text"
         "channel_labels": ["Fp1", ...],
         "sample_rate_hz": 200.0,
         "resolution": [0.1, ...],          # optional; marks quantized data
         "label": "cat",
         "subject_id": "s01",
         "split": "train"}                  # train | val | test | unassigned
      ]
    }

Recording paths are resolved relative to the manifest file. Quantized
recordings (those with a resolution vector) are converted to microvolts at
load time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import QuantizedRecording, Recording, quantized_to_microvolts
from .errors import ConfigurationError, ManifestError
from .fileio import read_recording_binary, read_recording_text

logger = logging.getLogger(__name__)

__all__ = [
    "RecordingEntry",
    "DatasetManifest",
    "load_manifest",
    "load_recording",
    "split_subject_independent",
]

FORMATS = ("f32-binary", "delimited-text")
SPLITS = ("train", "val", "test", "unassigned")


@dataclass
class RecordingEntry:
    path: str
    format: str
    channel_labels: list[str]
    sample_rate_hz: float
    label: str
    subject_id: str
    split: str = "unassigned"
    resolution: list[float] | None = None


@dataclass
class DatasetManifest:
    classes: dict[str, int]
    recordings: list[RecordingEntry]
    montage: str = "builtin-table1"
    base_dir: Path = field(default_factory=Path)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def subjects(self) -> list[str]:
        return sorted({entry.subject_id for entry in self.recordings})

    def entries_for_split(self, split: str) -> list[RecordingEntry]:
        if split == "all":
            return list(self.recordings)
        return [e for e in self.recordings if e.split == split]


def _validate_classes(classes: dict) -> dict[str, int]:
    if not classes:
        raise ManifestError("manifest defines no classes")
    table = {}
    for name, idx in classes.items():
        if not isinstance(idx, int):
            raise ManifestError(f"class {name!r} has non-integer index {idx!r}")
        table[str(name)] = idx
    indices = sorted(table.values())
    if len(set(indices)) != len(indices):
        raise ManifestError("duplicate class indices in manifest")
    if indices != list(range(len(indices))):
        raise ManifestError(
            f"class indices must be dense 0..{len(indices) - 1}, got {indices}"
        )
    return table


def _validate_entry(i: int, raw: dict, classes: dict[str, int],
                    base_dir: Path) -> RecordingEntry:
    where = f"recording entry {i}"

    def need(key):
        if key not in raw:
            raise ManifestError(f"{where} is missing {key!r}")
        return raw[key]

    fmt = need("format")
    if fmt not in FORMATS:
        raise ManifestError(f"{where}: unknown format tag {fmt!r}")
    split = raw.get("split", "unassigned")
    if split not in SPLITS:
        raise ManifestError(f"{where}: unknown split tag {split!r}")
    label = str(need("label"))
    if label not in classes:
        raise ManifestError(f"{where}: label {label!r} is not in the class table")
    rate = float(need("sample_rate_hz"))
    if rate <= 0:
        raise ManifestError(f"{where}: sample_rate_hz must be positive")
    labels = [str(s) for s in need("channel_labels")]
    if not labels:
        raise ManifestError(f"{where}: channel_labels is empty")
    path = str(need("path"))
    if not (base_dir / path).exists():
        raise ManifestError(f"{where}: file not found: {base_dir / path}")
    resolution = raw.get("resolution")
    if resolution is not None:
        resolution = [float(v) for v in resolution]
        if len(resolution) != len(labels):
            raise ManifestError(
                f"{where}: resolution has {len(resolution)} entries for "
                f"{len(labels)} channels"
            )
        if any(v <= 0 for v in resolution):
            raise ManifestError(f"{where}: resolution entries must be positive")
    return RecordingEntry(
        path=path,
        format=fmt,
        channel_labels=labels,
        sample_rate_hz=rate,
        label=label,
        subject_id=str(need("subject_id")),
        split=split,
        resolution=resolution,
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest; errors name the offending entry."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path} must contain a JSON object")
    classes = _validate_classes(doc.get("classes", {}))
    base_dir = path.parent
    raw_entries = doc.get("recordings", [])
    if not raw_entries:
        raise ManifestError(f"{path} lists no recordings")
    entries = [
        _validate_entry(i, raw, classes, base_dir)
        for i, raw in enumerate(raw_entries)
    ]
    return DatasetManifest(
        classes=classes,
        recordings=entries,
        montage=str(doc.get("montage", "builtin-table1")),
        base_dir=base_dir,
    )


def load_recording(entry: RecordingEntry, classes: dict[str, int],
                   base_dir: Path) -> Recording:
    """Read one entry's matrix and return it in microvolts."""
    full = base_dir / entry.path
    if entry.format == "f32-binary":
        data = read_recording_binary(full)
    else:
        data = read_recording_text(full)
    if data.shape[0] != len(entry.channel_labels):
        raise ManifestError(
            f"{entry.path}: file holds {data.shape[0]} channels, manifest "
            f"lists {len(entry.channel_labels)}"
        )
    label_index = classes[entry.label]
    if entry.resolution is not None:
        quantized = QuantizedRecording(
            channel_labels=entry.channel_labels,
            sample_rate_hz=entry.sample_rate_hz,
            data=np.rint(data).astype(np.int64),
            resolution=np.array(entry.resolution),
            subject_id=entry.subject_id,
            label=label_index,
        )
        return quantized_to_microvolts(quantized)
    return Recording(
        channel_labels=entry.channel_labels,
        sample_rate_hz=entry.sample_rate_hz,
        data=data,
        subject_id=entry.subject_id,
        label=label_index,
    )


def split_subject_independent(manifest: DatasetManifest, fractions,
                              seed: int = 0) -> DatasetManifest:
    """Assign splits so every subject's recordings land in exactly one split.

    ``fractions`` is (train, val, test) summing to 1. Subjects are shuffled
    with the seed and partitioned by largest-remainder counts; the manifest
    comes back with every entry assigned.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigurationError("fractions must be 3 non-negative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"fractions must sum to 1, got {sum(fractions)}")
    subjects = manifest.subjects()
    if len(subjects) < 3:
        raise ConfigurationError(
            f"need at least 3 subjects to form 3 splits, got {len(subjects)}"
        )
    rng = np.random.default_rng(seed)
    shuffled = [subjects[i] for i in rng.permutation(len(subjects))]

    n = len(subjects)
    exact = [f * n for f in fractions]
    counts = [int(np.floor(v)) for v in exact]
    remainders = [v - c for v, c in zip(exact, counts)]
    while sum(counts) < n:
        best = int(np.argmax(remainders))
        counts[best] += 1
        remainders[best] = -1.0
    # Every split must receive at least one subject.
    for i in range(3):
        if counts[i] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[i] += 1

    assignment: dict[str, str] = {}
    cursor = 0
    for split_name, count in zip(("train", "val", "test"), counts):
        for sid in shuffled[cursor : cursor + count]:
            if sid in assignment:
                raise ConfigurationError(
                    f"subject {sid} assigned to two splits; partition is broken"
                )
            assignment[sid] = split_name
        cursor += count
    if set(assignment) != set(subjects):
        raise ConfigurationError("subject partition did not cover every subject")

    entries = []
    for entry in manifest.recordings:
        entries.append(RecordingEntry(
            path=entry.path,
            format=entry.format,
            channel_labels=list(entry.channel_labels),
            sample_rate_hz=entry.sample_rate_hz,
            label=entry.label,
            subject_id=entry.subject_id,
            split=assignment[entry.subject_id],
            resolution=list(entry.resolution) if entry.resolution else None,
        ))
    logger.debug("subject split counts: %s", counts)
    return DatasetManifest(
        classes=dict(manifest.classes),
        recordings=entries,
        montage=manifest.montage,
        base_dir=manifest.base_dir,
    )
