"""On-disk formats: binary recordings, array bundles, and embedding tables.

Binary recording (.raw):
    bytes 0..7    magic ``EEGREC01``
    bytes 8..11   uint32 little-endian channel count E
    bytes 12..15  uint32 little-endian sample count T
    bytes 16..    E*T float32 little-endian values, row-major (channel, time)

Array bundle (window sets and checkpoints):
    bytes 0..7    magic ``EEGBNDL1``
    bytes 8..15   uint64 little-endian header length H
    next H bytes  UTF-8 JSON: {"meta": ..., "arrays": [{name, dtype, shape}]}
    next bytes    each array's raw little-endian C-order bytes, in order
    last 4 bytes  uint32 little-endian CRC-32 of everything before it

Embedding table: delimited text, one row per sample, ``embed_dim`` float
columns then the integer label then the subject id, comma separated; lines
beginning with ``#`` are header comments.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import IntegrityError, ManifestError

__all__ = [
    "write_recording_binary",
    "read_recording_binary",
    "write_recording_text",
    "read_recording_text",
    "write_bundle",
    "read_bundle",
    "write_embeddings_text",
    "read_embeddings_text",
]

RECORDING_MAGIC = b"EEGREC01"
BUNDLE_MAGIC = b"EEGBNDL1"

_ALLOWED_DTYPES = {"<f8", "<f4", "<i8"}


def write_recording_binary(path: str | Path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise IntegrityError(f"recording data must be 2-D, got shape {data.shape}")
    e, t = data.shape
    payload = data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(RECORDING_MAGIC)
        fh.write(struct.pack("<II", e, t))
        fh.write(payload)


def read_recording_binary(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise IntegrityError(f"recording file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:8] != RECORDING_MAGIC:
        raise IntegrityError(f"{path} is not a binary recording (bad magic)")
    e, t = struct.unpack("<II", raw[8:16])
    expected = 16 + 4 * e * t
    if len(raw) != expected:
        raise IntegrityError(
            f"{path} is {len(raw)} bytes; {e}x{t} recording needs {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(e, t)
    return data.astype(np.float64)


def write_recording_text(path: str | Path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float64)
    lines = [",".join(repr(float(v)) for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_recording_text(path: str | Path) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise IntegrityError(f"{path} is not a delimited recording: {exc}") from exc
    return data


def write_bundle(path: str | Path, meta: dict,
                 arrays: list[tuple[str, np.ndarray]]) -> None:
    specs = []
    payload = bytearray()
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<").str
        if dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
            dtype = "<f8"
        specs.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payload.extend(arr.astype(dtype).tobytes(order="C"))
    header = json.dumps({"meta": meta, "arrays": specs},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = BUNDLE_MAGIC + struct.pack("<Q", len(header)) + header + bytes(payload)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def read_bundle(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise IntegrityError(f"file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:8] != BUNDLE_MAGIC:
        raise IntegrityError(f"{path} is not an array bundle (bad magic)")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError(f"{path} failed its checksum; file is corrupt")
    header_len = struct.unpack("<Q", raw[8:16])[0]
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path} has a corrupt header: {exc}") from exc
    offset = 16 + header_len
    arrays: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = dtype.itemsize * count
        if offset + nbytes > len(raw) - 4:
            raise IntegrityError(f"{path} is truncated inside array {spec['name']}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).copy()
        offset += nbytes
    if offset != len(raw) - 4:
        raise IntegrityError(f"{path} carries {len(raw) - 4 - offset} unexpected bytes")
    return header["meta"], arrays


def write_embeddings_text(path: str | Path, embeddings: np.ndarray,
                          labels: np.ndarray, subject_ids,
                          header_lines=()) -> None:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    subject_ids = [str(s) for s in subject_ids]
    if any("," in s or "\n" in s for s in subject_ids):
        raise ManifestError("subject ids must not contain commas or newlines")
    lines = [f"# {line}" for line in header_lines]
    for row, label, sid in zip(embeddings, labels, subject_ids):
        values = ",".join(repr(float(v)) for v in row)
        lines.append(f"{values},{label},{sid}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_embeddings_text(path: str | Path):
    embeddings, labels, subjects = [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) < 3:
            raise IntegrityError(f"{path}:{lineno}: expected values,label,subject")
        try:
            embeddings.append([float(v) for v in parts[:-2]])
            labels.append(int(parts[-2]))
        except ValueError as exc:
            raise IntegrityError(f"{path}:{lineno}: {exc}") from exc
        subjects.append(parts[-1])
    if not embeddings:
        raise IntegrityError(f"{path} contains no embedding rows")
    return np.array(embeddings), np.array(labels, dtype=np.int64), subjects
