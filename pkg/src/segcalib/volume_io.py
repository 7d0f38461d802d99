"""Bit-exact tensor container and dataset manifests.

Volumes are stored in a minimal little-endian binary layout:

    bytes 0..4   magic "CALV1"
    byte  5      dtype code (1 = float32, 2 = uint8, 3 = uint16, 4 = float64)
    bytes 6..13  rank as u64
    then         rank dims, each u64
    then         raw payload, C-order, little-endian

Probabilities are float32 by default; label maps are uint8 or uint16.
Gradient buffers exchanged with language bindings use float64 so that a
round-trip through the container preserves double precision exactly.
Round-trips are bitwise identical, which keeps results reproducible
across processes and across language bindings that speak the same
format.

A dataset manifest is a JSON file with fields ``cases`` (ordered list of
``{case_id, label, prediction?, logits?, image?}`` with paths relative to
the manifest), ``classes`` (channel names, index order), ``hec`` (optional
map of composite-class name to member class names), and ``split``.  Case
order is preserved exactly on load; it drives the deterministic order of
streamed computations.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CALV1"
_DTYPES = {
    1: np.dtype("<f4"),
    2: np.dtype("u1"),
    3: np.dtype("<u2"),
    4: np.dtype("<f8"),
}
_CODES = {v: k for k, v in _DTYPES.items()}
_MAX_RANK = 16


class VolumeFormatError(ValueError):
    """Raised for malformed volume files or manifests."""


def _storage_array(array: np.ndarray, double: bool) -> np.ndarray:
    """Coerce an array to one of the storable dtypes."""
    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        if not np.isfinite(arr).all():
            raise VolumeFormatError("refusing to store non-finite values")
        return np.ascontiguousarray(arr, dtype="<f8" if double else "<f4")
    if arr.dtype.kind in "iub":
        if arr.size and arr.min() < 0:
            raise VolumeFormatError("label values must be nonnegative")
        hi = int(arr.max()) if arr.size else 0
        if hi < 256:
            return np.ascontiguousarray(arr, dtype="u1")
        if hi < 65536:
            return np.ascontiguousarray(arr, dtype="<u2")
        raise VolumeFormatError(f"label value {hi} exceeds uint16 range")
    raise VolumeFormatError(f"unsupported dtype {arr.dtype}")


def write_volume(path: str | Path, array: np.ndarray, *, double: bool = False) -> None:
    """Write an array.  Floats store as float32 (float64 with ``double``),
    integers as uint8/uint16."""
    arr = _storage_array(array, double)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BQ", _CODES[arr.dtype], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def _read_header(fh) -> tuple[np.dtype, tuple[int, ...]]:
    head = fh.read(len(MAGIC) + 9)
    if len(head) < len(MAGIC) + 9:
        raise VolumeFormatError("file too short for a volume header")
    if head[: len(MAGIC)] != MAGIC:
        raise VolumeFormatError(f"bad magic {head[:len(MAGIC)]!r}, expected {MAGIC!r}")
    code, rank = struct.unpack("<BQ", head[len(MAGIC):])
    if code not in _DTYPES:
        raise VolumeFormatError(f"unknown dtype code {code}")
    if rank > _MAX_RANK:
        raise VolumeFormatError(f"rank {rank} exceeds supported maximum {_MAX_RANK}")
    dim_bytes = fh.read(8 * rank)
    if len(dim_bytes) < 8 * rank:
        raise VolumeFormatError("file truncated inside the dims block")
    dims = struct.unpack(f"<{rank}Q", dim_bytes)
    return _DTYPES[code], tuple(int(d) for d in dims)


def peek_volume_header(path: str | Path) -> tuple[np.dtype, tuple[int, ...]]:
    """Read (dtype, shape) without loading the payload."""
    with open(path, "rb") as fh:
        return _read_header(fh)


def read_volume(path: str | Path) -> np.ndarray:
    """Read a volume back; values are exactly as stored."""
    with open(path, "rb") as fh:
        dtype, shape = _read_header(fh)
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        payload = fh.read()
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{path}: expected {expected} payload bytes, found {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if dtype.kind == "f" and not np.isfinite(arr).all():
        raise VolumeFormatError(f"{path}: payload contains non-finite values")
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)


@dataclass
class CaseEntry:
    case_id: str
    label: Path
    prediction: Path | None = None
    logits: Path | None = None
    image: Path | None = None


@dataclass
class DatasetManifest:
    path: Path
    cases: list[CaseEntry]
    classes: list[str]
    hec: dict[str, list[str]] = field(default_factory=dict)
    split: str | None = None

    @property
    def num_classes(self) -> int:
        return len(self.classes)


_PATH_FIELDS = ("label", "prediction", "logits", "image")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a manifest; case order is preserved exactly."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or "cases" not in raw:
        raise VolumeFormatError(f"{path}: manifest must be an object with a 'cases' list")
    classes = raw.get("classes", [])
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise VolumeFormatError(f"{path}: 'classes' must be a list of names")
    hec = raw.get("hec", {}) or {}
    if not isinstance(hec, dict):
        raise VolumeFormatError(f"{path}: 'hec' must map group name to member list")
    for group, members in hec.items():
        if not isinstance(members, list) or not members:
            raise VolumeFormatError(f"{path}: HEC group '{group}' must list members")
        unknown = [m for m in members if m not in classes]
        if unknown:
            raise VolumeFormatError(
                f"{path}: HEC group '{group}' references unknown classes {unknown}"
            )

    base = path.parent
    cases: list[CaseEntry] = []
    seen: set[str] = set()
    for i, entry in enumerate(raw["cases"]):
        if not isinstance(entry, dict) or "case_id" not in entry:
            raise VolumeFormatError(f"{path}: case {i} lacks a case_id")
        cid = str(entry["case_id"])
        if cid in seen:
            raise VolumeFormatError(f"{path}: duplicate case_id '{cid}'")
        seen.add(cid)
        if "label" not in entry:
            raise VolumeFormatError(f"case '{cid}': no label path")
        paths: dict[str, Path | None] = {}
        for key in _PATH_FIELDS:
            if entry.get(key) is None:
                paths[key] = None
                continue
            p = base / entry[key]
            if not p.exists():
                raise VolumeFormatError(f"case '{cid}': missing file {p}")
            paths[key] = p
        if entry.get("prediction") is None and entry.get("logits") is None and not entry.get("image"):
            # image-only cases are allowed for training manifests; prediction
            # or logits is required when neither an image nor scores exist.
            raise VolumeFormatError(
                f"case '{cid}': needs a prediction, logits, or image entry"
            )
        for key in ("prediction", "logits"):
            if paths[key] is not None and classes:
                _, shape = peek_volume_header(paths[key])
                if shape[0] != len(classes):
                    raise VolumeFormatError(
                        f"case '{cid}': {key} has {shape[0]} channels, "
                        f"manifest declares {len(classes)} classes"
                    )
        cases.append(CaseEntry(cid, paths["label"], paths["prediction"], paths["logits"], paths["image"]))
    if not cases:
        raise VolumeFormatError(f"{path}: manifest contains no cases")
    return DatasetManifest(path=path, cases=cases, classes=list(classes), hec=dict(hec), split=raw.get("split"))


def write_manifest(
    path: str | Path,
    *,
    cases: list[dict],
    classes: list[str],
    hec: dict[str, list[str]] | None = None,
    split: str | None = None,
) -> None:
    """Write a manifest. Case paths must already be relative to ``path``."""
    doc: dict = {"cases": cases, "classes": classes}
    if hec:
        doc["hec"] = hec
    if split is not None:
        doc["split"] = split
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_case_label(entry: CaseEntry, num_classes: int) -> np.ndarray:
    """Load a label map and validate the index range."""
    labels = read_volume(entry.label)
    if labels.size and int(labels.max()) >= num_classes:
        raise VolumeFormatError(
            f"case '{entry.case_id}': label index {int(labels.max())} "
            f">= class count {num_classes}"
        )
    return labels
