"""Volumes, MVOL files, phantoms, slice extraction and fold splitting."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import REGIONS, region_mask

# Which sequence drives each task: FLAIR for complete and core, T1c for enhancing.
TASK_MODALITY = {"complete": "flair", "core": "flair", "enhancing": "t1c"}
LABEL_ALPHABET = (0, 1, 2, 3, 4)


@dataclass
class Volume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    modality: str = ""

    @property
    def shape(self):
        return self.data.shape


@dataclass
class SliceSample:
    image: np.ndarray
    target: np.ndarray
    case: str = ""
    index: int = 0
    task: str = "complete"
    labels: np.ndarray | None = field(default=None, repr=False)


def normalize(volume: Volume) -> Volume:
    """Whole-volume z-score (population std); near-constant volumes map to zeros."""
    x = volume.data.astype(np.float64)
    std = x.std()
    if std < 1e-8:
        out = np.zeros_like(x)
    else:
        out = (x - x.mean()) / std
    return Volume(out, volume.spacing, volume.modality)


def extract_slices(volumes: dict[str, Volume], labels: Volume, task: str,
                   case: str = "") -> list[SliceSample]:
    """Axial (last-axis) slices of the task's sequence, normalized, with binary targets.

    Planes that are entirely zero in the raw sequence are dropped before
    normalization shifts them.
    """
    if task not in REGIONS:
        raise ValueError(f"unknown task {task!r}")
    modality = TASK_MODALITY[task]
    if modality not in volumes:
        raise KeyError(f"task {task!r} needs the {modality} sequence; have {sorted(volumes)}")
    raw = volumes[modality].data
    if raw.shape != labels.data.shape:
        raise ValueError(f"{modality} shape {raw.shape} != label shape {labels.data.shape}")
    keep = np.flatnonzero(np.any(raw != 0, axis=(0, 1)))
    img = normalize(volumes[modality]).data
    target = region_mask(labels.data, task)
    return [
        SliceSample(img[:, :, z], target[:, :, z], case, int(z), task, labels.data[:, :, z])
        for z in keep
    ]


# --------------------------------------------------------------------------
# MVOL:  b"MVOL" | version u8 (1) | dtype u8 | X, Y, Z as u32 LE | payload LE, C order

MVOL_MAGIC = b"MVOL"
MVOL_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1")}
_HEADER = struct.Struct("<4sBB3I")


class VolumeFormatError(ValueError):
    """Bad magic, version or dtype code."""


class VolumeTruncatedError(VolumeFormatError):
    """Payload shorter than the declared extents."""


class VolumeSizeError(VolumeFormatError):
    """Payload longer than the declared extents."""


def save_volume(volume: Volume | np.ndarray, path) -> None:
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume)
    if data.ndim != 3:
        raise ValueError(f"MVOL stores 3-D arrays, got shape {data.shape}")
    if np.issubdtype(data.dtype, np.integer) or data.dtype == bool:
        if data.size and (data.min() < 0 or data.max() > 255):
            raise ValueError("integer volumes must fit in 8 bits")
        code = 2
    else:
        code = 1
    payload = np.ascontiguousarray(data, dtype=_DTYPES[code])
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MVOL_MAGIC, MVOL_VERSION, code, *data.shape))
        f.write(payload.tobytes())


def load_volume(path, modality: str = "") -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MVOL_MAGIC:
        raise VolumeFormatError(f"{path}: missing MVOL magic")
    _, version, code, *shape = _HEADER.unpack_from(raw)
    if version != MVOL_VERSION:
        raise VolumeFormatError(f"{path}: unsupported MVOL version {version}")
    if code not in _DTYPES:
        raise VolumeFormatError(f"{path}: unknown dtype code {code:#04x}")
    dt = _DTYPES[code]
    expected = int(np.prod(shape)) * dt.itemsize
    got = len(raw) - _HEADER.size
    if got < expected:
        raise VolumeTruncatedError(f"{path}: payload has {got} bytes, extents {shape} need {expected}")
    if got > expected:
        raise VolumeSizeError(f"{path}: {got - expected} bytes beyond extents {shape}")
    data = np.frombuffer(raw, dt, offset=_HEADER.size).reshape(shape)
    return Volume(data.astype(dt.newbyteorder("=")), modality=modality)


# --------------------------------------------------------------------------
# manifests (JSON lines)

@dataclass
class CaseRecord:
    case: str
    cohort: str
    flair: str
    t1c: str
    labels: str


def read_manifest(path) -> list[CaseRecord]:
    """Read a JSONL manifest; relative paths resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    records, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        d = json.loads(line)
        rec = CaseRecord(**{k: d[k] for k in ("case", "cohort", "flair", "t1c", "labels")})
        if rec.case in seen:
            raise ValueError(f"{path}:{lineno}: duplicate case id {rec.case!r}")
        if rec.cohort not in ("HGG", "LGG"):
            raise ValueError(f"{path}:{lineno}: cohort must be HGG or LGG, got {rec.cohort!r}")
        seen.add(rec.case)
        for key in ("flair", "t1c", "labels"):
            setattr(rec, key, str(base / getattr(rec, key)))
        records.append(rec)
    return records


def write_manifest(records: list[CaseRecord], path) -> None:
    path = Path(path)
    lines = []
    for r in records:
        d = {"case": r.case, "cohort": r.cohort}
        for key in ("flair", "t1c", "labels"):
            p = Path(getattr(r, key))
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            d[key] = str(p)
        lines.append(json.dumps(d))
    path.write_text("\n".join(lines) + "\n")


def load_case(rec: CaseRecord) -> tuple[dict[str, Volume], Volume]:
    missing = [p for p in (rec.flair, rec.t1c, rec.labels) if not Path(p).exists()]
    if missing:
        raise FileNotFoundError(f"case {rec.case}: missing {missing}")
    vols = {"flair": load_volume(rec.flair, "flair"), "t1c": load_volume(rec.t1c, "t1c")}
    return vols, load_volume(rec.labels, "labels")


# --------------------------------------------------------------------------
# synthetic phantoms

def generate_phantom(shape=(64, 64, 16), seed: int = 0, cohort: str = "HGG",
                     multiple: int = 1) -> tuple[dict[str, Volume], Volume]:
    """Head-like phantom with one or two nested-shell tumours.

    Tumours are ellipsoids whose shells, from outside in, carry the labels
    edema (2), non-enhancing (3), enhancing (4) and necrosis (1).  LGG phantoms
    have no enhancing shell.  The FLAIR-like channel brightens every tumour
    label; the T1c-like channel brightens label 4 only.  Voxels outside the
    head ellipsoid are exactly zero.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 4:
        raise ValueError(f"phantom shape must be three extents >= 4, got {shape}")
    if shape[0] % multiple or shape[1] % multiple:
        raise ValueError(f"in-plane size {shape[:2]} must be divisible by {multiple}")
    if cohort not in ("HGG", "LGG"):
        raise ValueError(f"cohort must be HGG or LGG, got {cohort!r}")
    rng = np.random.default_rng(seed)
    X, Y, Z = shape
    gx, gy, gz = np.meshgrid(
        (np.arange(X) + 0.5) / X * 2 - 1,
        (np.arange(Y) + 0.5) / Y * 2 - 1,
        (np.arange(Z) + 0.5) / Z * 2 - 1,
        indexing="ij",
    )
    head = (gx / 0.9) ** 2 + (gy / 0.9) ** 2 + (gz / 0.85) ** 2 <= 1.0

    labels = np.zeros(shape, dtype=np.uint8)
    n_tumours = int(rng.integers(1, 3))
    shells = [(1.0, 2), (0.7, 3), (0.5, 4), (0.25, 1)]
    if cohort == "LGG":
        shells = [(1.0, 2), (0.6, 3), (0.3, 1)]
    for _ in range(n_tumours):
        centre = rng.uniform(-0.4, 0.4, 3) * np.array([1.0, 1.0, 0.5])
        radii = rng.uniform(0.18, 0.32, 3) * np.array([1.0, 1.0, 1.6])
        r = np.sqrt(((gx - centre[0]) / radii[0]) ** 2 + ((gy - centre[1]) / radii[1]) ** 2
                    + ((gz - centre[2]) / radii[2]) ** 2)
        for frac, lab in shells:
            labels[(r <= frac) & head] = lab

    tissue = 1.0 + 0.3 * (rng.uniform(-1, 1) * gx + rng.uniform(-1, 1) * gy)
    flair = tissue + rng.normal(0, 0.1, shape)
    flair += np.where(labels == 2, 1.2, 0) + np.where(np.isin(labels, (1, 3, 4)), 0.8, 0)
    t1c = 0.9 * tissue + rng.normal(0, 0.1, shape)
    t1c += np.where(labels == 4, 1.5, 0) - np.where(labels == 1, 0.3, 0)
    flair = np.where(head, flair, 0).astype(np.float32)
    t1c = np.where(head, t1c, 0).astype(np.float32)
    return ({"flair": Volume(flair, modality="flair"), "t1c": Volume(t1c, modality="t1c")},
            Volume(labels, modality="labels"))


# --------------------------------------------------------------------------
# cross-validation folds

def kfold_split(case_ids, k: int = 5, seed: int = 0) -> list[tuple[list, list]]:
    """Seeded shuffle then contiguous chunks; earlier folds take the remainder."""
    ids = list(case_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique")
    if k < 2 or len(ids) < k:
        raise ValueError(f"need at least k={k} cases (and k >= 2), got {len(ids)}")
    order = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    base, extra = divmod(len(ids), k)
    folds, start = [], 0
    for i in range(k):
        size = base + (i < extra)
        test = order[start:start + size]
        start += size
        test_set = set(test)
        folds.append(([c for c in order if c not in test_set], test))
    return folds


def kfold_by_cohort(records: list[CaseRecord], k: int = 5, seed: int = 0) -> dict[str, list]:
    """Independent folds per cohort, keyed "HGG"/"LGG" (absent cohorts omitted)."""
    out = {}
    for cohort in ("HGG", "LGG"):
        ids = [r.case for r in records if r.cohort == cohort]
        if ids:
            out[cohort] = kfold_split(ids, k, seed)
    return out
