"""Landmark sequences: data model, file formats, resampling, clip sampling, folds.

Coordinates are held as float32 arrays of shape ``[N, L, 3]`` (frame-major,
landmark-major, xyz), the same order as the MSLM payload, so a sequence
round-trips through :func:`write_landmark_file` bit-exactly.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    CsvFormatError,
    DegenerateFrame,
    InvalidSequence,
    MalformedHeader,
    NonFiniteValue,
    TooFewSubjects,
    TruncatedPayload,
    UpsampleRequested,
)

MSLM_MAGIC = b"MSLM"
MSLM_VERSION = 1
_HEADER = struct.Struct("<4sHIIf")
HEADER_SIZE = _HEADER.size  # 18 bytes


MIN_LANDMARKS = 4


class Label(enum.IntEnum):
    SPONTANEOUS = 0
    POSED = 1


@dataclass(frozen=True)
class LandmarkFrame:
    """One frame, ``coords`` shaped ``[3, L]``."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != 3:
            raise InvalidSequence(f"frame coords must be 3xL, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise NonFiniteValue("frame contains NaN or Inf")
        object.__setattr__(self, "coords", c)

    @property
    def n_landmarks(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True, eq=False)
class LandmarkSequence:
    coords: np.ndarray
    fps: float
    video_id: str = ""
    subject_id: str = ""
    label: Label | None = None

    def __post_init__(self):
        c = np.ascontiguousarray(self.coords, dtype=np.float32)
        if c.ndim != 3 or c.shape[2] != 3:
            raise InvalidSequence(f"coords must be [N, L, 3], got {c.shape}")
        if c.shape[0] == 0:
            raise InvalidSequence("sequence has no frames")
        if c.shape[1] < MIN_LANDMARKS:
            raise InvalidSequence(f"need at least {MIN_LANDMARKS} landmarks per frame, got {c.shape[1]}")
        if not np.all(np.isfinite(c)):
            raise NonFiniteValue("sequence contains NaN or Inf")
        fps = float(np.float32(self.fps))
        if not fps > 0:
            raise InvalidSequence(f"fps must be positive, got {self.fps}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "fps", fps)
        if self.label is not None:
            object.__setattr__(self, "label", Label(int(self.label)))

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.coords.shape[1]

    @property
    def frames(self) -> list[LandmarkFrame]:
        return [LandmarkFrame(f.T) for f in self.coords]

    def __len__(self) -> int:
        return self.n_frames

    def __eq__(self, other) -> bool:
        if not isinstance(other, LandmarkSequence):
            return NotImplemented
        return (self.coords.shape == other.coords.shape
                and self.coords.tobytes() == other.coords.tobytes()
                and np.float32(self.fps).tobytes() == np.float32(other.fps).tobytes()
                and self.video_id == other.video_id
                and self.subject_id == other.subject_id
                and self.label == other.label)

    def replace(self, **changes) -> "LandmarkSequence":
        fields = dict(coords=self.coords, fps=self.fps, video_id=self.video_id,
                      subject_id=self.subject_id, label=self.label)
        fields.update(changes)
        return LandmarkSequence(**fields)


@dataclass(frozen=True, eq=False)
class Clip:
    """A fixed-length window, ``coords`` shaped ``[clip_len, L, 3]``."""

    coords: np.ndarray
    source_id: str = ""
    start: int = 0

    @property
    def frames(self) -> list[LandmarkFrame]:
        return [LandmarkFrame(f.T) for f in self.coords]

    def __len__(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    subject_id: str
    label: Label
    fps: float
    path: str


@dataclass
class DatasetManifest:
    videos: list[VideoRecord] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise InvalidSequence(f"duplicate video ids in manifest: {dup}")

    def __len__(self) -> int:
        return len(self.videos)

    @property
    def subjects(self) -> list[str]:
        return sorted({v.subject_id for v in self.videos})

    def resolve(self, rec: VideoRecord) -> Path:
        p = Path(rec.path)
        return p if p.is_absolute() else self.root / p

    def by_id(self) -> dict[str, VideoRecord]:
        return {v.video_id: v for v in self.videos}

    def load(self, rec: VideoRecord) -> LandmarkSequence:
        seq = read_landmark_file(self.resolve(rec))
        return seq.replace(video_id=rec.video_id, subject_id=rec.subject_id,
                           label=rec.label, fps=rec.fps)

    def to_json(self) -> dict:
        return {"videos": [{"id": v.video_id, "subject": v.subject_id, "label": int(v.label),
                            "fps": v.fps, "path": v.path} for v in self.videos]}


# -- MSLM binary format --------------------------------------------------------

def write_landmark_file(seq: LandmarkSequence, path) -> None:
    if not isinstance(seq, LandmarkSequence):
        seq = LandmarkSequence(*seq)
    n, L, _ = seq.coords.shape
    header = _HEADER.pack(MSLM_MAGIC, MSLM_VERSION, n, L, seq.fps)
    Path(path).write_bytes(header + seq.coords.astype("<f4").tobytes())


def read_landmark_file(path) -> LandmarkSequence:
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < HEADER_SIZE:
        raise MalformedHeader(f"{path}: file shorter than the MSLM header")
    magic, version, n, L, fps = _HEADER.unpack_from(buf)
    if magic != MSLM_MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != MSLM_VERSION:
        raise MalformedHeader(f"{path}: unsupported version {version}")
    count = n * L * 3
    if len(buf) - HEADER_SIZE < 4 * count:
        raise TruncatedPayload(f"{path}: header declares {count} floats, "
                               f"payload holds {(len(buf) - HEADER_SIZE) // 4}")
    coords = np.frombuffer(buf, dtype="<f4", count=count, offset=HEADER_SIZE).reshape(n, L, 3)
    if not np.all(np.isfinite(coords)):
        raise NonFiniteValue(f"{path}: payload contains NaN or Inf")
    return LandmarkSequence(coords, fps, video_id=path.stem)


def read_landmark_csv(path, fps: float, video_id: str | None = None) -> LandmarkSequence:
    """Import ``f0_x,f0_y,f0_z,...`` rows, one per frame."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file (missing header)")
    header = [h.strip() for h in rows[0]]
    if len(header) % 3 or not header:
        raise CsvFormatError(f"{path}: header has {len(header)} columns, not a multiple of 3")
    L = len(header) // 3
    for i, name in enumerate(header):
        want = f"f{i // 3}_{'xyz'[i % 3]}"
        if name != want:
            raise CsvFormatError(f"{path}: header column {i + 1} is {name!r}, expected {want!r}")
    data = []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3 * L:
            raise CsvFormatError(f"{path}: row {r} has {len(row)} columns, expected {3 * L}")
        vals = []
        for c, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise CsvFormatError(f"{path}: row {r}, column {c}: cannot parse {cell!r}") from None
            if not math.isfinite(v):
                raise CsvFormatError(f"{path}: row {r}, column {c}: non-finite value")
            vals.append(v)
        data.append(vals)
    if not data:
        raise CsvFormatError(f"{path}: no data rows (empty sequence)")
    coords = np.asarray(data, dtype=np.float32).reshape(len(data), L, 3)
    return LandmarkSequence(coords, fps, video_id=video_id or path.stem)


def write_landmark_csv(seq: LandmarkSequence, path) -> None:
    L = seq.n_landmarks
    header = [f"f{l}_{a}" for l in range(L) for a in "xyz"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for frame in seq.coords:
            w.writerow([repr(float(v)) for v in frame.reshape(-1)])


# -- manifest --------------------------------------------------------------------

def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    videos = []
    for i, v in enumerate(doc.get("videos", [])):
        try:
            rec = VideoRecord(str(v["id"]), str(v["subject"]), Label(int(v["label"])),
                              float(v["fps"]), str(v["path"]))
        except (KeyError, ValueError) as exc:
            raise InvalidSequence(f"{path}: bad manifest entry {i}: {exc}") from None
        videos.append(rec)
    man = DatasetManifest(videos, root=path.parent)
    if check_paths:
        missing = [v.path for v in videos if not man.resolve(v).exists()]
        if missing:
            raise FileNotFoundError(f"{path}: unresolvable landmark paths: {missing[:5]}")
    return man


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1) + "\n")


# -- resampling and clips --------------------------------------------------------

def _as_fraction(x: float) -> Fraction:
    return Fraction(x).limit_denominator(100000)


def resample_indices(n_frames: int, fps: float, target_fps: float) -> np.ndarray:
    if target_fps <= 0:
        raise ValueError("target_fps must be positive")
    if target_fps > fps * (1 + 1e-6):
        raise UpsampleRequested(f"cannot resample {fps} fps up to {target_fps} fps")
    ratio = _as_fraction(fps) / _as_fraction(target_fps)
    out = []
    i = 0
    while True:
        j = math.floor(i * ratio)
        if j >= n_frames:
            break
        out.append(j)
        i += 1
    return np.asarray(out, dtype=np.int64)


def resample_fps(seq: LandmarkSequence, target_fps: float) -> LandmarkSequence:
    """Keep frames ``floor(i * fps / target_fps)``; no interpolation."""
    if float(np.float32(target_fps)) == seq.fps:
        return seq
    idx = resample_indices(seq.n_frames, seq.fps, target_fps)
    return seq.replace(coords=seq.coords[idx], fps=target_fps)


def clip_indices(n_frames: int, start: int, clip_len: int) -> np.ndarray:
    # cyclic pad when the video is shorter than a clip
    return (start + np.arange(clip_len)) % n_frames


def sample_train_clip(seq: LandmarkSequence, clip_len: int, rng: np.random.Generator) -> Clip:
    if clip_len < 1:
        raise ValueError("clip_len must be >= 1")
    n = seq.n_frames
    start = int(rng.integers(0, n - clip_len + 1)) if n >= clip_len else 0
    return Clip(seq.coords[clip_indices(n, start, clip_len)], seq.video_id, start)


def eval_clip_starts(n_frames: int, clip_len: int, n_clips: int) -> list[int]:
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    hi = max(0, n_frames - clip_len)
    if n_clips == 1:
        return [0]
    return [int(math.floor(hi * i / (n_clips - 1) + 0.5)) for i in range(n_clips)]


def sample_eval_clips(seq: LandmarkSequence, clip_len: int, n_clips: int = 5) -> list[Clip]:
    n = seq.n_frames
    return [Clip(seq.coords[clip_indices(n, s, clip_len)], seq.video_id, s)
            for s in eval_clip_starts(n, clip_len, n_clips)]


# -- normalization -----------------------------------------------------------------

def normalize_frame(frame) -> LandmarkFrame:
    """Centre on the centroid and scale to unit mean landmark radius."""
    if not isinstance(frame, LandmarkFrame):
        frame = LandmarkFrame(frame)
    c = frame.coords
    centered = c - c.mean(axis=1, keepdims=True)
    radius = np.sqrt((centered**2).sum(axis=0)).mean()
    if radius <= 1e-12:
        raise DegenerateFrame("all landmarks coincide")
    return LandmarkFrame(centered / radius)


def normalize_coords(coords: np.ndarray, mode: str = "frame") -> np.ndarray:
    """Numpy normalization of ``[..., N, L, 3]`` arrays (``frame``, ``video`` or ``off``)."""
    x = np.asarray(coords, dtype=np.float64)
    if mode == "off":
        return x
    centroid = x.mean(axis=-2, keepdims=True)
    radius = np.sqrt(((x - centroid) ** 2).sum(axis=-1, keepdims=True)).mean(axis=-2, keepdims=True)
    if mode == "video":
        centroid = centroid[..., :1, :, :]
        radius = radius[..., :1, :, :]
    elif mode != "frame":
        raise ValueError(f"unknown normalize mode {mode!r}")
    return (x - centroid) / radius


# -- folds -------------------------------------------------------------------------

def make_folds(manifest: DatasetManifest, k: int, seed: int = 0) -> list[list[str]]:
    """Subject-disjoint folds of video ids, deterministic in ``seed``."""
    subjects = manifest.subjects
    if k < 1 or len(subjects) < k:
        raise TooFewSubjects(f"{len(subjects)} subjects cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(subjects))
    groups = np.array_split(order, k)
    fold_of = {subjects[i]: f for f, g in enumerate(groups) for i in g}
    folds: list[list[str]] = [[] for _ in range(k)]
    for v in manifest.videos:
        folds[fold_of[v.subject_id]].append(v.video_id)
    return folds


def split_fold(manifest: DatasetManifest, folds: Sequence[Sequence[str]], i: int):
    """Return ``(train_records, test_records)`` for test fold ``i``."""
    test = set(folds[i])
    train = [v for v in manifest.videos if v.video_id not in test]
    tst = [v for v in manifest.videos if v.video_id in test]
    return train, tst
