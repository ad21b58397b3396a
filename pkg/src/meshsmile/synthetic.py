"""Synthetic smile kinematics with a known decision boundary.

Each subject gets a fixed neutral landmark template.  A video deforms the
template along a smile displacement field (mouth corners out and up, cheeks
up, lower eyelids up) scaled by an amplitude curve: rest, raised-cosine
onset, apex plateau, raised-cosine offset.  The label only changes the
distribution of the onset duration, measured as the 10%-90% rise time.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid
from .landmark_io import (
    DatasetManifest,
    Label,
    LandmarkSequence,
    VideoRecord,
    save_manifest,
    write_landmark_file,
)

# fraction of a raised-cosine ramp spent between 10% and 90% of its height
RISE_FRACTION = (math.acos(-0.8) - math.acos(0.8)) / math.pi


@dataclass(frozen=True)
class KinematicsConfig:
    n_landmarks: int = 68
    fps: float = 25.0
    duration_s: float = 5.0
    onset_range_spontaneous: tuple[float, float] = (0.8, 1.5)
    onset_range_posed: tuple[float, float] = (0.2, 0.5)
    amplitude_range: tuple[float, float] = (0.08, 0.15)
    noise_sd: float = 0.01
    asymmetry_range: tuple[float, float] = (0.0, 0.2)
    lead_range: tuple[float, float] = (0.3, 0.8)
    apex_range: tuple[float, float] = (0.5, 1.0)
    offset_range: tuple[float, float] = (0.6, 1.2)

    def validate(self) -> None:
        if self.n_landmarks < 8:
            raise ConfigInvalid("synthetic faces need at least 8 landmarks")
        if self.fps <= 0 or self.duration_s * self.fps < 20:
            raise ConfigInvalid("duration_s * fps must give at least 20 frames")
        if self.noise_sd < 0:
            raise ConfigInvalid("noise_sd must be >= 0")
        for name in ("onset_range_spontaneous", "onset_range_posed", "lead_range",
                     "apex_range", "offset_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigInvalid(f"{name} must be a positive interval, got {(lo, hi)}")
        lo, hi = self.amplitude_range
        if not 0 <= lo <= hi:
            raise ConfigInvalid(f"amplitude_range must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        lo, hi = self.asymmetry_range
        if not 0 <= lo <= hi < 1:
            raise ConfigInvalid(f"asymmetry_range must lie in [0, 1), got {(lo, hi)}")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))

    def onset_range(self, label) -> tuple[float, float]:
        return self.onset_range_posed if int(label) == Label.POSED else self.onset_range_spontaneous

    def null_mode(self) -> "KinematicsConfig":
        """Same config with both labels drawing onsets from one range."""
        lo = min(self.onset_range_spontaneous[0], self.onset_range_posed[0])
        hi = max(self.onset_range_spontaneous[1], self.onset_range_posed[1])
        return KinematicsConfig(**{**asdict(self), "onset_range_spontaneous": (lo, hi),
                                   "onset_range_posed": (lo, hi)})


# -- face layout --------------------------------------------------------------------

_REGIONS = (  # name, share, centre (x, y), radii (rx, ry), closed loop
    ("border", 0.25, (0.0, 0.0), (0.9, 1.15), False),
    ("mouth", 0.30, (0.0, -0.55), (0.35, 0.12), True),
    ("left_eye", 0.125, (-0.35, 0.3), (0.15, 0.06), True),
    ("right_eye", 0.125, (0.35, 0.3), (0.15, 0.06), True),
    ("nose", 0.10, (0.0, 0.0), (0.0, 0.25), False),
    ("cheeks", 0.10, (0.0, -0.15), (0.5, 0.1), False),
)


def _region_sizes(n: int) -> list[int]:
    raw = [share * n for _, share, *_ in _REGIONS]
    sizes = [max(1, int(math.floor(r))) for r in raw]
    i = 0
    while sum(sizes) < n:
        sizes[i % len(sizes)] += 1
        i += 1
    while sum(sizes) > n:
        j = int(np.argmax(sizes))
        sizes[j] -= 1
    return sizes


def base_layout(n_landmarks: int) -> tuple[np.ndarray, np.ndarray]:
    """Generic face layout ``[L, 3]`` and a region id per landmark."""
    pts, region = [], []
    for rid, ((name, _, (cx, cy), (rx, ry), closed), m) in enumerate(
            zip(_REGIONS, _region_sizes(n_landmarks))):
        if name == "border":
            ang = np.linspace(-0.15 * np.pi, -0.85 * np.pi, m) if m > 1 else np.array([-0.5 * np.pi])
            ang = np.concatenate([ang[: (m + 1) // 2], ang[(m + 1) // 2:]])
            xy = np.stack([cx + rx * np.cos(ang) * 1.0, cy + ry * np.sin(ang) * 0.7], axis=1)
            # jaw runs below the eyes; lift the two ends toward the temples
            xy[:, 1] += 0.25
        elif name == "nose":
            ys = np.linspace(0.25, -0.25, m)
            xy = np.stack([np.zeros(m), ys], axis=1)
        elif name == "cheeks":
            half = (m + 1) // 2
            xs = np.concatenate([np.linspace(-0.65, -0.4, half), np.linspace(0.4, 0.65, m - half)])
            xy = np.stack([xs, np.full(m, cy)], axis=1)
        else:
            ang = np.linspace(0, 2 * np.pi, m, endpoint=False) if closed else np.linspace(0, np.pi, m)
            xy = np.stack([cx + rx * np.cos(ang), cy + ry * np.sin(ang)], axis=1)
        pts.append(xy)
        region += [rid] * m
    xy = np.concatenate(pts, axis=0)
    z = 0.35 * np.clip(1.0 - (xy[:, 0] / 0.9) ** 2 - (xy[:, 1] / 1.15) ** 2, 0.0, None)
    z[np.asarray(region) == 4] += 0.15  # nose ridge
    return np.concatenate([xy, z[:, None]], axis=1), np.asarray(region)


def neutral_template(subject_seed: int, n_landmarks: int) -> np.ndarray:
    """Subject-specific neutral face: the base layout with per-subject proportions and jitter."""
    rng = np.random.default_rng([subject_seed, 0x5EED])
    base, _ = base_layout(n_landmarks)
    scale = rng.uniform(0.9, 1.1, size=3)
    jitter = rng.normal(0.0, 0.02, size=base.shape)
    return base * scale + jitter


def smile_field(template: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Unit-amplitude displacement direction per landmark, ``[L, 3]``."""
    x, y = template[:, 0], template[:, 1]
    field = np.zeros_like(template)
    corners = np.array([[-0.35, -0.55], [0.35, -0.55]])
    for side, (cx, cy) in zip((-1.0, 1.0), corners):
        w = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * 0.15**2))
        field[:, 0] += w * side * 0.8
        field[:, 1] += w * 0.6
        field[:, 2] += w * 0.1
    cheek = np.exp(-((np.abs(x) - 0.5) ** 2 + (y + 0.15) ** 2) / (2 * 0.2**2))
    field[:, 1] += 0.5 * cheek
    eye = (region == 2) | (region == 3)
    lower_lid = eye & (y < 0.3)
    field[lower_lid, 1] += 0.3
    return field


# -- amplitude curve -------------------------------------------------------------------

def _raised_cosine(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * u))


@dataclass(frozen=True)
class SmileTiming:
    lead: float
    onset: float  # 10%-90% rise time
    apex: float
    offset: float  # 90%-10% decay time

    @property
    def onset_ramp(self) -> float:
        return self.onset / RISE_FRACTION

    @property
    def offset_ramp(self) -> float:
        return self.offset / RISE_FRACTION


def amplitude_curve(t: np.ndarray, timing: SmileTiming) -> np.ndarray:
    """Normalized amplitude in [0, 1] at times ``t`` (seconds)."""
    t = np.asarray(t, dtype=np.float64)
    rise = _raised_cosine((t - timing.lead) / timing.onset_ramp)
    t_off = timing.lead + timing.onset_ramp + timing.apex
    fall = 1.0 - _raised_cosine((t - t_off) / timing.offset_ramp)
    return np.where(t < t_off, rise, fall)


def measure_rise_time(a: np.ndarray, fps: float, lo: float = 0.1, hi: float = 0.9) -> float:
    """Time for ``a`` to climb from ``lo`` to ``hi`` of its peak, by linear interpolation."""
    a = np.asarray(a, dtype=np.float64)
    peak = int(np.argmax(a))
    a = a[: peak + 1] / a[peak]

    def crossing(level):
        i = int(np.argmax(a >= level))
        if i == 0:
            return 0.0
        return (i - 1 + (level - a[i - 1]) / (a[i] - a[i - 1])) / fps

    return crossing(hi) - crossing(lo)


# -- generation -----------------------------------------------------------------------

def draw_timing(label, cfg: KinematicsConfig, rng: np.random.Generator) -> SmileTiming:
    lo, hi = cfg.onset_range(label)
    return SmileTiming(lead=rng.uniform(*cfg.lead_range), onset=rng.uniform(lo, hi),
                       apex=rng.uniform(*cfg.apex_range), offset=rng.uniform(*cfg.offset_range))


def generate_video(label, subject_seed: int, cfg: KinematicsConfig,
                   rng: np.random.Generator, video_id: str = "", subject_id: str = "",
                   timing: SmileTiming | None = None) -> LandmarkSequence:
    cfg.validate()
    label = Label(int(label))
    template = neutral_template(subject_seed, cfg.n_landmarks)
    _, region = base_layout(cfg.n_landmarks)
    field = smile_field(template, region)
    if timing is None:
        timing = draw_timing(label, cfg, rng)
    amplitude = rng.uniform(*cfg.amplitude_range)
    asym = rng.uniform(*cfg.asymmetry_range) * rng.choice([-1.0, 1.0])
    side = np.where(template[:, 0] < 0, 1.0 + asym, 1.0 - asym)[:, None]
    t = np.arange(cfg.n_frames) / cfg.fps
    a = amplitude * amplitude_curve(t, timing)
    coords = template[None] + a[:, None, None] * (field * side)[None]
    if cfg.noise_sd > 0:
        coords = coords + rng.normal(0.0, cfg.noise_sd, size=coords.shape)
    return LandmarkSequence(coords, cfg.fps, video_id=video_id,
                            subject_id=subject_id or f"s{subject_seed}", label=label)


def generate_dataset(n_subjects: int, videos_per_subject_per_class: int, cfg: KinematicsConfig,
                     seed: int, out_dir) -> DatasetManifest:
    """Write MSLM files plus ``manifest.json`` under ``out_dir``; returns the manifest."""
    cfg.validate()
    if n_subjects < 1 or videos_per_subject_per_class < 1:
        raise ConfigInvalid("need at least one subject and one video per class")
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    subject_seqs = root.spawn(n_subjects)
    records = []
    for s, sseq in enumerate(subject_seqs):
        subject_seed = int(sseq.generate_state(1)[0])
        subject_id = f"subj{s:03d}"
        video_seqs = sseq.spawn(2 * videos_per_subject_per_class)
        for v in range(videos_per_subject_per_class):
            for lab in (Label.SPONTANEOUS, Label.POSED):
                vseq = video_seqs[2 * v + int(lab)]
                vid = f"{subject_id}_{'posed' if lab else 'spont'}_{v}"
                seq = generate_video(lab, subject_seed, cfg, np.random.default_rng(vseq),
                                     video_id=vid, subject_id=subject_id)
                rel = f"videos/{vid}.mslm"
                write_landmark_file(seq, out / rel)
                records.append(VideoRecord(vid, subject_id, lab, seq.fps, rel))
    manifest = DatasetManifest(records, root=out)
    save_manifest(manifest, out / "manifest.json")
    return manifest
