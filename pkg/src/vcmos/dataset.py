"""Clip manifests, source-disjoint splits, and synthetic degraded clips.

The synthetic generator replays a script of freeze / skip / rate-change
events over the reference frame indices, producing both the degraded clip
and its ground-truth alignment vector.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .features.temporal import freeze_feature, skip_feature
from .marker import MarkerConfig, render_markers

DEFAULT_NOISE_SIGMA = 4.0


class DatasetError(ValueError):
    pass


@dataclass
class ClipRecord:
    clip_id: str
    degraded_path: str
    source_id: str
    reference_path: str
    mos: float
    votes: int = 0
    profile_id: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.clip_id:
            raise DatasetError("clip_id must be non-empty")
        if not (1.0 <= float(self.mos) <= 5.0):
            raise DatasetError(f"clip {self.clip_id}: mos {self.mos} outside [1, 5]")
        if int(self.votes) < 0:
            raise DatasetError(f"clip {self.clip_id}: negative vote count")
        self.mos = float(self.mos)
        self.votes = int(self.votes)
        self.source_id = str(self.source_id)
        self.profile_id = str(self.profile_id)

    @classmethod
    def from_dict(cls, doc: dict) -> "ClipRecord":
        known = {"clip_id", "degraded_path", "source_id", "reference_path", "mos", "votes", "profile_id"}
        missing = {"clip_id", "degraded_path", "source_id", "reference_path", "mos"} - set(doc)
        if missing:
            raise DatasetError(f"manifest record lacks {sorted(missing)}")
        extra = {k: v for k, v in doc.items() if k not in known}
        return cls(**{k: doc[k] for k in known if k in doc}, extra=extra)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.update(doc.pop("extra"))
        return doc


def load_manifest(path) -> list[ClipRecord]:
    """Read a JSON-lines manifest; relative paths are resolved against its folder."""
    path = Path(path)
    records, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc.msg}") from None
            try:
                rec = ClipRecord.from_dict(doc)
            except (DatasetError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if rec.clip_id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate clip_id {rec.clip_id!r}")
            seen.add(rec.clip_id)
            records.append(rec)
    return records


def write_manifest(path, records: Sequence[ClipRecord], append: bool = False) -> None:
    with open(path, "a" if append else "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def resolve_path(manifest_path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def split_by_source(records: Sequence[ClipRecord], validation_source_ids) -> tuple[list, list]:
    """Hold out every clip of the given source videos for validation."""
    held = {str(s) for s in validation_source_ids}
    present = {r.source_id for r in records}
    unknown = held - present
    if unknown:
        raise DatasetError(f"validation sources not in manifest: {sorted(unknown)}")
    train = [r for r in records if r.source_id not in held]
    val = [r for r in records if r.source_id in held]
    if not train:
        raise DatasetError("empty-train: every source is held out")
    if not val:
        raise DatasetError("empty-validation: no source held out")
    return train, val


def extract_clip(frames: Sequence, start_frame: int, duration_s: float, fps: float) -> list:
    n = int(round(duration_s * fps))
    if start_frame < 0 or n < 1 or start_frame + n > len(frames):
        raise DatasetError(
            f"clip [{start_frame}, {start_frame + n}) outside video of {len(frames)} frames"
        )
    return [f.copy() for f in frames[start_frame : start_frame + n]]


def random_clip_start(n_frames: int, clip_frames: int, seed: int) -> int:
    if clip_frames > n_frames:
        raise DatasetError(f"clip of {clip_frames} frames longer than video ({n_frames})")
    return int(np.random.default_rng(seed).integers(0, n_frames - clip_frames + 1))


# -- degradation scripts ---------------------------------------------------------------

@dataclass(frozen=True)
class Freeze:
    start_frame: int
    duration_frames: int
    kind = "freeze"

    @property
    def anchor(self):
        return self.start_frame


@dataclass(frozen=True)
class Skip:
    at_frame: int
    gap_frames: int
    kind = "skip"

    @property
    def anchor(self):
        return self.at_frame


@dataclass(frozen=True)
class RateChange:
    from_frame: int
    playback_ratio: float
    kind = "rate_change"

    @property
    def anchor(self):
        return self.from_frame


_EVENT_TYPES = {cls.kind: cls for cls in (Freeze, Skip, RateChange)}


@dataclass
class DegradationScript:
    """Ordered events over reference indices.

    freeze(start, d): frame ``start`` is shown d extra times.
    skip(at, gap): after frame ``at`` the next ``gap`` frames are dropped.
    rate_change(from, ratio): from frame ``from`` playback advances ``ratio``
    reference frames per output frame, until the next rate_change.
    An event fires at the first shown index >= its anchor.
    """

    events: list = field(default_factory=list)

    def validate(self, n_source: int) -> None:
        last_end = -1
        for ev in self.events:
            if ev.anchor <= last_end:
                raise DatasetError(f"event {ev} overlaps the previous event")
            if not 0 <= ev.anchor < n_source:
                raise DatasetError(f"event {ev} anchored outside source of {n_source} frames")
            if isinstance(ev, Freeze) and ev.duration_frames < 1:
                raise DatasetError(f"freeze duration must be >= 1: {ev}")
            if isinstance(ev, Skip):
                if ev.gap_frames < 1:
                    raise DatasetError(f"skip gap must be >= 1: {ev}")
                if ev.at_frame + ev.gap_frames + 1 >= n_source:
                    raise DatasetError(f"skip {ev} lands beyond source of {n_source} frames")
            if isinstance(ev, RateChange) and not ev.playback_ratio > 0:
                raise DatasetError(f"playback ratio must be positive: {ev}")
            last_end = ev.anchor + (ev.gap_frames if isinstance(ev, Skip) else 0)

    def to_json(self) -> list:
        return [{"type": ev.kind, **asdict(ev)} for ev in self.events]

    @classmethod
    def from_json(cls, doc) -> "DegradationScript":
        if isinstance(doc, dict):
            doc = doc.get("events", [])
        events = []
        for item in doc:
            item = dict(item)
            kind = item.pop("type", None)
            if kind not in _EVENT_TYPES:
                raise DatasetError(f"unknown event type {kind!r}")
            try:
                events.append(_EVENT_TYPES[kind](**item))
            except TypeError as exc:
                raise DatasetError(f"bad {kind} event {item}: {exc}") from None
        return cls(events)

    @classmethod
    def load(cls, path) -> "DegradationScript":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def replay_script(script: DegradationScript, n_source: int, max_frames: int | None = None) -> np.ndarray:
    """Ground-truth alignment vector produced by playing ``script`` over the source."""
    script.validate(n_source)
    pending = sorted(script.events, key=lambda e: e.anchor)
    r = []
    pos, ratio = 0.0, 1.0
    while max_frames is None or len(r) < max_frames:
        idx = int(math.floor(pos + 1e-9))
        if idx >= n_source:
            break
        r.append(idx)
        jump = None
        while pending and pending[0].anchor <= idx:
            ev = pending.pop(0)
            if isinstance(ev, Freeze):
                r.extend([idx] * ev.duration_frames)
            elif isinstance(ev, Skip):
                jump = idx + 1 + ev.gap_frames
            else:
                ratio = ev.playback_ratio
        pos = float(jump) if jump is not None else pos + ratio
    r = np.asarray(r, dtype=np.int64)
    return r if max_frames is None else r[:max_frames]


def add_luma_noise(luma: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma <= 0:
        return luma.copy()
    noisy = luma.astype(np.float64) + rng.normal(0.0, sigma, size=luma.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def apply_degradation(source_frames: Sequence, script: DegradationScript, seed: int = 0,
                      noise_sigma: float = DEFAULT_NOISE_SIGMA, max_frames: int | None = None):
    """Return ``(degraded_frames, r_star)``.

    Frames may be luma arrays or YUVFrame objects; noise touches luma only.
    """
    r_star = replay_script(script, len(source_frames), max_frames)
    rng = np.random.default_rng(seed)
    out = []
    for idx in r_star:
        frame = source_frames[int(idx)]
        if hasattr(frame, "y"):
            new = frame.copy()
            new.y = add_luma_noise(frame.y, noise_sigma, rng)
        else:
            new = add_luma_noise(np.asarray(frame), noise_sigma, rng)
        out.append(new)
    return out, r_star


def synthetic_mos(r_star, noise_sigma: float = 0.0) -> float:
    """Oracle label: 5 - 6*freeze_fraction - 2*skip_density - 0.08*sigma, clamped to [1, 5]."""
    r = np.asarray(r_star, dtype=np.int64)
    if len(r) < 1:
        raise DatasetError("empty alignment vector")
    n = len(r)
    freeze_fraction = np.count_nonzero(freeze_feature(r) > 0) / n
    skip_density = np.count_nonzero(skip_feature(r) > 1) / n
    mos = 5.0 - 6.0 * freeze_fraction - 2.0 * skip_density - 0.08 * noise_sigma
    return float(min(5.0, max(1.0, mos)))


def random_script(rng: np.random.Generator, n_source: int, n_events: int | None = None,
                  kinds=("freeze", "skip", "rate_change"), span: int | None = None) -> DegradationScript:
    """Random non-overlapping events anchored within the first ``span`` source frames."""
    span = min(n_source, span or n_source)
    if n_events is None:
        n_events = int(rng.integers(0, 5))
    events, anchor = [], int(rng.integers(1, 8))
    rate_active = False
    for _ in range(n_events):
        if anchor >= span - 2:
            break
        kind = kinds[int(rng.integers(0, len(kinds)))]
        if kind == "freeze":
            ev = Freeze(anchor, int(rng.integers(2, 25)))
            end = anchor
        elif kind == "skip":
            gap = int(rng.integers(1, 8))
            if anchor + gap + 1 >= n_source:
                break
            ev = Skip(anchor, gap)
            end = anchor + gap
        else:
            ratio = 1.0 if rate_active else float(rng.choice([0.5, 1.5, 2.0]))
            rate_active = ratio != 1.0
            ev = RateChange(anchor, ratio)
            end = anchor
        events.append(ev)
        anchor = end + int(rng.integers(3, 20))
    return DegradationScript(events)


def make_source_video(seed: int, n_frames: int, width: int = 256, height: int = 192,
                      marker: MarkerConfig | None = MarkerConfig()) -> list[np.ndarray]:
    """Procedural talking-head stand-in: a drifting smooth texture plus a moving
    blob, with index markers stamped on every frame. Returns luma planes.
    """
    rng = np.random.default_rng(seed)
    speed = rng.uniform(0.5, 2.5, size=2) * rng.choice([-1, 1], size=2)
    pad = int(np.ceil(np.abs(speed).max() * n_frames)) + 4
    texture = gaussian_filter(rng.normal(size=(height + pad, width + pad)), rng.uniform(1.5, 4.0))
    texture = (texture - texture.mean()) / (texture.std() + 1e-12)
    yy, xx = np.mgrid[0:height, 0:width]
    frames = []
    base_y = pad // 2 if speed[0] < 0 else 0
    base_x = pad // 2 if speed[1] < 0 else 0
    for t in range(n_frames):
        oy = int(np.clip(round(base_y + speed[0] * t / 2), 0, pad))
        ox = int(np.clip(round(base_x + speed[1] * t / 2), 0, pad))
        img = 118.0 + 38.0 * texture[oy : oy + height, ox : ox + width]
        cy = height / 2 + height / 4 * np.sin(0.11 * t + seed)
        cx = width / 2 + width / 4 * np.cos(0.07 * t + seed)
        img += 50.0 * np.exp(-(((yy - cy) / (height / 6)) ** 2 + ((xx - cx) / (width / 8)) ** 2))
        frame = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        if marker is not None:
            frame = render_markers(frame, t, marker)
        frames.append(frame)
    return frames


@dataclass
class SyntheticClip:
    clip_id: str
    source_id: str
    features: object  # FeatureMatrix
    mos: float
    r_star: np.ndarray
    recovered: np.ndarray
    noise_sigma: float


def synthetic_corpus(n_sources: int, clips_per_source: int, clip_frames: int = 90,
                     width: int = 128, height: int = 96, marker: MarkerConfig = MarkerConfig(cell_size=4),
                     selection: str = "vif,motion,skip,freeze", noise_range=(0.0, 8.0),
                     seed: int = 0) -> list[SyntheticClip]:
    """Generate, align and featurise a desk-scale corpus in memory.

    Each clip goes through the full path: marked source -> scripted
    degradation + noise -> marker scan -> aligned reference -> features.
    Labels come from :func:`synthetic_mos` on the ground-truth alignment.
    """
    from .alignment import assemble_reference, fill_gaps, scan_alignment
    from .features.matrix import build_feature_matrix

    rng = np.random.default_rng(seed)
    n_src_frames = 3 * clip_frames
    clips = []
    for s in range(n_sources):
        source = make_source_video(seed * 1000 + s, n_src_frames, width, height, marker)
        for k in range(clips_per_source):
            while True:
                script = random_script(rng, n_src_frames, n_events=int(rng.integers(0, 6)), span=clip_frames)
                if len(replay_script(script, n_src_frames, clip_frames)) == clip_frames:
                    break
            sigma = float(rng.uniform(*noise_range))
            degraded, r_star = apply_degradation(source, script, seed=int(rng.integers(2**31)),
                                                 noise_sigma=sigma, max_frames=clip_frames)
            alignment = fill_gaps(scan_alignment(degraded, marker))
            reference = assemble_reference(source, alignment)
            clip_id = f"src{s:02d}_clip{k:03d}"
            fm = build_feature_matrix(selection, alignment, degraded, reference, clip_id=clip_id)
            clips.append(SyntheticClip(clip_id, f"src{s:02d}", fm, synthetic_mos(r_star, sigma),
                                       r_star, alignment.ref_index.copy(), sigma))
    return clips
