"""Alignment of degraded recordings to their marked source videos."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .marker import MarkerConfig, decode_frame_index

logger = logging.getLogger(__name__)

MISSING = -1
CONFIDENCES = ("both", "single", "filled", "none")


class AlignmentError(ValueError):
    pass


@dataclass
class AlignmentVector:
    """Reference frame index per degraded frame; ``MISSING`` where unreadable."""

    ref_index: np.ndarray
    confidence: list = field(default_factory=list)

    def __post_init__(self):
        self.ref_index = np.asarray(self.ref_index, dtype=np.int64)
        if self.ref_index.ndim != 1 or len(self.ref_index) < 1:
            raise AlignmentError("alignment vector must be 1-D with at least one entry")
        if not self.confidence:
            self.confidence = ["none" if r == MISSING else "both" for r in self.ref_index]
        if len(self.confidence) != len(self.ref_index):
            raise AlignmentError("confidence length does not match ref_index")
        bad = set(self.confidence) - set(CONFIDENCES)
        if bad:
            raise AlignmentError(f"unknown confidence labels {sorted(bad)}")

    def __len__(self):
        return len(self.ref_index)

    @property
    def missing(self) -> np.ndarray:
        return self.ref_index == MISSING

    @property
    def is_filled(self) -> bool:
        return not self.missing.any()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame", "ref_index", "confidence"])
            for i, (r, c) in enumerate(zip(self.ref_index, self.confidence)):
                writer.writerow([i, "" if r == MISSING else int(r), c])

    @classmethod
    def from_csv(cls, path) -> "AlignmentVector":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"frame", "ref_index", "confidence"} <= set(reader.fieldnames):
                raise AlignmentError(f"{path}: header must be frame,ref_index,confidence")
            rows = list(reader)
        refs, confs = [], []
        for expected, row in enumerate(rows):
            if int(row["frame"]) != expected:
                raise AlignmentError(f"{path}: frame column not contiguous at row {expected}")
            refs.append(int(row["ref_index"]) if row["ref_index"] != "" else MISSING)
            confs.append(row["confidence"])
        if not refs:
            raise AlignmentError(f"{path}: no rows")
        return cls(np.array(refs), confs)


def resize_bilinear(frame: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample with pixel-centre alignment, rounded back to uint8."""
    src = np.asarray(frame, dtype=np.float64)
    sh, sw = src.shape
    if (sh, sw) == (height, width):
        return np.asarray(frame)
    ys = np.clip((np.arange(height) + 0.5) * sh / height - 0.5, 0, sh - 1)
    xs = np.clip((np.arange(width) + 0.5) * sw / width - 0.5, 0, sw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bottom = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return np.clip(np.rint(top * (1 - wy) + bottom * wy), 0, 255).astype(np.uint8)


def scan_alignment(
    frames: Sequence[np.ndarray],
    config: MarkerConfig = MarkerConfig(),
    marker_shape: tuple[int, int] | None = None,
    threads: int = 1,
) -> AlignmentVector:
    """Decode the reference index of every degraded luma frame.

    Frames whose shape differs from ``marker_shape`` (the stamping
    resolution, defaults to the first frame's) are rescaled before decoding.
    """
    if len(frames) == 0:
        raise AlignmentError("degraded video has no frames")
    if marker_shape is None:
        marker_shape = np.asarray(frames[0]).shape

    def decode(frame):
        return decode_frame_index(resize_bilinear(frame, *marker_shape), config)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(decode, frames))
    else:
        results = [decode(f) for f in frames]

    refs = np.full(len(results), MISSING, dtype=np.int64)
    confs = []
    for i, res in enumerate(results):
        if res is None:
            confs.append("none")
        else:
            refs[i] = res[0]
            confs.append(res[1])
    return AlignmentVector(refs, confs)


def fill_gaps(raw: AlignmentVector) -> AlignmentVector:
    """Carry the previous decoded index into unreadable frames.

    Leading gaps take the first decoded index. Filled entries are flagged
    ``"filled"``. Idempotent.
    """
    missing = raw.missing
    if missing.all():
        raise AlignmentError("no frame carried a readable marker")
    refs = raw.ref_index.copy()
    confs = list(raw.confidence)
    first = int(np.argmax(~missing))
    last = refs[first]
    for i in range(len(refs)):
        if missing[i]:
            refs[i] = last
            confs[i] = "filled"
        else:
            last = refs[i]
    return AlignmentVector(refs, confs)


def assemble_reference(source_frames: Sequence, alignment: AlignmentVector) -> list:
    """Reference video whose frame i is ``source_frames[r(i)]`` (copied)."""
    if not alignment.is_filled:
        raise AlignmentError("alignment vector has missing entries; run fill_gaps first")
    n_src = len(source_frames)
    top = int(alignment.ref_index.max())
    if top >= n_src or alignment.ref_index.min() < 0:
        raise AlignmentError(f"reference index {top} outside source of {n_src} frames")
    return [source_frames[int(r)].copy() for r in alignment.ref_index]


@dataclass
class AlignmentReport:
    n_frames: int
    freezes: int
    skips: int
    skipped_indices: int
    backward: int
    fill_ratio: float
    warnings: list

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def validate_alignment(alignment: AlignmentVector) -> AlignmentReport:
    """Count freezes, skips and backward jumps in a filled alignment vector."""
    if not alignment.is_filled:
        raise AlignmentError("validate_alignment expects a filled alignment vector")
    steps = np.diff(alignment.ref_index)
    backward = int((steps < 0).sum())
    warnings = []
    if backward:
        warnings.append(f"{backward} backward jump(s) in reference order")
    filled = sum(c == "filled" for c in alignment.confidence)
    report = AlignmentReport(
        n_frames=len(alignment),
        freezes=int((steps == 0).sum()),
        skips=int((steps > 1).sum()),
        skipped_indices=int((steps[steps > 1] - 1).sum()),
        backward=backward,
        fill_ratio=filled / len(alignment),
        warnings=warnings,
    )
    for w in warnings:
        logger.warning(w)
    return report
