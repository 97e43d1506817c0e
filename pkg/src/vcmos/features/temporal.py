"""Temporal features driven by the alignment vector and by frame differences."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

from ..alignment import AlignmentVector


def _ref_indices(alignment) -> np.ndarray:
    if isinstance(alignment, AlignmentVector):
        if not alignment.is_filled:
            raise ValueError("alignment vector has missing entries; run fill_gaps first")
        return alignment.ref_index
    r = np.asarray(alignment, dtype=np.int64)
    if r.ndim != 1 or len(r) == 0:
        raise ValueError("alignment must be a non-empty 1-D sequence")
    return r


def skip_feature(alignment) -> np.ndarray:
    """Reference-index step between consecutive degraded frames; 0 at frame 0.

    Backward jumps give negative values.
    """
    r = _ref_indices(alignment)
    s = np.zeros(len(r), dtype=np.int64)
    s[1:] = np.diff(r)
    return s


def freeze_feature(alignment) -> np.ndarray:
    """Length of the current run of repeated reference frames (0 on a new frame)."""
    r = _ref_indices(alignment)
    f = np.zeros(len(r), dtype=np.int64)
    for i in range(1, len(r)):
        if r[i] == r[i - 1]:
            f[i] = f[i - 1] + 1
    return f


# Fixed 5-tap Gaussian, sigma 1.0, normalised to unit sum.
_x = np.arange(-2, 3, dtype=np.float64)
MOTION_KERNEL = np.exp(-0.5 * _x**2)
MOTION_KERNEL /= MOTION_KERNEL.sum()
del _x


def _blur(frame: np.ndarray) -> np.ndarray:
    img = np.asarray(frame, dtype=np.float64)
    img = correlate1d(img, MOTION_KERNEL, axis=0, mode="mirror")
    return correlate1d(img, MOTION_KERNEL, axis=1, mode="mirror")


def frame_differences(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Mean absolute difference of blurred consecutive luma frames, d(0) = 0."""
    if len(frames) == 0:
        raise ValueError("need at least one frame")
    d = np.zeros(len(frames), dtype=np.float64)
    prev = _blur(frames[0])
    for i in range(1, len(frames)):
        if np.shape(frames[i]) != np.shape(frames[i - 1]):
            raise ValueError(
                f"frame {i} has shape {np.shape(frames[i])}, previous frame {np.shape(frames[i - 1])}"
            )
        cur = _blur(frames[i])
        d[i] = np.abs(cur - prev).mean()
        prev = cur
    return d


def motion_features(frames: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """(motion, motion2) per frame; motion2 is the min of the current and next difference."""
    d = frame_differences(frames)
    nxt = np.append(d[1:], d[-1])
    return d, np.minimum(d, nxt)
