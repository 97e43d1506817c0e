"""Per-clip feature matrices, external feature ingestion, and normalisation."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_sequences
from .quality import ms_ssim, psnr, ssim, vif_scales
from .temporal import freeze_feature, motion_features, skip_feature

VIF_COLUMNS = ("vif_scale0", "vif_scale1", "vif_scale2", "vif_scale3")
ADM_COLUMNS = ("adm2", "adm_scale0", "adm_scale1", "adm_scale2", "adm_scale3")
CANONICAL_COLUMNS = VIF_COLUMNS + ADM_COLUMNS + (
    "motion", "motion2", "skip", "freeze", "psnr", "ssim", "ms_ssim",
)
FEATURE_GROUPS = {
    "vif": VIF_COLUMNS,
    "adm": ADM_COLUMNS,
    "motion": ("motion", "motion2"),
    "skip": ("skip",),
    "freeze": ("freeze",),
    "psnr": ("psnr",),
    "ssim": ("ssim",),
    "ms_ssim": ("ms_ssim",),
}
FULL_SELECTION = "vif,adm,motion,skip,freeze"


class FeatureError(ValueError):
    pass


def parse_selection(selection) -> tuple[str, ...]:
    """Resolve a selection such as ``"VIF/ADM/Motion"`` or ``"vif,skip"`` to
    column names in canonical order. Individual column names are accepted too.
    """
    if isinstance(selection, str):
        tokens = selection.replace("/", ",").split(",")
    else:
        tokens = list(selection)
    wanted = set()
    for tok in tokens:
        name = tok.strip().lower().replace("-", "_")
        if not name:
            continue
        if name in FEATURE_GROUPS:
            wanted.update(FEATURE_GROUPS[name])
        elif name in CANONICAL_COLUMNS:
            wanted.add(name)
        else:
            raise FeatureError(f"unknown feature {tok.strip()!r}; known: {sorted(FEATURE_GROUPS)}")
    if not wanted:
        raise FeatureError("empty feature selection")
    return tuple(c for c in CANONICAL_COLUMNS if c in wanted)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    column_names: tuple
    clip_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.column_names = tuple(self.column_names)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise FeatureError(
                f"values shape {self.values.shape} does not match {len(self.column_names)} columns"
            )
        if not np.isfinite(self.values).all():
            bad = [c for j, c in enumerate(self.column_names) if not np.isfinite(self.values[:, j]).all()]
            raise FeatureError(f"non-finite values in columns {bad}")

    def __len__(self):
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_names.index(name)]

    def select(self, columns: Sequence[str]) -> "FeatureMatrix":
        missing = [c for c in columns if c not in self.column_names]
        if missing:
            raise FeatureError(f"feature matrix lacks columns {missing}")
        idx = [self.column_names.index(c) for c in columns]
        return FeatureMatrix(self.values[:, idx], tuple(columns), self.clip_id)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("frame",) + self.column_names)
            for i, row in enumerate(self.values):
                writer.writerow([i] + [f"{v:.9g}" for v in row])

    @classmethod
    def from_csv(cls, path, clip_id: str = "") -> "FeatureMatrix":
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
        if not header or header[0] != "frame":
            raise FeatureError(f"{path}: first column must be 'frame'")
        columns = ingest_external_features(path, header[1:])
        return cls(np.column_stack([columns[c] for c in header[1:]]), header[1:], clip_id)


def ingest_external_features(path, expected_columns: Sequence[str], n_frames: int | None = None) -> dict:
    """Read per-frame columns from a CSV keyed by a contiguous ``frame`` column.

    Unknown extra columns are ignored.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "frame" not in fields:
            raise FeatureError(f"{path}: missing 'frame' column")
        absent = [c for c in expected_columns if c not in fields]
        if absent:
            raise FeatureError(f"{path}: missing column(s) {absent}")
        out = {c: [] for c in expected_columns}
        for expected, row in enumerate(reader):
            try:
                frame = int(row["frame"])
            except (TypeError, ValueError):
                raise FeatureError(f"{path}: non-numeric frame index {row['frame']!r}") from None
            if frame != expected:
                raise FeatureError(f"{path}: frame indices not contiguous, expected {expected} got {frame}")
            for c in expected_columns:
                try:
                    value = float(row[c])
                except (TypeError, ValueError):
                    raise FeatureError(f"{path}: non-numeric cell {row[c]!r} in column {c}, frame {frame}") from None
                if not math.isfinite(value):
                    raise FeatureError(f"{path}: non-finite cell in column {c}, frame {frame}")
                out[c].append(value)
    n_rows = len(next(iter(out.values()))) if out else 0
    if n_frames is not None and n_rows != n_frames:
        raise FeatureError(f"{path}: {n_rows} rows, clip has {n_frames} frames")
    return {c: np.asarray(v, dtype=np.float64) for c, v in out.items()}


def _per_frame(metric, reference, degraded, threads):
    pairs = list(zip(reference, degraded))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda p: metric(*p), pairs))
    return [metric(r, d) for r, d in pairs]


def build_feature_matrix(
    selection,
    alignment=None,
    degraded: Sequence[np.ndarray] | None = None,
    reference: Sequence[np.ndarray] | None = None,
    external: str | None = None,
    clip_id: str = "",
    threads: int = 1,
) -> FeatureMatrix:
    """Assemble the selected per-frame features for one clip.

    ``degraded`` and ``reference`` are luma frames, the reference already
    aligned so that frame i matches degraded frame i. Motion is computed on
    the aligned reference. ADM columns come from the ``external`` CSV.
    """
    columns = parse_selection(selection)
    lengths = {}
    if alignment is not None:
        lengths["alignment"] = len(alignment)
    if degraded is not None:
        lengths["degraded"] = len(degraded)
    if reference is not None:
        lengths["reference"] = len(reference)
    if len(set(lengths.values())) > 1:
        raise FeatureError(f"frame counts disagree: {lengths}")
    if not lengths:
        raise FeatureError("no inputs given")
    n = next(iter(lengths.values()))

    def need(what, value):
        if value is None:
            raise FeatureError(f"selection {','.join(columns)} needs {what}")
        return value

    values = {}
    if "skip" in columns:
        values["skip"] = skip_feature(need("an alignment vector", alignment)).astype(np.float64)
    if "freeze" in columns:
        values["freeze"] = freeze_feature(need("an alignment vector", alignment)).astype(np.float64)
    if {"motion", "motion2"} & set(columns):
        values["motion"], values["motion2"] = motion_features(need("the aligned reference", reference))
    if set(VIF_COLUMNS) & set(columns):
        need("degraded frames", degraded)
        vifs = np.array(_per_frame(vif_scales, need("the aligned reference", reference), degraded, threads))
        for j, c in enumerate(VIF_COLUMNS):
            values[c] = vifs[:, j]
    for name, metric in (("psnr", psnr), ("ssim", ssim), ("ms_ssim", ms_ssim)):
        if name in columns:
            need("degraded frames", degraded)
            values[name] = np.array(_per_frame(metric, need("the aligned reference", reference), degraded, threads))
    adm = [c for c in columns if c in ADM_COLUMNS]
    if adm:
        values.update(ingest_external_features(need("an external ADM feature file (--adm)", external), adm, n))
    return FeatureMatrix(np.column_stack([values[c] for c in columns]), columns, clip_id)


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    column_names: tuple = field(default=())


def fit_normalization(matrices) -> NormalizationStats:
    """Per-column mean/std pooled over all frames of all training clips."""
    seqs = check_sequences(matrices)
    pool = np.concatenate(seqs, axis=0)
    if pool.shape[0] < 2:
        raise FeatureError("need at least two training frames to fit normalisation")
    std = pool.std(axis=0)
    std[std == 0] = 1.0
    names = ()
    first = matrices[0] if isinstance(matrices, (list, tuple)) and matrices else None
    if isinstance(first, FeatureMatrix):
        names = first.column_names
    return NormalizationStats(pool.mean(axis=0), std, names)


def apply_normalization(matrix, stats: NormalizationStats):
    """z-score a matrix (FeatureMatrix or array). Not idempotent."""
    if isinstance(matrix, FeatureMatrix):
        return FeatureMatrix((matrix.values - stats.mean) / stats.std, matrix.column_names, matrix.clip_id)
    return (np.asarray(matrix, dtype=np.float64) - stats.mean) / stats.std


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Standardise feature sequences with statistics pooled over every frame.

    ``X`` is a list of (T_i, F) arrays or FeatureMatrix objects; a single
    2-D array is treated as one sequence.
    """

    def fit(self, X, y=None):
        stats = fit_normalization(X if isinstance(X, (list, tuple)) else [X])
        self.mean_ = stats.mean
        self.scale_ = stats.std
        self.n_features_in_ = len(stats.mean)
        return self

    @property
    def stats_(self) -> NormalizationStats:
        check_is_fitted(self, ["mean_", "scale_"])
        return NormalizationStats(self.mean_, self.scale_)

    def transform(self, X):
        stats = self.stats_
        if isinstance(X, (list, tuple)):
            seqs = check_sequences(X, n_features=self.n_features_in_)
            return [apply_normalization(s, stats) for s in seqs]
        return apply_normalization(check_sequences([X], n_features=self.n_features_in_)[0], stats)

    def inverse_transform(self, X):
        stats = self.stats_
        if isinstance(X, (list, tuple)):
            return [np.asarray(s) * stats.std + stats.mean for s in X]
        return np.asarray(X) * stats.std + stats.mean
