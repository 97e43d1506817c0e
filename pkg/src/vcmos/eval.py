"""Score mapping and per-file evaluation: logistic MOS mapping, PCC, RMSE."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

MOS_MIN, MOS_MAX = 1.0, 5.0


class EvaluationError(ValueError):
    pass


def pcc(x, y) -> float:
    """Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise EvaluationError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise EvaluationError("PCC needs at least two pairs")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise EvaluationError("PCC undefined for zero-variance input")
    return float(np.clip(np.dot(xc, yc) / np.sqrt(sxx * syy), -1.0, 1.0))


def rmse(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise EvaluationError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) == 0:
        raise EvaluationError("RMSE of empty vectors")
    return float(np.sqrt(np.mean((x - y) ** 2)))


def _logistic(x, a, b, c, d):
    return a + (b - a) / (1.0 + np.exp(-np.clip(c * (x - d), -500, 500)))


class SigmoidMapping(RegressorMixin, BaseEstimator):
    """Monotone 4-parameter logistic from raw scores to MOS.

    m(x) = a + (b - a) / (1 + exp(-c (x - d))), with c >= 0 and b >= a,
    fitted by Nelder-Mead on squared error and clamped to [1, 5] on output.
    """

    def __init__(self, max_iter=4000, clamp=(MOS_MIN, MOS_MAX)):
        self.max_iter = max_iter
        self.clamp = clamp

    def fit(self, X, y):
        x = np.asarray(X, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        if len(x) != len(y):
            raise EvaluationError(f"{len(x)} raw scores for {len(y)} labels")
        if len(x) < 4:
            raise EvaluationError("mapping fit needs at least 4 pairs")
        span = x.max() - x.min()
        if span == 0:
            raise EvaluationError("degenerate input: all raw scores are equal")

        # fit on a unit-range copy of x; converted back to raw units below
        centre = float(np.median(x))
        z = (x - centre) / span

        def unpack(p):
            a, height, c, d = p
            return a, a + max(height, 0.0), max(c, 0.0), d

        def objective(p):
            return float(np.mean((_logistic(z, *unpack(p)) - y) ** 2))

        start = np.array([y.min(), y.max() - y.min(), 4.0, 0.0])
        res = minimize(
            objective, start, method="Nelder-Mead",
            options={"maxiter": self.max_iter, "maxfev": 2 * self.max_iter,
                     "xatol": 1e-10, "fatol": 1e-14},
        )
        a, b, c, d = unpack(res.x)
        self.a_, self.b_ = float(a), float(b)
        self.c_ = float(c / span)
        self.d_ = float(centre + d * span)
        self.n_iter_ = int(res.nit)
        return self

    def predict(self, X):
        check_is_fitted(self, ["a_", "b_", "c_", "d_"])
        x = np.asarray(X, dtype=np.float64)
        out = _logistic(x, self.a_, self.b_, self.c_, self.d_)
        if self.clamp is not None:
            out = np.clip(out, *self.clamp)
        return out

    def params(self) -> dict:
        check_is_fitted(self, ["a_", "b_", "c_", "d_"])
        return {"a": self.a_, "b": self.b_, "c": self.c_, "d": self.d_}


def fit_mapping(raw, mos, **kwargs) -> SigmoidMapping:
    return SigmoidMapping(**kwargs).fit(raw, mos)


@dataclass
class EvaluationReport:
    pcc: float
    rmse: float
    mapped: np.ndarray
    raw: np.ndarray
    labels: np.ndarray
    mapping: dict
    clip_ids: list = field(default_factory=list)

    @property
    def n_clips(self) -> int:
        return len(self.labels)

    def to_json(self, path=None, model: str = "", features: str = "") -> dict:
        doc = {"model": model, "features": features, "pcc": self.pcc,
               "rmse": self.rmse, "n_clips": self.n_clips, "mapping": self.mapping}
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=2)
                fh.write("\n")
        return doc

    def write_scatter(self, path) -> None:
        ids = self.clip_ids or [str(i) for i in range(self.n_clips)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["clip_id", "mos", "raw", "mapped"])
            for row in zip(ids, self.labels, self.raw, self.mapped):
                writer.writerow([row[0]] + [f"{v:.9g}" for v in row[1:]])


def evaluate_model(predictions, labels, clip_ids=None, calibration=None) -> EvaluationReport:
    """Map raw per-clip predictions to MOS and report PCC/RMSE against labels.

    The mapping is fitted on the evaluated set unless ``calibration`` gives a
    separate ``(raw, labels)`` pair to fit on.
    """
    raw = np.asarray(predictions, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if len(raw) != len(labels):
        raise EvaluationError(f"{len(raw)} predictions for {len(labels)} labels")
    fit_raw, fit_labels = (raw, labels) if calibration is None else calibration
    mapping = fit_mapping(fit_raw, fit_labels)
    mapped = mapping.predict(raw)
    try:
        r = pcc(mapped, labels)
    except EvaluationError:
        r = 0.0  # flat mapping: no linear association left
    return EvaluationReport(r, rmse(mapped, labels), mapped, raw, labels,
                            mapping.params(), list(clip_ids or []))


def export_timeline(timeline, path, features=None, extra: dict | None = None) -> None:
    """Write a per-frame timeline CSV.

    Columns: frame, q_raw, q_clamped, freeze_div10, skip_div10, then any
    ``extra`` per-frame series. ``features`` is a FeatureMatrix or a mapping
    with ``freeze``/``skip`` entries; missing ones are left blank.
    """
    q = np.asarray(getattr(timeline, "scores", timeline), dtype=np.float64)
    n = len(q)
    if n == 0:
        raise EvaluationError("empty timeline")
    series = {}
    for name in ("freeze", "skip"):
        col = None
        if features is not None:
            if hasattr(features, "column_names"):
                col = features.column(name) if name in features.column_names else None
            else:
                col = features.get(name)
        if col is not None:
            col = np.asarray(col, dtype=np.float64)
            if len(col) != n:
                raise EvaluationError(f"{name} has {len(col)} frames, timeline has {n}")
            series[name] = col / 10.0
    extra = dict(extra or {})
    for name, col in extra.items():
        if len(col) != n:
            raise EvaluationError(f"{name} has {len(col)} frames, timeline has {n}")
    clamped = np.clip(q, MOS_MIN, MOS_MAX)

    def fmt(arr, i):
        return "" if arr is None else f"{arr[i]:.9g}"

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "q_raw", "q_clamped", "freeze_div10", "skip_div10", *extra])
        for i in range(n):
            writer.writerow([i, f"{q[i]:.9g}", f"{clamped[i]:.9g}",
                             fmt(series.get("freeze"), i), fmt(series.get("skip"), i),
                             *(fmt(np.asarray(c), i) for c in extra.values())])
