"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np


def check_sequences(X, n_features: int | None = None, min_length: int = 1) -> list[np.ndarray]:
    """Coerce ``X`` to a list of finite float64 (T_i, F) arrays.

    Accepts arrays or objects exposing ``.values`` (FeatureMatrix).
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ValueError("expected a non-empty list of (T, F) feature sequences")
    out = []
    for i, seq in enumerate(X):
        arr = np.asarray(getattr(seq, "values", seq), dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"sequence {i} has shape {arr.shape}; expected (T, F)")
        if arr.shape[0] < min_length:
            raise ValueError(f"sequence {i} has {arr.shape[0]} frames; need >= {min_length}")
        if n_features is not None and arr.shape[1] != n_features:
            raise ValueError(f"sequence {i} has {arr.shape[1]} features, expected {n_features}")
        if not np.isfinite(arr).all():
            raise ValueError(f"sequence {i} contains NaN or Inf")
        out.append(arr)
    widths = {a.shape[1] for a in out}
    if len(widths) > 1:
        raise ValueError(f"inconsistent feature counts across sequences: {sorted(widths)}")
    return out


def check_targets(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != n:
        raise ValueError(f"{len(y)} targets for {n} sequences")
    if not np.isfinite(y).all():
        raise ValueError("targets contain NaN or Inf")
    return y
