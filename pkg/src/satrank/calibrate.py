"""Isotonic mapping from raw rank scores back to the ordinal label scale."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from satrank.errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class IsotonicMap:
    breakpoints: np.ndarray
    values: np.ndarray
    lo: float
    hi: float
    constant: bool = False

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.breakpoints) != len(self.values) or len(self.values) == 0:
            raise DataError("isotonic map needs matching, non-empty knots and values")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise DataError("isotonic breakpoints must be strictly increasing")
        if np.any(np.diff(self.values) < 0):
            raise DataError("isotonic values must be non-decreasing")

    def to_json(self) -> dict:
        return {"breakpoints": [float(b) for b in self.breakpoints],
                "values": [float(v) for v in self.values],
                "lo": float(self.lo), "hi": float(self.hi), "constant": self.constant}

    @classmethod
    def from_json(cls, obj: dict) -> "IsotonicMap":
        return cls(obj["breakpoints"], obj["values"], obj["lo"], obj["hi"], obj.get("constant", False))


def pava(y, w=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit of ``y`` (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    means, weights, sizes = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        weights.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), weights.pop(), sizes.pop()
            m1, w1, s1 = means.pop(), weights.pop(), sizes.pop()
            wt = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt)
            weights.append(wt)
            sizes.append(s1 + s2)
    return np.repeat(means, sizes)


def fit_isotonic(raw_scores, targets, lo: float = 1.0, hi: float = 10.0) -> IsotonicMap:
    """Fit the monotone map; tied raw scores are merged into one weighted point."""
    raw = np.asarray(raw_scores, dtype=float)
    y = np.asarray(targets, dtype=float)
    if raw.shape != y.shape or raw.ndim != 1:
        raise DataError(f"fit_isotonic: shapes {raw.shape} and {y.shape} differ")
    if len(raw) < 2:
        raise DataError("fit_isotonic needs at least two observations")
    knots, inverse, counts = np.unique(raw, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=y)
    fitted = pava(sums / counts, counts)
    fitted = np.clip(fitted, lo, hi)
    constant = len(knots) == 1
    if constant:
        logger.warning("all raw scores identical; isotonic map is the constant mean target")
    return IsotonicMap(knots, fitted, lo, hi, constant)


def apply_isotonic(mapping: IsotonicMap | None, raw):
    """Interpolate between knots, clamp outside them, then clamp to the scale."""
    if mapping is None:
        raise DataError("isotonic map is not fitted")
    out = np.interp(np.asarray(raw, dtype=float), mapping.breakpoints, mapping.values)
    out = np.clip(out, mapping.lo, mapping.hi)
    return float(out) if np.ndim(out) == 0 else out
