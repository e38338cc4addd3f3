"""Axis-aligned box domains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Product of closed intervals [lower_i, upper_i]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        up = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.ndim != 1 or lo.shape != up.shape:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(up).all()):
            raise ValueError("box bounds must be finite")
        if not (lo < up).all():
            raise ValueError("box must have positive width in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x: np.ndarray, strict: bool = False) -> np.ndarray:
        """Per-point membership for points of shape (..., d)."""
        x = np.asarray(x)
        if strict:
            ok = (x > self.lower) & (x < self.upper)
        else:
            ok = (x >= self.lower) & (x <= self.upper)
        return ok.all(axis=-1)

    @staticmethod
    def cube(lo: float, up: float, dimension: int) -> "Box":
        return Box(np.full(dimension, float(lo)), np.full(dimension, float(up)))
