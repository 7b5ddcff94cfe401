"""Temporal filtering of pairwise range differences.

The clock offset moves far faster than the ranges, so only the offset-free
differences L_i - L_j can be smoothed over time. Every unordered pair (i < j)
is an independent channel; the lower triangle is always the mirror image.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DiffMatrix


@dataclass(frozen=True)
class FilterKind:
    kind: str = "passthrough"
    window: int = 1
    alpha: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("passthrough", "moving_average", "exponential", "synthetic"):
            raise ValueError(f"unknown filter {self.kind!r}")
        if int(self.window) != self.window or self.window < 1:
            raise ValueError("window must be an integer >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError("sigma must be finite and >= 0")

    @classmethod
    def passthrough(cls) -> "FilterKind":
        return cls("passthrough")

    @classmethod
    def moving_average(cls, window: int) -> "FilterKind":
        return cls("moving_average", window=window)

    @classmethod
    def exponential(cls, alpha: float) -> "FilterKind":
        return cls("exponential", alpha=alpha)

    @classmethod
    def synthetic(cls, sigma: float) -> "FilterKind":
        """Ideal filter plus Gaussian filtering error of std ``sigma`` per pair.

        Expects a raw series built without range noise, i.e. the truth differences.
        """
        return cls("synthetic", sigma=sigma)

    def to_dict(self) -> dict:
        params = {
            "passthrough": {},
            "moving_average": {"window": self.window},
            "exponential": {"alpha": self.alpha},
            "synthetic": {"sigma": self.sigma},
        }[self.kind]
        return {"kind": self.kind, **params}


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    # x: (T, channels); mean over the last `window` samples, truncated during warm-up
    c = np.cumsum(x, axis=0)
    out = np.empty_like(x)
    t = np.arange(x.shape[0])
    lo = t - window
    head = lo < 0
    out[head] = c[head] / (t[head] + 1)[:, None]
    out[~head] = (c[~head] - c[lo[~head]]) / window
    return out


def _exponential(x: np.ndarray, alpha: float) -> np.ndarray:
    out = np.empty_like(x)
    out[0] = x[0]
    for k in range(1, x.shape[0]):
        out[k] = alpha * x[k] + (1 - alpha) * out[k - 1]
    return out


def pair_noise(n: int, sigma: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Antisymmetric Gaussian error matrix (or a stack of ``size`` of them)."""
    iu = np.triu_indices(n, 1)
    shape = (iu[0].size,) if size is None else (size, iu[0].size)
    draws = rng.normal(0.0, sigma, shape)
    out = np.zeros(shape[:-1] + (n, n))
    out[..., iu[0], iu[1]] = draws
    out[..., iu[1], iu[0]] = -draws
    return out


def filter_series(
    series: Sequence[DiffMatrix],
    kind: FilterKind,
    rng: np.random.Generator | None = None,
) -> list[DiffMatrix]:
    if len(series) == 0:
        raise ValueError("empty series")
    n = series[0].n
    if any(m.n != n for m in series):
        raise ValueError("inconsistent station count in series")

    iu = np.triu_indices(n, 1)
    x = np.stack([m.delta[iu] for m in series])

    if kind.kind == "passthrough":
        y = x
    elif kind.kind == "moving_average":
        y = _moving_average(x, kind.window)
    elif kind.kind == "exponential":
        y = _exponential(x, kind.alpha)
    else:
        if kind.sigma > 0 and rng is None:
            raise ValueError("synthetic filter needs a random generator")
        y = x + (rng.normal(0.0, kind.sigma, x.shape) if kind.sigma > 0 else 0.0)

    return [DiffMatrix.from_upper(n, row, "filtered") for row in y]
