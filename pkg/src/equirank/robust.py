"""Byzantine-resilient scalar aggregation: QrMed and BrMean.

QrMed is the quadratically regularized median,

    argmin_m (W/2) * (m - default)^2 + sum_i |x_i - m|,

solved exactly by scanning the piecewise-linear subgradient. The W term
bounds the influence of any single voter by 1/W. BrMean recenters at QrMed
and averages inputs clipped to a +-clip_radius window around it, so one
arbitrary voter moves the result by at most about 2/W + clip_radius/(n+1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ResilienceParams:
    """Aggregation knobs: larger `weight` resists outliers harder but biases
    toward `default`; `clip_radius` is the half-width of BrMean's clipping
    window."""

    weight: float = 1.0
    default: float = 0.0
    clip_radius: float = 1.0

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise ValueError(f"weight must be positive, got {self.weight}")
        if not self.clip_radius > 0:
            raise ValueError(f"clip_radius must be positive, got {self.clip_radius}")
        if not np.isfinite(self.default):
            raise ValueError(f"default must be finite, got {self.default}")


def _as_finite_array(values: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite input value")
    return arr


def qr_med(values: Sequence[float] | np.ndarray, params: ResilienceParams) -> float:
    """Exact quadratically regularized median; `default` on empty input.

    The subgradient W*(m - default) + sum_i sign(m - x_i) is strictly
    increasing in m, constant in the count term between sorted inputs, so
    the minimizer is found by scanning the n+1 gaps for the zero crossing.
    """
    xs = np.sort(_as_finite_array(values))
    n = xs.size
    if n == 0:
        return params.default
    w = params.weight
    d = params.default
    for k in range(n + 1):
        # With k inputs strictly below m and n-k above, the stationary point
        # of the smooth part is:
        m = d + (n - 2 * k) / w
        lo = -np.inf if k == 0 else xs[k - 1]
        hi = np.inf if k == n else xs[k]
        if m < lo:
            # Zero crossing happened inside the subdifferential at the
            # breakpoint `lo`.
            return float(lo)
        if m <= hi:
            return float(m)
    return float(xs[-1])  # pragma: no cover - scan always returns


def br_mean(values: Sequence[float] | np.ndarray, params: ResilienceParams) -> float:
    """Clipped mean centered at qr_med; `default` on empty input.

    Result lies within [c - clip_radius, c + clip_radius] for c = qr_med;
    when no input is clipped this reduces exactly to the plain mean.
    """
    xs = _as_finite_array(values)
    if xs.size == 0:
        return params.default
    center = qr_med(xs, params)
    clipped = np.clip(xs - center, -params.clip_radius, params.clip_radius)
    return float(center + clipped.mean())
