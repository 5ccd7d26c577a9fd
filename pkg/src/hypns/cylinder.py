"""Parabolic cylinders and time quadrature over their intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParabolicCylinder:
    """The space-time set ``B_r(x) x (t - r**(2 alpha), t]``.

    Parameters
    ----------
    center_x : tuple of float
        Spatial center.
    top_t : float
        Top of the (half-open) time interval.
    r : float
        Radius, strictly positive.
    alpha : float
        Dissipation exponent fixing the parabolic scaling.
    """

    center_x: tuple
    top_t: float
    r: float
    alpha: float

    def __post_init__(self):
        if not (self.r > 0 and np.isfinite(self.r)):
            raise ValueError(f"cylinder radius must be positive and finite, got {self.r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "center_x", tuple(float(c) for c in self.center_x))
        object.__setattr__(self, "top_t", float(self.top_t))
        object.__setattr__(self, "r", float(self.r))

    @property
    def duration(self) -> float:
        """Length ``r**(2 alpha)`` of the time interval."""
        return self.r ** (2.0 * self.alpha)

    @property
    def bottom_t(self) -> float:
        return self.top_t - self.duration

    @property
    def centroid_t(self) -> float:
        return self.top_t - 0.5 * self.duration

    def contains(self, x, t) -> np.ndarray:
        """Membership test, Euclidean in space (open ball, half-open interval).

        ``x`` may be an ``(m, d)`` array and ``t`` an ``(m,)`` array.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        d2 = np.sum((x - np.asarray(self.center_x)) ** 2, axis=1)
        return (d2 < self.r ** 2) & (t > self.bottom_t) & (t <= self.top_t)


def time_weights(times, t0: float, t1: float, tol: float = 1e-12) -> np.ndarray:
    """Weights ``w`` with ``sum(w * g(times))`` equal to the integral over ``[t0, t1]``.

    The integrand is taken piecewise linear between saved times, so the rule
    is the trapezoidal rule with exact treatment of partial end intervals.

    Raises
    ------
    ValueError
        If ``[t0, t1]`` is not inside the saved time range.
    """
    times = np.asarray(times, dtype=float)
    w = np.zeros_like(times)
    if t1 < t0:
        raise ValueError("empty time window")
    span = max(abs(times[-1]), abs(times[0]), 1.0)
    if t0 < times[0] - tol * span or t1 > times[-1] + tol * span:
        raise ValueError(
            f"time window [{t0:.6g}, {t1:.6g}] exceeds the saved range "
            f"[{times[0]:.6g}, {times[-1]:.6g}]"
        )
    t0 = max(t0, times[0])
    t1 = min(t1, times[-1])
    if t1 == t0 or len(times) == 1:
        return w
    for j in range(len(times) - 1):
        a, b = times[j], times[j + 1]
        lo, hi = max(a, t0), min(b, t1)
        if hi <= lo:
            continue
        h = b - a
        # integral of the two hat functions over [lo, hi]
        wa = ((b - lo) ** 2 - (b - hi) ** 2) / (2.0 * h)
        wb = ((hi - a) ** 2 - (lo - a) ** 2) / (2.0 * h)
        w[j] += wa
        w[j + 1] += wb
    return w
