"""Parabolic cylinder geometry, Vitali selection and covering estimators.

Geometry here is Euclidean in space (no periodic wrap): cylinders are
``B_r(x) x (t - r^{2 alpha}, t]`` with open balls and half-open intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from hypns.cylinder import ParabolicCylinder

__all__ = [
    "dilate",
    "CylinderFamily",
    "CoverResult",
    "ScanResult",
    "disjoint",
    "vitali_select",
    "covered_by",
    "parabolic_premeasure",
    "singular_scan",
    "box_counting_estimate",
    "box_dimension_bound",
]


def dilate(cyl: ParabolicCylinder, lam: float) -> ParabolicCylinder:
    """Dilation about the centroid: radius ``lam r``, same ``x`` and centroid time.

    The new interval has length ``(lam r)^{2 alpha}`` and is centered at
    ``t - r^{2 alpha} / 2``.
    """
    if not lam > 0:
        raise ValueError("dilation factor must be positive")
    if lam == 1:
        return cyl
    r = lam * cyl.r
    top = cyl.centroid_t + 0.5 * r ** (2 * cyl.alpha)
    return ParabolicCylinder(cyl.center_x, top, r, cyl.alpha)


@dataclass(frozen=True)
class CylinderFamily:
    """Finite family of parabolic cylinders with a common ``alpha``."""

    items: tuple

    def __init__(self, items):
        items = tuple(items)
        for c in items:
            if not isinstance(c, ParabolicCylinder):
                raise TypeError("family members must be ParabolicCylinder")
            if not math.isfinite(c.r):
                raise ValueError("radii must be finite")
        if len({c.alpha for c in items}) > 1:
            raise ValueError("mixed alpha in one family")
        object.__setattr__(self, "items", items)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def sup_radius(self) -> float:
        return max((c.r for c in self.items), default=0.0)


@dataclass
class CoverResult:
    """Selected cylinders and the gauge sum ``sum r_i^beta``."""

    selected: list
    premeasure: float
    beta: float
    delta: float
    method: str = ""

    @property
    def count(self) -> int:
        return len(self.selected)


def _exact_sq_dist(a, b) -> Fraction:
    return sum((Fraction(x) - Fraction(y)) ** 2 for x, y in zip(a, b))


def disjoint(c1: ParabolicCylinder, c2: ParabolicCylinder) -> bool:
    """Exact disjointness of two cylinders.

    Open balls are disjoint iff ``|x_1 - x_2| >= r_1 + r_2``, tested in
    rational arithmetic on the stored floats; half-open intervals are
    disjoint iff one ends at or before the other begins.
    """
    if c1.top_t <= c2.bottom_t or c2.top_t <= c1.bottom_t:
        return True
    return _exact_sq_dist(c1.center_x, c2.center_x) >= (Fraction(c1.r) + Fraction(c2.r)) ** 2


def vitali_select(fam) -> CoverResult:
    """Greedy disjoint subfamily, largest radius first.

    Ties are broken by the lexicographic order of ``(center_x, top_t)``, so
    the output is deterministic.  Every input cylinder meets a kept one of
    radius at least its own and is therefore inside its 5-dilation.
    """
    if not isinstance(fam, CylinderFamily):
        fam = CylinderFamily(fam)
    order = sorted(fam.items, key=lambda c: (-c.r, c.center_x, c.top_t))
    kept: list = []
    for c in order:
        # cheap float prefilter before the exact test
        if all(disjoint(c, k) for k in kept):
            kept.append(c)
    return CoverResult(kept, float(len(kept)), 0.0, fam.sup_radius, "vitali")


def covered_by(points_x, points_t, cylinders) -> np.ndarray:
    """Boolean mask: which points lie in the union of ``cylinders``."""
    px = np.atleast_2d(np.asarray(points_x, dtype=float))
    pt = np.atleast_1d(np.asarray(points_t, dtype=float))
    hit = np.zeros(len(pt), dtype=bool)
    for c in cylinders:
        rest = ~hit
        if not rest.any():
            break
        hit[rest] |= c.contains(px[rest], pt[rest])
    return hit


def _as_points(points):
    """Split ``(x_1, ..., x_d, t)`` rows into spatial and time arrays."""
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 3)), np.zeros(0)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError("points must be rows (x_1, ..., x_d, t)")
    return arr[:, :-1], arr[:, -1]


def _centroid_cylinder(x, t, rho, alpha) -> ParabolicCylinder:
    return ParabolicCylinder(tuple(x), t + 0.5 * rho ** (2 * alpha), rho, alpha)


def _greedy_cover(px, pt, rho, alpha, gauge: str = "parabolic"):
    """Farthest-first seeding with cylinders (or balls) centered on the seeds.

    Returns the list of seed indices; each seed carries a cylinder whose
    centroid is the seed point.
    """
    n = len(pt)
    if n == 0:
        return []
    covered = np.zeros(n, dtype=bool)
    # distance to the nearest seed, parabolic or Euclidean
    dist = np.full(n, np.inf)
    seeds = []
    cur = 0
    while True:
        seeds.append(cur)
        dx = np.sqrt(np.sum((px - px[cur]) ** 2, axis=1))
        dt = np.abs(pt - pt[cur])
        if gauge == "parabolic":
            half = 0.5 * rho ** (2 * alpha)
            covered |= (dx < rho) & (dt < half)
            d_new = np.maximum(dx, dt ** (1.0 / (2 * alpha)))
        else:
            dd = np.sqrt(dx * dx + dt * dt)
            covered |= dd < rho
            d_new = dd
        dist = np.minimum(dist, d_new)
        covered[cur] = True
        if covered.all():
            return seeds
        cand = np.where(covered, -np.inf, dist)
        cur = int(np.argmax(cand))


def _grid_cover(px, pt, rho, alpha):
    """Cells of a fixed lattice, each inside one cylinder of radius ``rho``."""
    d = px.shape[1]
    a = 2.0 * rho / math.sqrt(d) * (1 - 1e-9)
    T = rho ** (2 * alpha)
    cx = np.floor(px / a).astype(np.int64)
    # cells (kT, (k+1)T] in time
    ct = np.ceil(pt / T).astype(np.int64) - 1
    cells = np.unique(np.column_stack([cx, ct]), axis=0)
    cyls = [ParabolicCylinder(tuple((c[:-1] + 0.5) * a), (c[-1] + 1) * T, rho, alpha) for c in cells]
    return cyls


def parabolic_premeasure(points, beta: float, delta: float, alpha: float = 1.25,
                         method: str = "greedy") -> CoverResult:
    """Upper bound for the parabolic Hausdorff premeasure ``P^beta_delta``.

    Parameters
    ----------
    points : array_like
        Rows ``(x_1, ..., x_d, t)``.
    beta : float
        Gauge exponent, ``>= 0``.
    delta : float
        Radius bound; all cylinders have radius ``delta / 2``.
    method : {"greedy", "grid"}
        Farthest-first seeding (cylinders centered on uncovered points) or
        occupied cells of a fixed lattice.  Only the lattice count is
        monotone and subadditive in the point set.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if not delta > 0:
        raise ValueError("delta must be positive")
    px, pt = _as_points(points)
    rho = 0.5 * delta
    if method == "greedy":
        seeds = _greedy_cover(px, pt, rho, alpha)
        cyls = [_centroid_cylinder(px[i], pt[i], rho, alpha) for i in seeds]
    elif method == "grid":
        cyls = _grid_cover(px, pt, rho, alpha) if len(pt) else []
    else:
        raise ValueError(f"unknown method {method!r}")
    return CoverResult(cyls, len(cyls) * rho ** beta, beta, delta, method)


@dataclass
class ScanResult:
    """Output of :func:`singular_scan`.

    ``bound_sum`` is ``sum r^{5 - 4 alpha}`` over the disjoint subfamily and
    ``energy_sum`` the weighted extension energy ``r^{5 - 4 alpha} E^flat``
    summed over the same cylinders.
    """

    flagged: list
    values: dict
    cover: CoverResult
    bound_sum: float
    energy_sum: float
    threshold: float
    n_candidates: int = 0

    @property
    def audit_ok(self) -> bool:
        return self.threshold * self.bound_sum <= self.energy_sum * (1 + 1e-12)


def singular_scan(traj, criterion="eflat", radii=None, threshold: float = 1e-3,
                  times=None, stride: int = 1) -> ScanResult:
    """Flag grid points whose criterion exceeds ``threshold`` at every radius.

    Parameters
    ----------
    traj : Trajectory
    criterion : "eflat" or callable
        ``"eflat"`` evaluates ``E^flat`` on the whole grid at once; a callable
        ``f(traj, x, t, r) -> float`` is evaluated pointwise.
    radii : sequence of float
        Strictly decreasing.
    threshold : float
    times : sequence of float, optional
        Candidate times; default every saved time whose largest cylinder fits.
    stride : int
        Spatial subsampling of candidate grid points.
    """
    from hypns.diagnostics import eflat_field

    params = traj.params
    alpha = params.alpha
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if radii is None:
        radii = [params.torus_len / 16, params.torus_len / 32, params.torus_len / 64]
    radii = [float(r) for r in radii]
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    saved = np.asarray(traj.times)
    if times is None:
        need = radii[0] ** (2 * alpha)
        times = [t for t in saved if t - need >= saved[0] - 1e-12]
    coords = params.coordinates()
    sl = tuple(slice(None, None, stride) for _ in range(params.dim))
    grid_idx = np.stack(np.meshgrid(*[np.arange(params.grid_n)[s] for s in sl], indexing="ij"), -1)
    grid_idx = grid_idx.reshape(-1, params.dim)
    flagged = []
    values = {}
    n_cand = 0
    for t in times:
        over = np.ones(len(grid_idx), dtype=bool)
        per_r = []
        for r in radii:
            if criterion == "eflat":
                field_r = eflat_field(traj, t, r)
                vals = field_r[tuple(grid_idx.T)]
            else:
                vals = np.array([criterion(traj, tuple(coords[a][i] for a, i in enumerate(ix)), t, r)
                                 for ix in grid_idx])
            per_r.append(vals)
            over &= vals > threshold
        n_cand += len(grid_idx)
        for m in np.nonzero(over)[0]:
            x = tuple(float(coords[a][i]) for a, i in enumerate(grid_idx[m]))
            flagged.append((x, float(t)))
            values[(x, float(t))] = tuple(float(v[m]) for v in per_r)
    r_min = radii[-1]
    fam = CylinderFamily(ParabolicCylinder(x, t, r_min, alpha) for x, t in flagged)
    cover = vitali_select(fam)
    w = r_min ** (5 - 4 * alpha)
    bound = w * len(cover.selected)
    energy = sum(w * values[(c.center_x, c.top_t)][-1] for c in cover.selected)
    cover.beta = 5 - 4 * alpha
    cover.premeasure = bound
    return ScanResult(flagged, values, cover, bound, energy, threshold, n_cand)


def box_counting_estimate(points, deltas, alpha: float = 1.25, gauge: str = "parabolic") -> dict:
    """Greedy cover counts ``N(delta)`` and the log-log slope.

    Parameters
    ----------
    points : array_like
        Rows ``(x_1, ..., x_d, t)``.
    deltas : sequence of float
        At least three scales.
    gauge : {"parabolic", "euclidean"}
        Cylinders ``Q_delta`` or Euclidean space-time balls of diameter ``delta``.

    Returns
    -------
    dict
        ``slope`` of ``log N`` against ``-log delta``, ``counts``, ``deltas``
        and ``bound`` ``(15 - 2 alpha - 8 alpha^2) / 3``.
    """
    deltas = [float(d) for d in deltas]
    if len(deltas) < 3:
        raise ValueError("need at least three scales")
    if gauge not in ("parabolic", "euclidean"):
        raise ValueError(f"unknown gauge {gauge!r}")
    px, pt = _as_points(points)
    counts = []
    for dl in deltas:
        if gauge == "parabolic":
            counts.append(len(_greedy_cover(px, pt, dl, alpha)))
        else:
            counts.append(len(_greedy_cover(px, pt, dl / 2, alpha, gauge="euclidean")))
    counts = np.array(counts)
    if np.any(counts == 0):
        slope = 0.0
    else:
        slope = float(np.polyfit(-np.log(deltas), np.log(counts), 1)[0])
    return {"slope": slope, "counts": counts, "deltas": np.array(deltas),
            "bound": box_dimension_bound(alpha), "gauge": gauge}


def box_dimension_bound(alpha):
    """``(15 - 2 alpha - 8 alpha^2) / 3``; exact for ``Fraction`` input."""
    if isinstance(alpha, Fraction):
        return (15 - 2 * alpha - 8 * alpha * alpha) / 3
    return (15.0 - 2.0 * alpha - 8.0 * alpha * alpha) / 3.0
