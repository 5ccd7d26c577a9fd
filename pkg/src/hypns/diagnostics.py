"""Localized scale-invariant quantities, excess and epsilon-regularity criteria.

Cylinder integrals are ``|B_r|`` times the grid mean over the ball times a
trapezoidal time integral over the saved snapshots in ``(t - r^{2 alpha}, t]``.
With this convention every quantity transforms exactly under the dyadic
rescaling of :func:`rescale_solution`.

Suprema over unbounded radii ``R >= r/4`` run over the dyadic grid
``r/4 * 2^j`` truncated at ``L/2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from hypns.cylinder import ParabolicCylinder, time_weights
from hypns.spectral import (
    ModelParams,
    PressureField,
    VelocityField,
    ball_mask,
    ball_volume,
    fft_workers,
    wavenumbers,
)

__all__ = [
    "ExcessReport",
    "ScaleReport",
    "CriterionResult",
    "maximal_function_field",
    "excess",
    "tail_functional",
    "scale_quantities",
    "eps_maximal",
    "eps_variant",
    "eps_ckn",
    "eflat_field",
    "rescale_solution",
    "RescaledTrajectory",
    "excess_decay_probe",
    "dyadic_radii",
]


# ---------------------------------------------------------------------------
# helpers


def _check_radius(params: ModelParams, r: float, factor: float = 1.0):
    if not r > 0:
        raise ValueError("radius must be positive")
    if factor * r > params.torus_len / 8 * (1 + 1e-12):
        raise ValueError(f"radius {factor:g} x {r:g} exceeds L/8 = {params.torus_len / 8:g}")


def _window(traj, cyl: ParabolicCylinder):
    """Time weights of the cylinder and indices of the slices it contains."""
    times = np.asarray(traj.times)
    w = time_weights(times, cyl.bottom_t, cyl.top_t)
    tol = 1e-9 * cyl.duration
    inside = np.nonzero((times > cyl.bottom_t + tol) & (times <= cyl.top_t + tol))[0]
    return w, inside


def _u_values(snap) -> np.ndarray:
    return snap.u_phys()


def _p_values(snap) -> np.ndarray:
    return snap.p_phys()


def _grad_sq(snap) -> np.ndarray:
    """``|grad u|^2`` on the grid."""
    if hasattr(snap, "grad_sq"):
        return snap.grad_sq()
    params = snap.u.params
    d = params.dim
    wk = wavenumbers(params)
    g = np.stack([1j * wk.kd[j] * snap.u.coeffs for j in range(d)])
    n = params.grid_n
    vals = sfft.ifftn(g, axes=tuple(range(-d, 0)), workers=fft_workers()).real * n ** d
    return np.sum(vals ** 2, axis=(0, 1))


class _SnapCache:
    """Physical arrays of one snapshot, computed once."""

    def __init__(self, snap):
        self.snap = snap

    @cached_property
    def u(self):
        return _u_values(self.snap)

    @cached_property
    def p(self):
        return _p_values(self.snap)

    @cached_property
    def u2(self):
        return np.sum(self.u ** 2, axis=0)

    @cached_property
    def grad2(self):
        return _grad_sq(self.snap)


def _cache(traj) -> list:
    c = getattr(traj, "_hypns_cache", None)
    if c is None or len(c) != len(traj.snapshots):
        c = [_SnapCache(s) for s in traj.snapshots]
        try:
            object.__setattr__(traj, "_hypns_cache", c)
        except (AttributeError, TypeError):
            pass
    return c


def _space_time_integral(traj, cyl: ParabolicCylinder, func) -> float:
    """``int_{Q_r} func`` with ``func(cache) -> grid array``."""
    params = traj.params
    w, _ = _window(traj, cyl)
    mask = ball_mask(params, cyl.center_x, cyl.r)
    vol = ball_volume(cyl.r, params.dim)
    cache = _cache(traj)
    total = 0.0
    for j in np.nonzero(w)[0]:
        total += w[j] * vol * float(np.mean(func(cache[j])[mask]))
    return total


def dyadic_radii(r: float, upper: float) -> np.ndarray:
    """``r * 2^j`` for ``j = 0, 1, ...`` up to ``upper``."""
    out = []
    R = r
    while R <= upper * (1 + 1e-12):
        out.append(R)
        R *= 2.0
    return np.array(out)


# ---------------------------------------------------------------------------
# maximal function


def _ball_kernel(params: ModelParams, r: float):
    """Rfft of the periodic ball indicator centered at the origin and its point count."""
    mask = ball_mask(params, np.zeros(params.dim), r)
    return sfft.rfftn(mask.astype(float), workers=fft_workers()), int(mask.sum())


def _ball_means(f: np.ndarray, params: ModelParams, r: float) -> np.ndarray:
    """Grid means of ``f`` over ``B_r(x)`` at every grid point ``x``."""
    ker, count = _ball_kernel(params, r)
    fh = sfft.rfftn(f, workers=fft_workers())
    # the ball is symmetric, so correlation equals convolution
    return sfft.irfftn(fh * ker, s=f.shape, workers=fft_workers()) / count


def maximal_function_field(f, radii=None, params: ModelParams | None = None) -> np.ndarray:
    """``max_r r^{-3} int_{B_r(x)} f`` over ``radii`` at every grid point.

    ``int_{B_r}`` is ``|B_r|`` times the grid mean, so a constant ``c``
    gives ``c |B_1|`` exactly.

    Parameters
    ----------
    f : ndarray
        Physical values.
    radii : sequence of float, optional
        Each in ``(h, L/2]``; default ``h 2^j`` for ``j >= 1``.
    params : ModelParams
    """
    if params is None:
        raise TypeError("params required")
    h = params.h
    if radii is None:
        radii = dyadic_radii(2 * h, params.torus_len / 2)
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise ValueError("empty radius list")
    if np.any(radii <= h * (1 - 1e-12)) or np.any(radii > params.torus_len / 2 * (1 + 1e-12)):
        raise ValueError("radii must lie in (h, L/2]")
    f = np.asarray(f, dtype=float)
    d = params.dim
    out = np.full(f.shape, -np.inf)
    for r in radii:
        val = ball_volume(r, d) / r ** 3 * _ball_means(f, params, r)
        out = np.maximum(out, val)
    return out


# ---------------------------------------------------------------------------
# excess and tail


@dataclass(frozen=True)
class ExcessReport:
    """Velocity, pressure and nonlocal excess; ``total`` is their sum."""

    e_v: float
    e_p: float
    e_nl: float
    r_sup_max: float = float("nan")

    def __post_init__(self):
        for name in ("e_v", "e_p", "e_nl"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def total(self) -> float:
        return self.e_v + self.e_p + self.e_nl


def _cylinder(traj, x, t, r) -> ParabolicCylinder:
    return ParabolicCylinder(tuple(x), t, r, traj.params.alpha)


def excess(traj, cyl: ParabolicCylinder) -> ExcessReport:
    """Excess components on ``Q_r(x, t)``.

    ``E^V = (mean_Q |u - (u)_Q|^3)^{1/3}``,
    ``E^P = r^{2 alpha - 1} (mean_Q |p - [p]_{B_r}|^{3/2})^{2/3}`` and
    ``E^nl = (mean_t sup_R (r/R)^{3 alpha} mean_{B_R} |u - (u)_Q|^2)^{1/2}``.
    """
    params = traj.params
    _check_radius(params, cyl.r)
    alpha = params.alpha
    d = params.dim
    w, _ = _window(traj, cyl)
    dur = cyl.duration
    mask = ball_mask(params, cyl.center_x, cyl.r)
    cache = _cache(traj)
    idx = np.nonzero(w)[0]
    mean_u = np.zeros(d)
    for j in idx:
        mean_u += w[j] * cache[j].u[:, mask].mean(axis=1)
    mean_u /= dur
    ev = 0.0
    ep = 0.0
    for j in idx:
        du = cache[j].u[:, mask] - mean_u[:, None]
        ev += w[j] * float(np.mean(np.sum(du * du, axis=0) ** 1.5))
        pb = cache[j].p[mask]
        ep += w[j] * float(np.mean(np.abs(pb - pb.mean()) ** 1.5))
    e_v = (ev / dur) ** (1 / 3)
    e_p = cyl.r ** (2 * alpha - 1) * (ep / dur) ** (2 / 3)
    Rs = dyadic_radii(cyl.r / 4, params.torus_len / 2)
    masks = [ball_mask(params, cyl.center_x, R) for R in Rs]
    nl = 0.0
    for j in idx:
        diff2 = np.sum((cache[j].u - mean_u.reshape((d,) + (1,) * d)) ** 2, axis=0)
        vals = [(cyl.r / R) ** (3 * alpha) * float(np.mean(diff2[m])) for R, m in zip(Rs, masks)]
        nl += w[j] * max(vals)
    e_nl = math.sqrt(max(nl, 0.0) / dur)
    return ExcessReport(e_v, e_p, e_nl, float(Rs[-1]))


def tail_functional(traj, x, t: float, r: float) -> float:
    """``T(u; x, t, r) = r^{5 alpha - 2} int sup_{R >= r/4} R^{-3 alpha} mean_{B_R} |u|^2 dt``.

    The sup runs over ``r/4 * 2^j <= L/2``.
    """
    params = traj.params
    _check_radius(params, r)
    alpha = params.alpha
    cyl = _cylinder(traj, x, t, r)
    w, _ = _window(traj, cyl)
    Rs = dyadic_radii(r / 4, params.torus_len / 2)
    masks = [ball_mask(params, cyl.center_x, R) for R in Rs]
    cache = _cache(traj)
    total = 0.0
    for j in np.nonzero(w)[0]:
        u2 = cache[j].u2
        total += w[j] * max(R ** (-3 * alpha) * float(np.mean(u2[m])) for R, m in zip(Rs, masks))
    return r ** (5 * alpha - 2) * total


# ---------------------------------------------------------------------------
# scale-invariant quantities


@dataclass(frozen=True)
class ScaleReport:
    """``A, B, C, D, F, T`` and ``E^flat`` at one ``(x, t, r)``.

    ``prefactors`` records the power ``q`` in each ``r^{-q}`` normalization
    (``T`` carries ``r^{+(5 alpha - 2)}``).
    """

    a: float
    b_q: float
    c_q: float
    d_q: float
    f_q: float
    t_q: float
    e_flat: float
    prefactors: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return {"A": self.a, "B": self.b_q, "C": self.c_q, "D": self.d_q,
                "F": self.f_q, "T": self.t_q, "E_flat": self.e_flat}


def scale_quantities(traj, cyl: ParabolicCylinder, yg=None, with_eflat: bool = True) -> ScaleReport:
    """The scale-invariant quantities on ``Q_r(x, t)``.

    ``A = sup_t r^{-(5 - 4 alpha)} int_{B_r} |u|^2`` over saved slices,
    ``B = r^{-(3 - 2 alpha)} int_Q |grad u|^2``,
    ``C = r^{-(6 - 4 alpha)} int_Q |u|^3``, ``D = r^{-(6 - 4 alpha)} int_Q |p|^{3/2}``,
    ``F = r^{-(5 - 2 alpha)} int_Q |u|^2``, ``T`` from :func:`tail_functional`
    and ``E^flat`` from :func:`hypns.extension.eflat_quantity` (skipped when
    ``with_eflat`` is false).
    """
    from hypns.extension import eflat_quantity

    params = traj.params
    _check_radius(params, cyl.r)
    alpha = params.alpha
    r = cyl.r
    d = params.dim
    pre = {"A": 5 - 4 * alpha, "B": 3 - 2 * alpha, "C": 6 - 4 * alpha, "D": 6 - 4 * alpha,
           "F": 5 - 2 * alpha, "T": -(5 * alpha - 2), "E_flat": 5 - 4 * alpha}
    _, inside = _window(traj, cyl)
    mask = ball_mask(params, cyl.center_x, r)
    vol = ball_volume(r, d)
    cache = _cache(traj)
    a = max((vol * float(np.mean(cache[j].u2[mask])) for j in inside), default=0.0)
    a /= r ** pre["A"]
    b_q = _space_time_integral(traj, cyl, lambda c: c.grad2) / r ** pre["B"]
    c_q = _space_time_integral(traj, cyl, lambda c: c.u2 ** 1.5) / r ** pre["C"]
    d_q = _space_time_integral(traj, cyl, lambda c: np.abs(c.p) ** 1.5) / r ** pre["D"]
    f_q = _space_time_integral(traj, cyl, lambda c: c.u2) / r ** pre["F"]
    t_q = tail_functional(traj, cyl.center_x, cyl.top_t, r)
    e_flat = eflat_quantity(traj, cyl, yg) if with_eflat else float("nan")
    return ScaleReport(a, b_q, c_q, d_q, f_q, t_q, e_flat, pre)


# ---------------------------------------------------------------------------
# epsilon-regularity criteria


@dataclass(frozen=True)
class CriterionResult:
    """Outcome of an epsilon-regularity test: ``holds = lhs < eps``."""

    holds: bool
    margin: float
    lhs: float
    trace: tuple = ()

    def __iter__(self):
        yield self.holds
        yield self.margin


def eps_maximal(traj, cyl: ParabolicCylinder, eps: float, radii=None) -> CriterionResult:
    """``r^{-(6 - 4 alpha)} int_{Q_{2r}} (M|u|^2 + |p|)^{3/2} < eps``."""
    params = traj.params
    _check_radius(params, cyl.r, 2.0)
    if eps <= 0:
        raise ValueError("eps must be positive")
    alpha = params.alpha
    big = ParabolicCylinder(cyl.center_x, cyl.top_t, 2 * cyl.r, alpha)
    w, _ = _window(traj, big)
    mask = ball_mask(params, big.center_x, big.r)
    vol = ball_volume(big.r, params.dim)
    cache = _cache(traj)
    total = 0.0
    for j in np.nonzero(w)[0]:
        M = maximal_function_field(cache[j].u2, radii, params)
        total += w[j] * vol * float(np.mean(((M + np.abs(cache[j].p)) ** 1.5)[mask]))
    lhs = total / cyl.r ** (6 - 4 * alpha)
    return CriterionResult(lhs < eps, eps - lhs, lhs)


def eps_variant(traj, x, t: float, eps: float, r: float = 1.0) -> CriterionResult:
    """Unit-scale variant criterion evaluated on the solution rescaled by ``r``.

    ``int_{Q_2}(|u_r|^3 + |p_r|^{3/2}) + T(u_r; 0, 0, 2)`` equals
    ``r^{-(6 - 4 alpha)} int_{Q_{2r}(x, t)} (|u|^3 + |p|^{3/2}) + T(u; x, t, 2r)``.
    """
    params = traj.params
    _check_radius(params, r, 2.0)
    if eps <= 0:
        raise ValueError("eps must be positive")
    alpha = params.alpha
    big = _cylinder(traj, x, t, 2 * r)
    loc = _space_time_integral(traj, big, lambda c: c.u2 ** 1.5 + np.abs(c.p) ** 1.5)
    lhs = loc / r ** (6 - 4 * alpha) + tail_functional(traj, x, t, 2 * r)
    return CriterionResult(lhs < eps, eps - lhs, lhs)


def eps_ckn(traj, x, t: float, delta: float, radii, yg=None) -> CriterionResult:
    """``min_r E^flat(u; x, t, r) < delta`` over a decreasing radius list.

    The full trace ``E^flat(r)`` is returned in ``trace``.
    """
    from hypns.extension import eflat_quantity

    params = traj.params
    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("empty radius list")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    if radii[-1] < 4 * params.h * (1 - 1e-12):
        warnings.warn("smallest radius is below four grid spacings; E-flat is under-resolved")
    trace = tuple(eflat_quantity(traj, _cylinder(traj, x, t, r), yg) for r in radii)
    lhs = min(trace)
    return CriterionResult(lhs < delta, delta - lhs, lhs, trace)


def eflat_field(traj, t: float, r: float) -> np.ndarray:
    """``E^flat(u; x, t, r)`` at every grid point ``x``.

    Same quadrature as :func:`hypns.extension.eflat_quantity` with the
    default y-grid; the ball integral is a convolution.
    """
    from hypns.extension import eflat_column

    params = traj.params
    _check_radius(params, r)
    alpha = params.alpha
    cyl = _cylinder(traj, np.zeros(params.dim), t, r)
    w, _ = _window(traj, cyl)
    ker, count = _ball_kernel(params, r)
    vol = ball_volume(r, params.dim)
    acc = np.zeros(params.shape)
    for j in np.nonzero(w)[0]:
        acc += w[j] * eflat_column(traj, j, r)
    conv = sfft.irfftn(sfft.rfftn(acc, workers=fft_workers()) * ker, s=acc.shape,
                       workers=fft_workers()) / count
    return vol * conv / r ** (5 - 4 * alpha)


# ---------------------------------------------------------------------------
# rescaling


class _RescaledSnapshot:
    def __init__(self, base, r: float, params: ModelParams):
        self._base = base
        self._r = r
        alpha = base.u.params.alpha
        self._fu = r ** (2 * alpha - 1)
        self._fp = r ** (4 * alpha - 2)
        self.t = base.t / r ** (2 * alpha)
        self._params = params

    @cached_property
    def u(self) -> VelocityField:
        return VelocityField(self._fu * self._base.u.coeffs, self._params, check=False)

    @cached_property
    def p(self) -> PressureField:
        return PressureField(self._fp * self._base.p.coeffs, self._params)

    @property
    def params(self):
        return self._params

    def u_phys(self):
        return self._fu * self._base.u_phys()

    def p_phys(self):
        return self._fp * self._base.p_phys()

    def grad_sq(self):
        # grad u_r(x) = r^{2 alpha} (grad u)(r x)
        return (self._fu * self._r) ** 2 * _grad_sq(self._base)


class RescaledTrajectory:
    """Lazy view of ``u_r(x, t) = r^{2 alpha - 1} u(r x, r^{2 alpha} t)`` and ``p_r``.

    The coefficient arrays are shared with the base trajectory; the period
    becomes ``L / r`` and times become ``t / r^{2 alpha}``.
    """

    def __init__(self, base, r: float):
        if isinstance(base, RescaledTrajectory):
            r = base.r * r
            base = base.base
        self.base = base
        self.r = float(r)
        bp = base.params
        self.params = bp.with_(torus_len=bp.torus_len / r)
        self.snapshots = [_RescaledSnapshot(s, self.r, self.params) for s in base.snapshots]
        self.config = getattr(base, "config", None)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def __len__(self):
        return len(self.snapshots)


def _is_dyadic(r: float) -> bool:
    if not r > 0:
        return False
    m, e = math.frexp(r)
    return m == 0.5


def rescale_solution(traj, r: float):
    """Exact rescaled view; ``r`` must be an integer power of 2.

    Raises
    ------
    ValueError
        For non-dyadic ``r``.
    """
    if not _is_dyadic(r):
        raise ValueError(f"rescaling factor must be a power of two, got {r}")
    if r == 1:
        return traj
    return RescaledTrajectory(traj, r)


def excess_decay_probe(traj, x, t: float, r: float, theta: float) -> dict:
    """Excess at ``r`` and ``theta r`` and their ratio.

    Returns
    -------
    dict
        ``E_r``, ``E_thr``, ``ratio`` (0 with ``zero_flag`` when ``E_r = 0``)
        and ``decayed`` (ratio <= 1/2).
    """
    if not 0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 1/2)")
    e_r = excess(traj, _cylinder(traj, x, t, r)).total
    e_t = excess(traj, _cylinder(traj, x, t, theta * r)).total
    zero = e_r == 0
    ratio = 0.0 if zero else e_t / e_r
    return {"E_r": e_r, "E_thr": e_t, "ratio": ratio, "zero_flag": zero, "decayed": ratio <= 0.5}
