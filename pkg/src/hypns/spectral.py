"""Spectral representation of periodic fields and the exact Fourier-side operators.

Coefficients are stored in ``numpy.fft`` ordering and normalized as
``coeffs = fftn(f) / N**d``, so the mean of ``f`` is ``coeffs[0, ..., 0]`` and
Parseval reads ``integral |f|^2 = L**d * sum |coeffs|^2``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

from hypns.cylinder import ParabolicCylinder, time_weights

__all__ = [
    "ModelParams",
    "SpectralField",
    "VelocityField",
    "PressureField",
    "fft_workers",
    "to_physical",
    "to_spectral",
    "wavenumbers",
    "frac_laplacian",
    "leray_project",
    "pressure_from_velocity",
    "nonlinear_term",
    "mollify",
    "gradient",
    "divergence",
    "resample",
    "ball_mask",
    "ball_volume",
    "ball_average",
    "cylinder_average",
]


def fft_workers() -> int:
    """Thread count for FFTs, capped by the ``HYPN_THREADS`` environment variable."""
    env = os.environ.get("HYPN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


@dataclass(frozen=True)
class ModelParams:
    """Physical and discretization parameters.

    Parameters
    ----------
    alpha : float
        Dissipation exponent, ``1 < alpha <= 5/4``.
    dim : int
        Spatial dimension, 2 or 3.
    grid_n : int
        Grid points per axis (even, at least 8).
    torus_len : float
        Period ``L`` of the torus.
    mollify_eps : float
        Width of the Gaussian mollifier applied to the advecting field.
    check_range : bool
        Enforce the admissible ``alpha`` range.  Disabling it is meant for
        classical benchmarks such as ``alpha = 1``.
    """

    alpha: float
    dim: int = 3
    grid_n: int = 32
    torus_len: float = 2.0 * np.pi
    mollify_eps: float = 0.0
    check_range: bool = field(default=True, compare=False)

    def __post_init__(self):
        a = float(self.alpha)
        if self.check_range:
            if not (1.0 < a <= 1.25):
                raise ValueError(f"alpha must lie in (1, 5/4], got {a}")
        elif not a > 0:
            raise ValueError(f"alpha must be positive, got {a}")
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.grid_n) != self.grid_n or self.grid_n < 8 or self.grid_n % 2:
            raise ValueError(f"grid_n must be an even integer >= 8, got {self.grid_n}")
        if not (self.torus_len > 0 and np.isfinite(self.torus_len)):
            raise ValueError("torus_len must be positive")
        if self.mollify_eps < 0:
            raise ValueError("mollify_eps must be >= 0")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "grid_n", int(self.grid_n))
        object.__setattr__(self, "torus_len", float(self.torus_len))
        object.__setattr__(self, "mollify_eps", float(self.mollify_eps))

    @property
    def b(self) -> float:
        """Weight exponent ``3 - 2 alpha``."""
        return 3.0 - 2.0 * self.alpha

    @property
    def h(self) -> float:
        """Grid spacing."""
        return self.torus_len / self.grid_n

    @property
    def shape(self) -> tuple:
        return (self.grid_n,) * self.dim

    @property
    def volume(self) -> float:
        return self.torus_len ** self.dim

    def with_(self, **changes) -> "ModelParams":
        """Copy with some fields replaced."""
        kw = dict(alpha=self.alpha, dim=self.dim, grid_n=self.grid_n,
                  torus_len=self.torus_len, mollify_eps=self.mollify_eps,
                  check_range=self.check_range)
        kw.update(changes)
        return ModelParams(**kw)

    def coordinates(self) -> list:
        """1D coordinate arrays ``j h``, one per axis."""
        x = np.arange(self.grid_n) * self.h
        return [x] * self.dim

    def mesh(self) -> list:
        return np.meshgrid(*self.coordinates(), indexing="ij")


# ---------------------------------------------------------------------------
# wavenumbers and transforms


class _Wavenumbers:
    """Physical wavevectors and derived multipliers for one grid."""

    def __init__(self, n: int, dim: int, length: float):
        ints = np.fft.fftfreq(n, d=1.0 / n)
        self.int1d = ints
        scale = 2.0 * np.pi / length
        shape = [1] * dim
        self.k = []
        self.kd = []
        for ax in range(dim):
            s = list(shape)
            s[ax] = n
            kk = (ints * scale).reshape(s)
            self.k.append(kk)
            # derivative symbol with the Nyquist mode removed
            kd = kk.copy()
            kd.reshape(-1)[n // 2] = 0.0
            self.kd.append(kd)
        full = (n,) * dim
        self.k2 = np.zeros(full)
        for kk in self.k:
            self.k2 = self.k2 + kk ** 2
        self.kmag = np.sqrt(self.k2)
        keep = np.ones(full, dtype=bool)
        for ax in range(dim):
            s = list(shape)
            s[ax] = n
            keep = keep & (np.abs(ints).reshape(s) < n / 3.0)
        self.dealias = keep
        inv = np.zeros(full)
        inv[self.k2 > 0] = 1.0 / self.k2[self.k2 > 0]
        self.inv_k2 = inv
        kinf = np.zeros(full)
        for ax in range(dim):
            s = list(shape)
            s[ax] = n
            kinf = np.maximum(kinf, np.abs(ints).reshape(s))
        self.kinf_int = kinf


@lru_cache(maxsize=32)
def _wavenumbers_cached(n: int, dim: int, length: float) -> _Wavenumbers:
    return _Wavenumbers(n, dim, length)


def wavenumbers(params: ModelParams) -> _Wavenumbers:
    """Cached wavevector tables for ``params``."""
    return _wavenumbers_cached(params.grid_n, params.dim, params.torus_len)


def _axes(dim: int) -> tuple:
    return tuple(range(-dim, 0))


def to_physical(coeffs: np.ndarray, dim: int) -> np.ndarray:
    """Inverse transform of normalized coefficients over the last ``dim`` axes."""
    n = coeffs.shape[-1]
    out = sfft.ifftn(coeffs, axes=_axes(dim), workers=fft_workers()) * n ** dim
    return out.real


def to_spectral(values: np.ndarray, dim: int) -> np.ndarray:
    """Forward transform to normalized coefficients over the last ``dim`` axes."""
    n = values.shape[-1]
    return sfft.fftn(values, axes=_axes(dim), workers=fft_workers()) / n ** dim


# ---------------------------------------------------------------------------
# field containers


class SpectralField:
    """Scalar periodic field stored by its Fourier coefficients."""

    def __init__(self, coeffs: np.ndarray, params: ModelParams):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != params.shape:
            raise ValueError(f"coefficient shape {coeffs.shape} != grid {params.shape}")
        self.coeffs = coeffs
        self.params = params

    @classmethod
    def from_physical(cls, values, params: ModelParams) -> "SpectralField":
        return cls(to_spectral(np.asarray(values, dtype=float), params.dim), params)

    @classmethod
    def zeros(cls, params: ModelParams) -> "SpectralField":
        return cls(np.zeros(params.shape, dtype=complex), params)

    def to_physical(self) -> np.ndarray:
        return to_physical(self.coeffs, self.params.dim)

    def hermitian_defect(self) -> float:
        """Largest ``|c(-k) - conj(c(k))|`` relative to the largest coefficient."""
        return _hermitian_defect(self.coeffs, self.params.dim)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.params.volume * np.sum(np.abs(self.coeffs) ** 2)))

    def __repr__(self):
        return f"SpectralField(shape={self.coeffs.shape}, L={self.params.torus_len:g})"


def _hermitian_defect(c: np.ndarray, dim: int) -> float:
    flipped = c
    for ax in _axes(dim):
        flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
    scale = max(np.max(np.abs(c)), 1e-300)
    return float(np.max(np.abs(flipped - np.conj(c))) / scale)


class VelocityField:
    """Vector field; coefficient array of shape ``(dim, N, ..., N)``.

    Parameters
    ----------
    coeffs : ndarray
        Stacked component coefficients.
    params : ModelParams
    check : bool
        Verify the divergence-free invariant ``|k . u(k)| <= 1e-10 |u(k)|``.
    """

    def __init__(self, coeffs: np.ndarray, params: ModelParams, check: bool = True):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != (params.dim,) + params.shape:
            raise ValueError(f"velocity shape {coeffs.shape} does not match the grid")
        self.coeffs = coeffs
        self.params = params
        if check:
            d = self.divergence_defect()
            if d > 1e-10:
                raise ValueError(f"velocity field is not divergence-free (defect {d:.2e})")

    @classmethod
    def from_physical(cls, values, params: ModelParams, project: bool = False) -> "VelocityField":
        c = to_spectral(np.asarray(values, dtype=float), params.dim)
        if project:
            return leray_project(c, params)
        return cls(c, params)

    @classmethod
    def zeros(cls, params: ModelParams) -> "VelocityField":
        return cls(np.zeros((params.dim,) + params.shape, dtype=complex), params, check=False)

    @property
    def components(self) -> tuple:
        return tuple(SpectralField(c, self.params) for c in self.coeffs)

    def to_physical(self) -> np.ndarray:
        return to_physical(self.coeffs, self.params.dim)

    def divergence_defect(self) -> float:
        """Largest ``|k . u(k)| / (|k| |u(k)|)`` over nonzero modes."""
        wk = wavenumbers(self.params)
        dot = sum(self.coeffs[i] * wk.k[i] for i in range(self.params.dim))
        amp = np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0)) * wk.kmag
        mask = amp > 1e-14 * max(np.max(amp), 1e-300)
        if not np.any(mask):
            return 0.0
        return float(np.max(np.abs(dot[mask]) / amp[mask]))

    def kinetic_energy(self) -> float:
        """``1/2 integral |u|^2``."""
        return 0.5 * self.params.volume * float(np.sum(np.abs(self.coeffs) ** 2))

    def __repr__(self):
        return f"VelocityField(dim={self.params.dim}, N={self.params.grid_n})"


class PressureField:
    """Scalar pressure with zero mean."""

    def __init__(self, coeffs, params: ModelParams):
        if isinstance(coeffs, SpectralField):
            coeffs = coeffs.coeffs
        coeffs = np.array(coeffs, dtype=complex)
        if abs(coeffs.reshape(-1)[0]) > 1e-12 * max(np.max(np.abs(coeffs)), 1.0):
            raise ValueError("pressure must have zero mean")
        coeffs.reshape(-1)[0] = 0.0
        self.coeffs = coeffs
        self.params = params

    @property
    def field(self) -> SpectralField:
        return SpectralField(self.coeffs, self.params)

    def to_physical(self) -> np.ndarray:
        return to_physical(self.coeffs, self.params.dim)


def _coeffs_params(u, params=None):
    if isinstance(u, (SpectralField, VelocityField, PressureField)):
        return u.coeffs, u.params
    if params is None:
        raise TypeError("raw coefficient arrays need explicit params")
    return np.asarray(u, dtype=complex), params


# ---------------------------------------------------------------------------
# operators


def frac_laplacian(u, s: float, params: ModelParams | None = None):
    """Apply ``(-Delta)**s`` with symbol ``|2 pi k / L|**(2 s)``.

    Works componentwise on vector fields.  The mean mode is annihilated for
    ``s > 0`` and kept for ``s = 0``.

    Raises
    ------
    ValueError
        For ``s < 0``.
    """
    if s < 0:
        raise ValueError(f"exponent must be nonnegative, got {s}")
    c, params = _coeffs_params(u, params)
    wk = wavenumbers(params)
    if s == 0:
        sym = np.ones_like(wk.k2)
    else:
        sym = wk.k2 ** s
    out = c * sym
    if isinstance(u, VelocityField):
        return VelocityField(out, params, check=False)
    if isinstance(u, PressureField):
        return SpectralField(out, params)
    if isinstance(u, SpectralField):
        return SpectralField(out, params)
    return out


def gradient(c: np.ndarray, params: ModelParams) -> np.ndarray:
    """Spectral gradient of scalar coefficients (new leading axis)."""
    wk = wavenumbers(params)
    return np.stack([1j * wk.kd[i] * c for i in range(params.dim)])


def divergence(c: np.ndarray, params: ModelParams) -> np.ndarray:
    wk = wavenumbers(params)
    return sum(1j * wk.kd[i] * c[i] for i in range(params.dim))


def leray_project(v, params: ModelParams | None = None) -> VelocityField:
    """Divergence-free projection ``(I - k k^T / |k|^2) v(k)``; the mean mode passes."""
    c, params = _coeffs_params(v, params)
    wk = wavenumbers(params)
    dot = sum(wk.k[i] * c[i] for i in range(params.dim)) * wk.inv_k2
    out = np.stack([c[i] - wk.k[i] * dot for i in range(params.dim)])
    return VelocityField(out, params, check=False)


def _dealias(c: np.ndarray, params: ModelParams) -> np.ndarray:
    return c * wavenumbers(params).dealias


def pressure_from_velocity(u: VelocityField) -> PressureField:
    """Potential-theoretic pressure solving ``-Delta p = div div (u (x) u)``.

    Products are formed in physical space from 2/3-truncated velocities and
    truncated again afterwards.
    """
    params = u.params
    wk = wavenumbers(params)
    d = params.dim
    phys = to_physical(_dealias(u.coeffs, params), d)
    acc = np.zeros(params.shape, dtype=complex)
    for i in range(d):
        for j in range(i, d):
            prod = _dealias(to_spectral(phys[i] * phys[j], d), params)
            w = 1.0 if i == j else 2.0
            acc += w * wk.k[i] * wk.k[j] * prod
    p = -acc * wk.inv_k2
    p.reshape(-1)[0] = 0.0
    return PressureField(p, params)


def mollify(u, eps: float, params: ModelParams | None = None):
    """Gaussian mollification, multiplier ``exp(-(eps |2 pi k / L|)**2 / 2)``."""
    if eps < 0:
        raise ValueError("mollification width must be >= 0")
    c, params = _coeffs_params(u, params)
    if eps == 0:
        out = c.copy()
    else:
        out = c * np.exp(-0.5 * eps ** 2 * wavenumbers(params).k2)
    if isinstance(u, VelocityField):
        return VelocityField(out, params, check=False)
    if isinstance(u, SpectralField):
        return SpectralField(out, params)
    return out


def nonlinear_term(u, eps: float | None = None, params: ModelParams | None = None) -> np.ndarray:
    """Pseudo-spectral ``((u * phi_eps) . grad) u`` with 2/3-rule dealiasing.

    Parameters
    ----------
    u : VelocityField or coefficient array
    eps : float, optional
        Mollification width of the advecting field; defaults to
        ``params.mollify_eps``.

    Returns
    -------
    ndarray
        Coefficients of shape ``(dim, N, ..., N)`` (not projected).
    """
    c, params = _coeffs_params(u, params)
    if eps is None:
        eps = params.mollify_eps
    if eps < 0:
        raise ValueError("mollification width must be >= 0")
    d = params.dim
    wk = wavenumbers(params)
    c = _dealias(c, params)
    adv = to_physical(mollify(c, eps, params), d) if eps > 0 else to_physical(c, d)
    grads = np.stack([1j * wk.kd[j] * c for j in range(d)], axis=1)  # (i, j, ...)
    grads = to_physical(grads, d)
    out = np.empty((d,) + params.shape, dtype=complex)
    for i in range(d):
        prod = sum(adv[j] * grads[i, j] for j in range(d))
        out[i] = to_spectral(prod, d)
    return _dealias(out, params)


def resample(u, params: ModelParams):
    """Coefficients of ``u`` on the grid of ``params`` (same box and dimension).

    Refinement zero-pads; coarsening drops modes with ``|k|_inf >= N_new / 2``,
    so the Nyquist planes of the target grid stay empty and the result is
    Hermitian.
    """
    c, old = _coeffs_params(u)
    if old.dim != params.dim or old.torus_len != params.torus_len:
        raise ValueError("resampling needs the same box and dimension")
    d = params.dim
    lead = c.shape[: c.ndim - d]
    n0, n1 = old.grid_n, params.grid_n
    keep = min(n0, n1) // 2  # integer modes |k| < keep survive
    out = np.zeros(lead + params.shape, dtype=complex)
    idx = np.concatenate([np.arange(keep), np.arange(-keep + 1, 0)])
    src = np.ix_(*[idx % n0] * d)
    dst = np.ix_(*[idx % n1] * d)
    out[(Ellipsis,) + dst] = c[(Ellipsis,) + src]
    if isinstance(u, VelocityField):
        return VelocityField(out, params, check=False)
    if isinstance(u, SpectralField):
        return SpectralField(out, params)
    return out


# ---------------------------------------------------------------------------
# local averages


def ball_volume(r: float, dim: int) -> float:
    """Euclidean volume of a ball of radius ``r``."""
    return np.pi * r ** 2 if dim == 2 else 4.0 / 3.0 * np.pi * r ** 3


def _periodic_sq_distance(params: ModelParams, x) -> np.ndarray:
    L = params.torus_len
    x = np.asarray(x, dtype=float)
    if x.shape != (params.dim,):
        raise ValueError(f"point must have {params.dim} coordinates")
    d2 = 0.0
    shape = [1] * params.dim
    for ax, xc in enumerate(params.coordinates()):
        delta = np.abs(xc - x[ax]) % L
        delta = np.minimum(delta, L - delta)
        s = list(shape)
        s[ax] = params.grid_n
        d2 = d2 + (delta ** 2).reshape(s)
    return np.broadcast_to(d2, params.shape)


def ball_mask(params: ModelParams, x, r: float) -> np.ndarray:
    """Grid points at periodic distance ``< r`` from ``x``.

    An empty ball falls back to the nearest grid point.
    """
    if not (0 < r <= params.torus_len / 2):
        raise ValueError(f"ball radius must lie in (0, L/2], got {r}")
    d2 = _periodic_sq_distance(params, x)
    # points within roundoff of the sphere count as outside, so the mask does
    # not depend on whether x is a grid point or a translate of the origin
    mask = d2 < r * r * (1 - 1e-9)
    if not mask.any():
        mask = np.zeros(params.shape, dtype=bool)
        mask[np.unravel_index(np.argmin(d2), params.shape)] = True
    return mask


def ball_average(f, x, r: float, params: ModelParams | None = None) -> float:
    """Mean of a scalar snapshot over the periodic ball ``B_r(x)``.

    Parameters
    ----------
    f : ndarray or SpectralField
        Physical values on the grid, or a spectral field.
    x : sequence of float
    r : float
        Radius in ``(0, L/2]``.
    """
    if isinstance(f, SpectralField):
        params = f.params
        f = f.to_physical()
    if params is None:
        raise TypeError("params required for raw arrays")
    mask = ball_mask(params, x, r)
    return float(np.mean(np.asarray(f)[mask]))


def cylinder_average(traj, cyl: ParabolicCylinder, field) -> float:
    """Space-time mean over ``Q_r(x, t)`` with trapezoidal time quadrature.

    Parameters
    ----------
    traj : trajectory-like
        Anything with ``times``, ``params`` and indexable ``snapshots``.
    cyl : ParabolicCylinder
    field : callable or sequence
        ``field(snapshot) -> ndarray`` or one physical array per saved time.

    Raises
    ------
    ValueError
        If the cylinder leaves the saved time range.
    """
    times = np.asarray(traj.times)
    w = time_weights(times, cyl.bottom_t, cyl.top_t)
    mask = ball_mask(traj.params, cyl.center_x, cyl.r)
    total = 0.0
    for j in np.nonzero(w)[0]:
        vals = field(traj.snapshots[j]) if callable(field) else field[j]
        total += w[j] * float(np.mean(np.asarray(vals)[mask]))
    return total / cyl.duration
