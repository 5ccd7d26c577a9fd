"""Run configuration, snapshot files and CSV output.

Configuration files are flat UTF-8 ``key = value`` lines with section
prefixes (``model.alpha``, ``solver.dt_init``, ...).  Snapshots use a small
little-endian binary container; see :func:`encode_snapshot`.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import math
import os
import struct
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hypns.solver import (
    EnergyLedger,
    Integrator,
    Snapshot,
    SolverConfig,
    Trajectory,
    random_band_limited,
    shear_mode,
    taylor_green,
)
from hypns.spectral import ModelParams, VelocityField

__all__ = [
    "ConfigError",
    "SnapshotFormatError",
    "InitialData",
    "DiagnosticsSpec",
    "RunConfig",
    "parse_config",
    "load_config",
    "config_text",
    "config_hash",
    "version_string",
    "encode_snapshot",
    "decode_snapshot",
    "write_snapshot",
    "read_snapshot",
    "write_csv",
    "read_csv",
    "read_points",
    "save_trajectory",
    "load_trajectory",
    "FORMAT_VERSION",
]

MAGIC = b"HYPN"
FORMAT_VERSION = 1
# magic, version (u32), dim (i64), grid_n (i64), torus_len, alpha, t (f64)
_HEADER = struct.Struct("<4sIqqddd")


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class SnapshotFormatError(ValueError):
    """Unreadable snapshot file or unsupported format version."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InitialData:
    """Initial velocity recipe.

    ``kind`` is one of ``taylor_green``, ``shear``, ``random`` or ``zero``;
    ``kmax``, ``seed`` and ``energy`` only matter for ``random``.
    """

    kind: str = "taylor_green"
    amplitude: float = 1.0
    kmax: int = 3
    seed: int = 0
    energy: float | None = None

    def build(self, params: ModelParams) -> VelocityField:
        if self.kind == "taylor_green":
            return taylor_green(params, self.amplitude)
        if self.kind == "shear":
            return shear_mode(params, self.amplitude)
        if self.kind == "random":
            return random_band_limited(params, self.kmax, self.seed, self.energy)
        if self.kind == "zero":
            return VelocityField.zeros(params)
        raise ConfigError(f"unknown initial.kind {self.kind!r}")


@dataclass(frozen=True)
class DiagnosticsSpec:
    """Cylinder seeds and thresholds for ``diagnose`` and ``cover``.

    Attributes
    ----------
    radii : tuple of float
        Strictly decreasing; empty means ``L/16, L/32, L/64``.
    threshold : float
        Scan threshold on ``E^flat``.
    eps : float
        Threshold of the epsilon-regularity criteria.
    points : tuple of tuple
        Cylinder centres; empty means the centre of the box.
    times : tuple of float
        Cylinder top times; empty means the last saved time.
    """

    radii: tuple = ()
    threshold: float = 1e-3
    eps: float = 1.0
    points: tuple = ()
    times: tuple = ()

    def resolved_radii(self, params: ModelParams) -> tuple:
        if self.radii:
            return tuple(self.radii)
        L = params.torus_len
        return (L / 16, L / 32, L / 64)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one run."""

    model: ModelParams
    solver: SolverConfig
    initial: InitialData = InitialData()
    diagnostics: DiagnosticsSpec = DiagnosticsSpec()
    output_dir: str = "run"

    def __post_init__(self):
        L = self.model.torus_len
        radii = self.diagnostics.resolved_radii(self.model)
        for r in radii:
            if not 0 < r <= L / 8 * (1 + 1e-12):
                raise ConfigError(f"diagnostics radius {r:g} outside (0, L/8]")
        if any(b >= a for a, b in zip(radii, radii[1:])):
            raise ConfigError("diagnostics.radii must be strictly decreasing")
        if not (self.diagnostics.threshold > 0 and self.diagnostics.eps > 0):
            raise ConfigError("thresholds must be positive")
        for p in self.diagnostics.points:
            if len(p) != self.model.dim:
                raise ConfigError("diagnostics.points must have dim coordinates each")


def _parse_float(text: str) -> float:
    """Float literal, optionally ``pi``, ``2*pi``, ``pi/2``."""
    t = text.strip().replace(" ", "")
    if "pi" in t:
        num, _, den = t.partition("/")
        head = num.replace("pi", "").rstrip("*")
        val = (float(head) if head else 1.0) * math.pi
        return val / float(den) if den else val
    return float(t)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple:
    return tuple(_parse_float(v) for v in text.split(",") if v.strip())


def _parse_points(text: str) -> tuple:
    return tuple(_parse_floats(p) for p in text.split(";") if p.strip())


_KEYS = {
    "model.alpha": _parse_float,
    "model.dim": int,
    "model.grid_n": int,
    "model.torus_len": _parse_float,
    "model.mollify_eps": _parse_float,
    "solver.dt_init": _parse_float,
    "solver.t_end": _parse_float,
    "solver.cfl": _parse_float,
    "solver.save_every": int,
    "solver.integrator": str,
    "solver.nonlinear": _parse_bool,
    "initial.kind": str,
    "initial.amplitude": _parse_float,
    "initial.kmax": int,
    "initial.seed": int,
    "initial.energy": _parse_float,
    "diagnostics.radii": _parse_floats,
    "diagnostics.threshold": _parse_float,
    "diagnostics.eps": _parse_float,
    "diagnostics.points": _parse_points,
    "diagnostics.times": _parse_floats,
    "output.dir": str,
}


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into typed values.

    Blank lines and ``#`` comments are skipped.  Unknown or repeated keys and
    unparsable values raise :class:`ConfigError` naming the line.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = _KEYS[key](value.strip())
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return out


def _build(values: dict) -> RunConfig:
    for req in ("model.alpha", "solver.dt_init", "solver.t_end"):
        if req not in values:
            raise ConfigError(f"missing required key {req}")
    g = values.get
    try:
        model = ModelParams(
            values["model.alpha"],
            dim=g("model.dim", 3),
            grid_n=g("model.grid_n", 32),
            torus_len=g("model.torus_len", 2 * math.pi),
            mollify_eps=g("model.mollify_eps", 0.0),
        )
        solver = SolverConfig(
            model,
            values["solver.dt_init"],
            values["solver.t_end"],
            cfl=g("solver.cfl", 0.5),
            save_every=g("solver.save_every", 1),
            integrator=Integrator(g("solver.integrator", Integrator.IF_RK2.value)),
            nonlinear=g("solver.nonlinear", True),
        )
        initial = InitialData(
            kind=g("initial.kind", "taylor_green"),
            amplitude=g("initial.amplitude", 1.0),
            kmax=g("initial.kmax", 3),
            seed=g("initial.seed", 0),
            energy=g("initial.energy"),
        )
        if initial.kind not in ("taylor_green", "shear", "random", "zero"):
            raise ConfigError(f"unknown initial.kind {initial.kind!r}")
        diag = DiagnosticsSpec(
            radii=g("diagnostics.radii", ()),
            threshold=g("diagnostics.threshold", 1e-3),
            eps=g("diagnostics.eps", 1.0),
            points=g("diagnostics.points", ()),
            times=g("diagnostics.times", ()),
        )
        return RunConfig(model, solver, initial, diag, g("output.dir", "run"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(source) -> RunConfig:
    """Read a :class:`RunConfig` from a path.

    Raises
    ------
    ConfigError
        If the file is unreadable or any value is invalid.
    """
    try:
        text = Path(source).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from None
    return _build(parse_config(text))


def config_from_text(text: str) -> RunConfig:
    return _build(parse_config(text))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_text(cfg: RunConfig) -> str:
    """Canonical text form; ``config_from_text(config_text(c))`` equals ``c``."""
    m, s, i, d = cfg.model, cfg.solver, cfg.initial, cfg.diagnostics
    items = [
        ("model.alpha", float(m.alpha)),
        ("model.dim", m.dim),
        ("model.grid_n", m.grid_n),
        ("model.torus_len", float(m.torus_len)),
        ("model.mollify_eps", float(m.mollify_eps)),
        ("solver.dt_init", float(s.dt_init)),
        ("solver.t_end", float(s.t_end)),
        ("solver.cfl", float(s.cfl)),
        ("solver.save_every", int(s.save_every)),
        ("solver.integrator", s.integrator.value),
        ("solver.nonlinear", bool(s.nonlinear)),
        ("initial.kind", i.kind),
        ("initial.amplitude", float(i.amplitude)),
        ("initial.kmax", int(i.kmax)),
        ("initial.seed", int(i.seed)),
    ]
    if i.energy is not None:
        items.append(("initial.energy", float(i.energy)))
    if d.radii:
        items.append(("diagnostics.radii", ",".join(repr(float(r)) for r in d.radii)))
    items += [("diagnostics.threshold", float(d.threshold)), ("diagnostics.eps", float(d.eps))]
    if d.points:
        items.append(("diagnostics.points",
                      ";".join(",".join(repr(float(c)) for c in p) for p in d.points)))
    if d.times:
        items.append(("diagnostics.times", ",".join(repr(float(t)) for t in d.times)))
    items.append(("output.dir", cfg.output_dir))
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in items)


def config_hash(cfg: RunConfig | None) -> str:
    """First 12 hex digits of the SHA-256 of :func:`config_text`."""
    if cfg is None:
        return "none"
    return hashlib.sha256(config_text(cfg).encode("utf-8")).hexdigest()[:12]


def version_string() -> str:
    """``v<package version>`` plus ``-g<commit>`` when run from a git checkout."""
    from hypns import __version__

    base = f"v{__version__}"
    try:
        out = subprocess.run(["git", "rev-parse", "--short=10", "HEAD"],
                             cwd=os.path.dirname(os.path.abspath(__file__)),
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return base
    rev = out.stdout.strip()
    return f"{base}-g{rev}" if out.returncode == 0 and rev else base


# ---------------------------------------------------------------------------
# snapshots


def encode_snapshot(snap: Snapshot) -> bytes:
    """Serialize the velocity coefficients of ``snap``.

    Layout: 48-byte header ``<4sIqqddd`` (magic ``HYPN``, format version,
    dim, grid_n, torus_len, alpha, t) followed by the full coefficient array
    as interleaved little-endian float64 ``(re, im)`` pairs, component-major
    and k-lexicographic (C order).  The pressure is slaved and not stored.
    """
    p = snap.params
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, p.dim, p.grid_n, float(p.torus_len),
                        float(p.alpha), float(snap.t))
    payload = np.ascontiguousarray(snap.u.coeffs, dtype="<c16").tobytes()
    return head + payload


def decode_snapshot(data: bytes, mollify_eps: float = 0.0) -> Snapshot:
    """Inverse of :func:`encode_snapshot`.

    Raises
    ------
    SnapshotFormatError
        On a bad magic, a different format version or a truncated payload.
    """
    if len(data) < _HEADER.size:
        raise SnapshotFormatError("snapshot shorter than its header")
    magic, version, dim, n, L, alpha, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}; not a HYPN snapshot")
    if version != FORMAT_VERSION:
        raise SnapshotFormatError(
            f"snapshot format version {version} is not supported (expected {FORMAT_VERSION})")
    count = dim * n ** dim
    if len(data) != _HEADER.size + 16 * count:
        raise SnapshotFormatError(
            f"payload has {len(data) - _HEADER.size} bytes, expected {16 * count}")
    params = ModelParams(alpha, dim=int(dim), grid_n=int(n), torus_len=L, mollify_eps=mollify_eps)
    c = np.frombuffer(data, dtype="<c16", offset=_HEADER.size).astype(complex)
    u = VelocityField(c.reshape((dim,) + params.shape), params)
    return Snapshot.from_velocity(t, u)


def write_snapshot(path, snap: Snapshot) -> None:
    Path(path).write_bytes(encode_snapshot(snap))


def read_snapshot(path, mollify_eps: float = 0.0) -> Snapshot:
    return decode_snapshot(Path(path).read_bytes(), mollify_eps)


# ---------------------------------------------------------------------------
# CSV


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def csv_text(columns, rows, cfg: RunConfig | None = None, alpha=None, grid=None) -> str:
    """CSV text: one ``#`` comment line with provenance, a header, the rows."""
    if cfg is not None:
        alpha = cfg.model.alpha if alpha is None else alpha
        grid = f"{cfg.model.grid_n}^{cfg.model.dim}" if grid is None else grid
    buf = _io.StringIO()
    buf.write(f"# config_hash={config_hash(cfg)} alpha={_cell(alpha) if alpha is not None else 'na'} "
              f"grid={grid or 'na'} version={version_string()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError("row length does not match the header")
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows, cfg: RunConfig | None = None, alpha=None, grid=None) -> None:
    Path(path).write_text(csv_text(columns, rows, cfg, alpha, grid), encoding="utf-8")


def read_csv(path) -> tuple:
    """Return ``(columns, rows)`` with rows as lists of strings; skips comments."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.startswith("#")]
    if not lines:
        return [], []
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def read_points(path) -> np.ndarray:
    """Point set ``(x1, ..., xd, t)`` from a CSV with a header row."""
    cols, rows = read_csv(path)
    if not cols:
        return np.zeros((0, 4))
    if cols[-1].strip() != "t":
        raise ValueError("point CSV must end with a 't' column")
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValueError(f"bad point CSV: {exc}") from None
    return arr.reshape(-1, len(cols))


# ---------------------------------------------------------------------------
# trajectory directories


def _snap_name(j: int) -> str:
    return f"snap_{j:05d}.hypn"


def save_trajectory(traj: Trajectory, out_dir, cfg: RunConfig | None = None) -> list:
    """Write ``config.txt``, one snapshot file per save point and ``energy.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg is not None:
        (out / "config.txt").write_text(config_text(cfg), encoding="utf-8")
    paths = []
    for j, s in enumerate(traj.snapshots):
        p = out / _snap_name(j)
        write_snapshot(p, s)
        paths.append(p)
    led = traj.ledger
    if led is not None:
        write_csv(out / "energy.csv", EnergyLedger.columns, led.rows(), cfg)
    return paths


def load_trajectory(path) -> tuple:
    """Read a directory written by :func:`save_trajectory`.

    Returns
    -------
    (Trajectory, RunConfig)

    Raises
    ------
    FileNotFoundError
        If the directory, its ``config.txt`` or its snapshots are missing.
    """
    d = Path(path)
    if not (d / "config.txt").is_file():
        raise FileNotFoundError(f"{d}: no config.txt")
    cfg = load_config(d / "config.txt")
    files = sorted(d.glob("snap_*.hypn"))
    if not files:
        raise FileNotFoundError(f"{d}: no snapshot files")
    snaps = [read_snapshot(f, cfg.model.mollify_eps) for f in files]
    for s in snaps:
        if s.params != cfg.model:
            raise SnapshotFormatError(f"snapshot parameters differ from {d / 'config.txt'}")
    ledger = None
    if (d / "energy.csv").is_file():
        cols, rows = read_csv(d / "energy.csv")
        if rows:
            arr = np.array([[float(v) for v in r] for r in rows])
            ledger = EnergyLedger(arr[:, 0], arr[:, 1], arr[:, 2])
    return Trajectory(snaps, cfg.solver, ledger), cfg
