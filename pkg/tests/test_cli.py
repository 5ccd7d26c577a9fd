import numpy as np
import pytest

from hypns import cli
from hypns import io as hio
from hypns import solver as sv

CONFIG = """model.alpha = 1.25
model.grid_n = 8
solver.dt_init = 0.01
solver.t_end = 0.04
solver.save_every = 2
initial.kind = {kind}
initial.seed = 2
"""


def write_config(tmp_path, kind="random", extra=""):
    p = tmp_path / f"{kind}.txt"
    p.write_text(CONFIG.format(kind=kind) + extra)
    return p


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_config(tmp, "taylor_green")
    out = tmp / "tg"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_writes_snapshots_and_ledger(self, run_dir):
        assert len(list(run_dir.glob("snap_*.hypn"))) == 3
        cols, rows = hio.read_csv(run_dir / "energy.csv")
        assert cols[:2] == ["t", "kinetic"] and len(rows) == 3

    def test_zero_data(self, tmp_path):
        out = tmp_path / "z"
        assert cli.main(["simulate", "--config", str(write_config(tmp_path, "zero")), "--out", str(out)]) == 0
        traj, _ = hio.load_trajectory(out)
        assert all(np.max(np.abs(s.u.coeffs)) == 0 for s in traj.snapshots)

    def test_deterministic_bytes(self, tmp_path):
        cfg = write_config(tmp_path)
        for name in ("a", "b"):
            assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        for f in sorted((tmp_path / "a").glob("snap_*.hypn")):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_missing_config(self, tmp_path):
        assert cli.main(["simulate", "--config", str(tmp_path / "nope.txt")]) == 1

    def test_bad_config(self, tmp_path):
        assert cli.main(["simulate", "--config", str(write_config(tmp_path, extra="bogus = 1\n"))]) == 1

    def test_numerical_abort_exit_code(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise sv.NumericalAbort("non-finite state at t=0.01")

        monkeypatch.setattr(sv, "run", boom)
        code = cli.main(["simulate", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "x")])
        assert code == 2
        assert not (tmp_path / "x").exists()


class TestUsage:
    def test_unknown_command(self, capsys):
        assert cli.main(["frobnicate"]) == 1

    def test_no_command(self, capsys):
        assert cli.main([]) == 1

    def test_help(self, capsys):
        assert cli.main(["--help"]) == 0
        assert "simulate" in capsys.readouterr().out


class TestVerify:
    def test_empty_alpha_list(self, tmp_path):
        out = tmp_path / "v.csv"
        assert cli.main(["verify-extension", "--alpha", "", "--out", str(out)]) == 0
        cols, rows = hio.read_csv(out)
        assert tuple(cols) == cli.VERIFY_COLUMNS and rows == []

    def test_out_of_range(self):
        assert cli.main(["verify-extension", "--alpha", "1.3"]) == 1
        assert cli.main(["verify-extension", "--alpha", "1.0"]) == 1

    def test_rows_pass_and_are_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(["verify-extension", "--alpha", "1.2", "--out", str(a)]) == 0
        assert cli.main(["verify-extension", "--alpha", "1.2", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        cols, rows = hio.read_csv(a)
        checks = {r[1] for r in rows}
        assert {"kernel_mass", "yang_energy", "cs_harmonicity", "cs_ratio_spread"} <= checks
        assert all(r[-1] == "true" for r in rows)


class TestDiagnose:
    def test_rows_per_point_and_radius(self, run_dir, tmp_path):
        out = tmp_path / "d.csv"
        code = cli.main(["diagnose", str(run_dir), "--radii", "0.2,0.1", "--out", str(out)])
        assert code == 0
        cols, rows = hio.read_csv(out)
        assert cols[:5] == ["x1", "x2", "x3", "t", "r"]
        assert {"A", "E_flat", "E"} <= set(cols) and len(rows) > 0
        assert {float(r[4]) for r in rows} == {0.2, 0.1}

    def test_missing_directory(self, tmp_path):
        assert cli.main(["diagnose", str(tmp_path / "missing")]) == 1

    def test_radius_too_large(self, run_dir):
        assert cli.main(["diagnose", str(run_dir), "--radii", "2.0"]) == 1


class TestCover:
    def test_counts_from_points(self, tmp_path):
        pts = tmp_path / "pts.csv"
        hio.write_csv(pts, ["x1", "x2", "x3", "t"], [[0, 0, 0, 0.5], [3, 0, 0, 0.5]])
        out = tmp_path / "c.csv"
        assert cli.main(["cover", "--input", str(pts), "--betas", "0,1", "--out", str(out)]) == 0
        cols, rows = hio.read_csv(out)
        assert tuple(cols) == cli.COVER_COLUMNS and len(rows) == 6
        assert all(int(r[3]) == 2 for r in rows)
        assert float(rows[3][4]) == pytest.approx(2 * 0.2)

    def test_empty_input(self, tmp_path):
        pts = tmp_path / "pts.csv"
        hio.write_csv(pts, ["x1", "x2", "x3", "t"], [])
        out = tmp_path / "c.csv"
        assert cli.main(["cover", "--input", str(pts), "--out", str(out)]) == 0
        assert all(r[3] == "0" for r in hio.read_csv(out)[1])

    def test_needs_a_source(self):
        assert cli.main(["cover"]) == 1

    def test_unreadable_points(self, tmp_path):
        assert cli.main(["cover", "--input", str(tmp_path / "none.csv")]) == 1
