import numpy as np
import pytest

from hypns import solver as sv
from hypns.spectral import ModelParams, VelocityField, wavenumbers


@pytest.fixture
def P():
    return ModelParams(1.25, grid_n=16)


class TestSolverConfig:
    def test_validation(self, P):
        with pytest.raises(ValueError):
            sv.SolverConfig(P, 0.0, 1.0)
        with pytest.raises(ValueError):
            sv.SolverConfig(P, 0.1, 0.05)
        with pytest.raises(ValueError):
            sv.SolverConfig(P, 0.01, 1.0, cfl=1.5)
        with pytest.raises(ValueError):
            sv.SolverConfig(P, 0.01, 1.0, save_every=0)

    def test_integrator_from_string(self, P):
        cfg = sv.SolverConfig(P, 0.01, 0.1, integrator="IF_EULER")
        assert cfg.integrator is sv.Integrator.IF_EULER


class TestRun:
    def test_zero_data_stays_zero(self, P):
        tr = sv.run(sv.SolverConfig(P, 0.01, 0.05), VelocityField.zeros(P))
        assert all(np.max(np.abs(s.u.coeffs)) == 0 for s in tr.snapshots)
        assert np.all(tr.ledger.kinetic == 0) and np.all(tr.ledger.dissipation_cum == 0)

    def test_save_times_and_end(self, P):
        tr = sv.run(sv.SolverConfig(P, 0.003, 0.03, save_every=3), sv.taylor_green(P))
        assert tr.times[0] == 0 and tr.times[-1] == 0.03
        assert np.all(np.diff(tr.times) > 0)

    def test_linear_modes_decay_exactly(self, P):
        u0 = sv.random_band_limited(P, kmax=5, seed=4)
        cfg = sv.SolverConfig(P, 0.01, 0.1, nonlinear=False)
        tr = sv.run(cfg, u0)
        lam = wavenumbers(P).k2 ** P.alpha
        err = np.max(np.abs(tr.snapshots[-1].u.coeffs - u0.coeffs * np.exp(-0.1 * lam)))
        assert err < 1e-14

    def test_shear_flow_is_an_exact_decay(self, P):
        tr = sv.run(sv.SolverConfig(P, 0.01, 0.1), sv.shear_mode(P))
        ratio = tr.ledger.kinetic[-1] / tr.ledger.kinetic[0]
        assert ratio == pytest.approx(np.exp(-0.2), rel=1e-12)

    def test_energy_inequality_holds(self, tg16):
        led = tg16.ledger
        assert led.max_violation <= 1e-6 * led.kinetic[0]
        assert np.all(np.diff(led.kinetic) < 0)

    def test_euler_integrator_is_first_order(self, P):
        u0 = sv.taylor_green(P)
        ref = sv.run(sv.SolverConfig(P, 1e-4, 0.02, save_every=1000), u0).snapshots[-1].u.coeffs
        errs = []
        for dt in (4e-3, 2e-3):
            cfg = sv.SolverConfig(P, dt, 0.02, save_every=1000, integrator="IF_EULER")
            errs.append(np.max(np.abs(sv.run(cfg, u0).snapshots[-1].u.coeffs - ref)))
        assert 1.6 < errs[0] / errs[1] < 2.4

    def test_heun_is_second_order(self, P):
        u0 = sv.taylor_green(P)
        ref = sv.run(sv.SolverConfig(P, 2.5e-4, 0.04, save_every=1000), u0).snapshots[-1].u.coeffs
        errs = []
        for dt in (8e-3, 4e-3):
            errs.append(np.max(np.abs(
                sv.run(sv.SolverConfig(P, dt, 0.04, save_every=1000), u0).snapshots[-1].u.coeffs - ref)))
        assert errs[0] / errs[1] > 3.2

    def test_cfl_retry_shrinks_step(self, P):
        u0 = sv.taylor_green(P, amplitude=20.0)
        tr = sv.run(sv.SolverConfig(P, 0.02, 0.02, cfl=0.5), u0)
        assert max(tr.dt_history) < 0.02
        assert sum(tr.dt_history) == pytest.approx(0.02)

    def test_cfl_collapse_aborts(self, P):
        u0 = sv.taylor_green(P, amplitude=20.0)
        with pytest.raises(sv.NumericalAbort):
            sv.run(sv.SolverConfig(P, 0.02, 0.02, cfl=0.5), u0, max_retries=0)

    def test_rejects_mismatched_params(self, P):
        with pytest.raises(ValueError):
            sv.run(sv.SolverConfig(P, 0.01, 0.1), sv.taylor_green(P.with_(grid_n=8)))

    def test_deterministic(self, P):
        u0 = sv.random_band_limited(P, seed=9)
        a = sv.run(sv.SolverConfig(P, 0.01, 0.05), u0)
        b = sv.run(sv.SolverConfig(P, 0.01, 0.05), u0)
        assert all(np.array_equal(x.u.coeffs, y.u.coeffs) for x, y in zip(a.snapshots, b.snapshots))

    def test_at_lookup(self, tg16):
        assert tg16.at(0.1).t == 0.1
        with pytest.raises(KeyError):
            tg16.at(0.0123)


class TestInitialData:
    def test_random_band_limited_energy(self, P):
        u = sv.random_band_limited(P, kmax=3, seed=0)
        assert sv.kinetic_energy(u) == pytest.approx(P.volume / 8)
        assert u.divergence_defect() < 1e-12

    def test_taylor_green_energy(self, P):
        assert sv.kinetic_energy(sv.taylor_green(P)) == pytest.approx(P.volume / 8)


class TestEnergyLedger:
    def test_violation_definitions(self):
        led = sv.EnergyLedger([0, 1, 2], [1.0, 0.8, 0.7], [0.0, 0.1, 0.35])
        assert np.allclose(led.violation_1, [0, 0, 0.05])
        assert np.allclose(led.violation_2, [0, 0, 0.15])
        assert list(led.columns) == ["t", "kinetic", "dissipation_cum", "violation_1", "violation_2"]


class TestTestFunction:
    def test_neumann_condition(self):
        for m in (2, 4):
            assert sv.TestFunction("bump", 1.0, eta_power=m).neumann_defect() == 0.0

    def test_ramp_vanishes_at_start(self):
        phi = sv.TestFunction("constant", 1.0, t_ramp=0.1)
        assert phi.chi(0.0) == 0 and phi.dchi(0.0) == 0 and phi.chi(0.1) == pytest.approx(1)

    def test_bump_derivatives(self):
        P = ModelParams(1.25, grid_n=64)
        phi = sv.TestFunction("bump", center=np.full(3, np.pi), radius=2.0)
        X, g, lap = phi.spatial(P)
        d1 = lambda f: (np.roll(f, -1, 0) - np.roll(f, 1, 0)) / (2 * P.h)
        d2 = lambda f, a: (np.roll(f, -1, a) - 2 * f + np.roll(f, 1, a)) / P.h ** 2
        assert np.max(np.abs(d1(X) - g[0])) < 0.02 * np.max(np.abs(g[0]))
        fd_lap = sum(d2(X, a) for a in range(3))
        assert np.max(np.abs(fd_lap - lap)) < 0.02 * np.max(np.abs(lap))

    def test_lap_b_matches_definition(self):
        phi = sv.TestFunction("constant", 1.0)
        y = np.linspace(0.05, 0.95, 7)
        assert np.allclose(phi.lap_b_eta(y, 0.5), phi.d2eta(y) + 0.5 / y * phi.deta(y))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            sv.TestFunction("square")


class TestSuitable:
    def test_flat_test_function_reproduces_energy_balance(self, tg16):
        E0 = tg16.ledger.kinetic[0]
        flat = sv.TestFunction("constant", np.inf, 0.1)
        res = sv.suitable_energy_terms(tg16, flat)
        assert res.resolved
        assert abs(res.residual) < 1e-4 * E0

    def test_localised_residuals_are_nonnegative(self, tg16):
        from hypns.extension import YGrid

        P = tg16.params
        E0 = tg16.ledger.kinetic[0]
        phis = sv.builtin_test_functions(P, 0.1, 1.0)
        terms = sv.suitable_energy_terms(tg16, phis, YGrid.geometric(1.0, P.b, 1.15))
        assert len(terms) == 3
        assert all(t.residual >= -1e-6 * E0 for t in terms)
