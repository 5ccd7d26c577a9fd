"""Acceptance criteria; each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""

from fractions import Fraction

import numpy as np
import pytest

from conftest import record_criterion
from hypns import covering as cv
from hypns import diagnostics as dg
from hypns import extension as ex
from hypns import solver as sv
from hypns.cylinder import ParabolicCylinder
from hypns.spectral import ModelParams, SpectralField, frac_laplacian, resample, wavenumbers

ALPHAS = (1.05, 1.15, 1.25)
MODES = ((1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 1, 0), (2, 2, 1))


def _check(number, ok, detail):
    record_criterion(number, bool(ok), detail)
    assert ok, detail


def _cos_mode(P, k):
    return SpectralField(ex._single_mode_coeffs(P, k), P)


class TestSpectralExactness:
    def test_criterion_01_frac_laplacian_eigenfunctions(self):
        modes = [(1, 0, 0), (0, 1, 0), (0, 2, 0), (2, 0, 0), (0, 0, 3), (2, 2, 1), (1, 2, 2)]
        worst = 0.0
        for a in ALPHAS:
            P = ModelParams(a, grid_n=16)
            X = P.mesh()
            for k in modes:
                km = np.sqrt(sum(v * v for v in k))
                phase = sum(kv * xv for kv, xv in zip(k, X))
                f = np.cos(phase) + 0.5 * np.sin(phase)
                out = frac_laplacian(SpectralField.from_physical(f, P), a).to_physical()
                worst = max(worst, np.max(np.abs(out - km ** (2 * a) * f)) / km ** (2 * a))
        # s = 1 on a non-eigenfunction with a known Laplacian
        P = ModelParams(1.25, grid_n=32)
        x = P.mesh()[0]
        g = np.exp(np.sin(x))
        minus_lap = -(np.cos(x) ** 2 - np.sin(x)) * g
        s1 = frac_laplacian(SpectralField.from_physical(g, P), 1.0).to_physical()
        err_s1 = np.max(np.abs(s1 - minus_lap)) / np.max(np.abs(minus_lap))
        _check(1, worst <= 1e-12 and err_s1 <= 1e-12,
               f"eigenmode rel err {worst:.1e}, s=1 vs -Laplacian {err_s1:.1e} (tol 1e-12)")


class TestKernelMoments:
    def test_criterion_02_poisson_kernel_moments(self):
        ys = (0.25, 0.5, 1.0)
        mass_spread = first = third = second = 0.0
        for a in ALPHAS:
            mom = [ex.kernel_moments(a, y) for y in ys]
            masses = np.array([m["mass"] for m in mom])
            mass_spread = max(mass_spread, np.ptp(masses) / masses.mean())
            first = max(first, max(np.max(np.abs(m["first"])) for m in mom))
            third = max(third, max(np.max(np.abs(m["third"])) for m in mom))
            s_ref = np.trace(mom[-1]["second"])
            for m, y in zip(mom, ys):
                second = max(second, abs(np.trace(m["second"]) / (s_ref * y * y) - 1.0))
        ok = mass_spread <= 1e-6 and first <= 1e-8 and third <= 1e-8 and second <= 1e-6
        _check(2, ok, f"mass spread {mass_spread:.1e}, |first| {first:.1e}, |third| {third:.1e}, "
                      f"second/y^2 dev {second:.1e}")


class TestYangIdentity:
    def test_criterion_03_yang_energy_identity(self):
        worst_prod = 0.0
        worst_ratio = 0.0
        worst_const = 0.0
        for a in ALPHAS:
            P = ModelParams(a, grid_n=16)
            yg = ex.YGrid.production(P)
            yr = yg.refine()
            fields = [_cos_mode(P, k) for k in MODES]
            for seed in range(3):
                u = sv.random_band_limited(P, kmax=3, seed=seed)
                fields.append(u)
            for f in fields:
                e0 = ex.yang_energy_check(f, yg).relative_error
                e1 = ex.yang_energy_check(f, yr).relative_error
                worst_prod = max(worst_prod, e0)
                worst_ratio = max(worst_ratio, e1 / e0)
            c_fun = ex.c_alpha_constant(a)
            c_cal = ex.yang_constant_calibrated(a)
            worst_const = max(worst_const, abs(c_fun - c_cal) / c_fun)
        ok = worst_prod <= 1e-2 and worst_ratio <= 0.5 and worst_const <= 1e-3
        _check(3, ok, f"max rel err {worst_prod:.2e} (tol 1e-2), worst refined/production "
                      f"{worst_ratio:.2f} (<= 0.5), constants differ {worst_const:.1e} (tol 1e-3)")


class TestCSExtension:
    def test_criterion_04_harmonicity_and_ratio(self):
        worst_ratio = 0.0
        worst_spread = 0.0
        for a in ALPHAS:
            P = ModelParams(a, grid_n=16)
            grids = [ex.YGrid.production(P)]
            grids += [grids[-1].refine()]
            grids += [grids[-1].refine()]
            ratios = []
            for k in MODES:
                f = _cos_mode(P, k)
                res = [ex.harmonicity_residual(ex.cs_extend(f, g)) for g in grids]
                worst_ratio = max(worst_ratio, res[1] / res[0], res[2] / res[1])
                chk = ex.cs_energy_check(f, grids[0])
                ratios.append(chk.lhs / chk.rhs)
            ratios = np.array(ratios)
            worst_spread = max(worst_spread, np.ptp(ratios) / ratios.mean())
        ok = worst_ratio <= 0.5 and worst_spread <= 1e-3
        _check(4, ok, f"worst residual ratio per refinement {worst_ratio:.2f} (<= 0.5), "
                      f"ratio spread {worst_spread:.1e} (tol 1e-3)")


class TestEnergyInequality:
    def test_criterion_05_energy_inequalities(self, tg32, tg16, random16, convergence_pair, linear16):
        runs = {"tg32": tg32, "tg16": tg16, "random16": random16,
                "conv32": convergence_pair[0], "conv64": convergence_pair[1], "linear16": linear16}
        worst = 0.0
        for tr in runs.values():
            led = tr.ledger
            worst = max(worst, led.max_violation / led.kinetic[0])
        # linear regime: exact decay of every mode
        led = linear16.ledger
        bal = np.max(np.abs(led.kinetic + led.dissipation_cum - led.kinetic[0])) / led.kinetic[0]
        P = linear16.params
        lam = wavenumbers(P).k2 ** P.alpha
        u0 = linear16.snapshots[0].u.coeffs
        exact = u0 * np.exp(-lam * linear16.times[-1])
        dec = np.max(np.abs(linear16.snapshots[-1].u.coeffs - exact)) / np.max(np.abs(u0))
        ok = worst <= 1e-6 and bal <= 1e-8 and dec <= 1e-8
        _check(5, ok, f"max violation/E0 {worst:.1e} over {len(runs)} runs (tol 1e-6), "
                      f"linear balance {bal:.1e}, linear decay {dec:.1e} (tol 1e-8)")


class TestSuitableInequality:
    def test_criterion_06_local_energy_residual(self, tg32):
        P = tg32.params
        E0 = tg32.ledger.kinetic[0]
        phis = sv.builtin_test_functions(P, t_ramp=0.1, y_support=1.0)
        coarse = ex.YGrid.geometric(1.0, P.b, 1.15)
        fine = ex.YGrid.geometric(1.0, P.b, 1.15 ** 0.5)
        r0 = [t.residual / E0 for t in sv.suitable_energy_terms(tg32, phis, coarse)]
        r1 = [t.residual / E0 for t in sv.suitable_energy_terms(tg32, phis, fine)]
        nonneg = min(r0 + r1) >= -1e-6
        halves = all(abs(b) <= 0.5 * abs(a) for a, b in zip(r0, r1))
        fmt = ", ".join(f"{p.kind} {a:.1e}->{b:.1e}" for p, a, b in zip(phis, r0, r1))
        _check(6, nonneg and halves, f"residual/E0 (coarse->refined y-grid): {fmt}")


class TestScaling:
    def test_criterion_07_scaling_invariance(self, random16):
        P = random16.params
        x = (1.0, 2.0, 3.0)
        t = 0.15
        rho = P.torus_len / 16
        cyl = ParabolicCylinder(x, t, rho, P.alpha)
        base = dg.scale_quantities(random16, cyl).as_dict()
        exc = dg.excess(random16, cyl)
        worst = 0.0
        for r in (0.5, 2.0, 0.25):
            v = dg.rescale_solution(random16, r)
            c2 = ParabolicCylinder(tuple(np.array(x) / r), t / r ** (2 * P.alpha), rho / r, P.alpha)
            rep = dg.scale_quantities(v, c2).as_dict()
            e2 = dg.excess(v, c2)
            s = r ** (2 * P.alpha - 1)
            devs = [abs(rep[k] / base[k] - 1) for k in base]
            devs += [abs(e2.e_v / (s * exc.e_v) - 1), abs(e2.e_p / (s * exc.e_p) - 1),
                     abs(e2.e_nl / (s * exc.e_nl) - 1)]
            worst = max(worst, max(devs))
        _check(7, worst <= 1e-8, f"max relative deviation {worst:.1e} over A,B,C,D,F,T,E_flat,"
                                 f"E_V,E_P,E_nl and r in {{1/2, 2, 1/4}} (tol 1e-8)")


class TestCovering:
    def test_criterion_08_counting_measure(self, rng):
        failures = 0
        for trial in range(10):
            k = int(rng.integers(1, 40))
            # jittered lattice: separation at least 0.5 in space
            cells = rng.choice(10 ** 3, size=k, replace=False)
            base = np.stack(np.unravel_index(cells, (10, 10, 10)), axis=1).astype(float)
            pts = np.column_stack([base + 0.25 * rng.random((k, 3)), rng.random(k)])
            for method in ("greedy", "grid"):
                res = cv.parabolic_premeasure(pts, 0.0, 0.2, method=method)
                failures += res.premeasure != k
        _check(8, failures == 0, f"{failures} miscounts over 10 point sets x 2 cover methods")

    def test_criterion_09_vitali(self, rng):
        failures = 0
        alpha = 1.25
        for fam_id in range(100):
            m = int(rng.integers(2, 25))
            cyls = [ParabolicCylinder(tuple(rng.uniform(0, 4, 3)), float(rng.uniform(0, 4)),
                                      float(rng.uniform(0.1, 1.0)), alpha) for _ in range(m)]
            sel = cv.vitali_select(cv.CylinderFamily(cyls)).selected
            for i in range(len(sel)):
                for j in range(i + 1, len(sel)):
                    failures += not cv.disjoint(sel[i], sel[j])
            dil = [cv.dilate(c, 5.0) for c in sel]
            for c in cyls:
                # uniform samples in the ball x interval
                d = rng.normal(size=(1000, 3))
                d /= np.linalg.norm(d, axis=1)[:, None]
                rad = c.r * rng.random(1000) ** (1 / 3)
                px = np.asarray(c.center_x) + d * rad[:, None]
                pt = c.top_t - c.duration * rng.random(1000)
                failures += int(np.sum(~cv.covered_by(px, pt, dil)))
        _check(9, failures == 0, f"{failures} failures (overlaps or uncovered samples) over 100 families")

    def test_criterion_10_box_counting(self):
        b54 = cv.box_dimension_bound(Fraction(5, 4))
        b1 = cv.box_dimension_bound(Fraction(1))
        s = np.linspace(0, 1, 4001)
        seg = np.column_stack([s, 0.3 * s, np.zeros_like(s), np.full_like(s, 0.5)])
        est = cv.box_counting_estimate(seg, [0.1, 0.05, 0.025, 0.0125], alpha=1.25)
        ok = b54 == 0 and b1 == Fraction(5, 3) and abs(est["slope"] - 1) <= 0.1
        _check(10, ok, f"bound(5/4) = {b54}, bound(1) = {b1}, segment slope {est['slope']:.3f}")


class TestRegularScan:
    def test_criterion_11_taylor_green_scan(self, tg32, rng):
        P = tg32.params
        L = P.torus_len
        radii = [L / 16, L / 32, L / 64]
        scan = cv.singular_scan(tg32, "eflat", radii, threshold=1e-3)
        decreasing = 0
        traces = []
        for _ in range(10):
            x = tuple(rng.uniform(0.1 * L, 0.9 * L, 3))
            # L/64 is below four grid spacings on 32^3; the criterion warns
            with pytest.warns(UserWarning, match="four grid spacings"):
                tr = dg.eps_ckn(tg32, x, 0.1, 1e-3, radii).trace
            traces.append(tr)
            decreasing += all(b < a for a, b in zip(tr, tr[1:]))
        ok = len(scan.flagged) == 0 and scan.n_candidates > 0 and decreasing == 10
        _check(11, ok, f"{len(scan.flagged)} of {scan.n_candidates} points flagged; "
                       f"{decreasing}/10 decreasing traces (first {traces[0][0]:.1e} > "
                       f"{traces[0][1]:.1e} > {traces[0][2]:.1e})")


class TestSelfConvergence:
    def test_criterion_12_grid_convergence(self, convergence_pair):
        t32, t64 = convergence_pair
        P64 = t64.params
        a = resample(t32.at(0.05).u, P64).coeffs
        b = t64.at(0.05).u.coeffs
        rel = float(np.linalg.norm(a - b) / np.linalg.norm(b))
        _check(12, rel <= 1e-3, f"relative L2 difference 32^3 vs 64^3 at t = 0.05: {rel:.1e} (tol 1e-3)")
