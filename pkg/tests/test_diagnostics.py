import numpy as np
import pytest

from hypns import diagnostics as dg
from hypns import solver as sv
from hypns.cylinder import ParabolicCylinder
from hypns.extension import eflat_quantity
from hypns.spectral import ModelParams, VelocityField


@pytest.fixture(scope="module")
def zero16():
    P = ModelParams(1.25, grid_n=16)
    return sv.run(sv.SolverConfig(P, 0.01, 0.1, save_every=2), VelocityField.zeros(P))


def cyl_at(traj, x, t, r):
    return ParabolicCylinder(tuple(x), t, r, traj.params.alpha)


class TestDyadicRadii:
    def test_powers_of_two(self):
        assert np.allclose(dg.dyadic_radii(0.25, 2.0), [0.25, 0.5, 1.0, 2.0])

    def test_upper_below_start(self):
        assert dg.dyadic_radii(1.0, 0.5).size == 0


class TestMaximalFunction:
    def test_constant(self):
        P = ModelParams(1.25, grid_n=16)
        M = dg.maximal_function_field(np.full(P.shape, 2.0), params=P)
        assert np.allclose(M, 2.0 * 4.0 / 3.0 * np.pi)

    def test_dominates_single_radius(self, rng):
        P = ModelParams(1.25, grid_n=16)
        f = rng.random(P.shape)
        M = dg.maximal_function_field(f, [0.5, 1.0], P)
        M1 = dg.maximal_function_field(f, [1.0], P)
        assert np.all(M >= M1 - 1e-12)

    def test_radius_bounds(self):
        P = ModelParams(1.25, grid_n=16)
        with pytest.raises(ValueError):
            dg.maximal_function_field(np.ones(P.shape), [0.5 * P.h], P)
        with pytest.raises(TypeError):
            dg.maximal_function_field(np.ones(P.shape))


class TestExcess:
    def test_zero_solution(self, zero16):
        rep = dg.excess(zero16, cyl_at(zero16, (1.0, 1.0, 1.0), 0.1, 0.25))
        assert rep.total == 0.0

    def test_components_nonnegative(self, tg16):
        rep = dg.excess(tg16, cyl_at(tg16, (1.0, 2.0, 0.5), 0.1, 0.25))
        assert rep.e_v > 0 and rep.e_p > 0 and rep.e_nl > 0
        assert rep.total == pytest.approx(rep.e_v + rep.e_p + rep.e_nl)

    def test_radius_above_limit_rejected(self, tg16):
        with pytest.raises(ValueError):
            dg.excess(tg16, cyl_at(tg16, (0, 0, 0), 0.1, tg16.params.torus_len / 4))

    def test_report_rejects_negative(self):
        with pytest.raises(ValueError):
            dg.ExcessReport(-1.0, 0.0, 0.0)

    def test_decay_probe_zero_flag(self, zero16):
        out = dg.excess_decay_probe(zero16, (1.0, 1.0, 1.0), 0.1, 0.25, 0.25)
        assert out["zero_flag"] and out["ratio"] == 0.0 and out["decayed"]

    def test_decay_probe_theta_range(self, tg16):
        with pytest.raises(ValueError):
            dg.excess_decay_probe(tg16, (1.0, 1.0, 1.0), 0.1, 0.25, 0.5)


class TestScaleQuantities:
    def test_all_finite_and_nonnegative(self, tg16):
        rep = dg.scale_quantities(tg16, cyl_at(tg16, (1.0, 1.0, 1.0), 0.1, 0.25))
        vals = rep.as_dict()
        assert set(vals) == {"A", "B", "C", "D", "F", "T", "E_flat"}
        assert all(np.isfinite(v) and v >= 0 for v in vals.values())

    def test_prefactors(self, tg16):
        rep = dg.scale_quantities(tg16, cyl_at(tg16, (1.0, 1.0, 1.0), 0.1, 0.25), with_eflat=False)
        assert rep.prefactors["A"] == pytest.approx(0.0)
        assert rep.prefactors["C"] == pytest.approx(1.0)
        assert np.isnan(rep.e_flat)

    def test_tail_of_zero(self, zero16):
        assert dg.tail_functional(zero16, (0.0, 0.0, 0.0), 0.1, 0.25) == 0.0


class TestCriteria:
    def test_maximal_criterion_on_zero(self, zero16):
        res = dg.eps_maximal(zero16, cyl_at(zero16, (1, 1, 1), 0.1, 0.15), 1.0)
        assert res.holds and res.lhs == 0.0

    def test_variant_margin(self, tg16):
        holds, margin = dg.eps_variant(tg16, (1.0, 1.0, 1.0), 0.1, 1e3, r=0.15)
        assert holds and margin > 0

    def test_ckn_decreasing_radii_required(self, tg16):
        with pytest.raises(ValueError):
            dg.eps_ckn(tg16, (1.0, 1.0, 1.0), 0.1, 1.0, [0.2, 0.3])

    def test_ckn_warns_below_four_spacings(self):
        P = ModelParams(1.25, grid_n=32)
        zero = sv.run(sv.SolverConfig(P, 0.05, 1.0, save_every=4), VelocityField.zeros(P))
        h = P.h
        with pytest.warns(UserWarning, match="four grid spacings"):
            res = dg.eps_ckn(zero, (1.0, 1.0, 1.0), 1.0, 1.0, [4 * h, 3.5 * h])
        assert len(res.trace) == 2
        assert res.lhs == min(res.trace)

    def test_eflat_field_matches_pointwise(self, tg16):
        P = tg16.params
        r = P.torus_len / 16
        field = dg.eflat_field(tg16, 0.1, r)
        coords = P.coordinates()
        for ix in [(0, 0, 0), (3, 7, 11), (15, 2, 9)]:
            x = tuple(coords[a][i] for a, i in enumerate(ix))
            val = eflat_quantity(tg16, cyl_at(tg16, x, 0.1, r))
            assert field[ix] == pytest.approx(val, rel=1e-10, abs=1e-14)


class TestRescale:
    def test_non_dyadic_rejected(self, tg16):
        with pytest.raises(ValueError):
            dg.rescale_solution(tg16, 0.3)

    def test_identity(self, tg16):
        assert dg.rescale_solution(tg16, 1.0) is tg16

    def test_geometry(self, tg16):
        rs = dg.rescale_solution(tg16, 0.5)
        assert rs.params.torus_len == pytest.approx(2 * tg16.params.torus_len)
        assert rs.times[-1] == pytest.approx(0.1 * 2 ** 2.5)

    def test_composition(self, tg16):
        rs = dg.rescale_solution(dg.rescale_solution(tg16, 0.5), 0.5)
        assert rs.base is tg16 and rs.r == 0.25

    def test_velocity_excess_scales(self, tg16):
        alpha = tg16.params.alpha
        r = 0.5
        rs = dg.rescale_solution(tg16, r)
        x = np.array([1.0, 2.0, 0.5])
        a = dg.excess(rs, cyl_at(rs, x / r, 0.1 / r ** (2 * alpha), 0.5)).e_v
        b = dg.excess(tg16, cyl_at(tg16, x, 0.1, 0.25)).e_v
        assert a == pytest.approx(r ** (2 * alpha - 1) * b, rel=1e-10)
