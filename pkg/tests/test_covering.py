from fractions import Fraction

import numpy as np
import pytest

from hypns import covering as cv
from hypns.cylinder import ParabolicCylinder


def Q(x, t, r, alpha=1.25):
    return ParabolicCylinder(tuple(x), t, r, alpha)


class TestDilate:
    def test_keeps_centroid(self):
        c = Q((0.1, 0.2, 0.3), 1.0, 0.2)
        d = cv.dilate(c, 5.0)
        assert d.r == pytest.approx(1.0)
        assert d.centroid_t == pytest.approx(c.centroid_t)
        assert d.center_x == c.center_x

    def test_unit_factor_is_identity(self):
        c = Q((0, 0, 0), 1.0, 0.2)
        assert cv.dilate(c, 1) is c

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            cv.dilate(Q((0, 0, 0), 1.0, 0.2), 0.0)


class TestDisjoint:
    def test_tangent_balls_are_disjoint(self):
        assert cv.disjoint(Q((0, 0, 0), 1.0, 0.5), Q((1.0, 0, 0), 1.0, 0.5))

    def test_overlapping_balls(self):
        assert not cv.disjoint(Q((0, 0, 0), 1.0, 0.5), Q((0.999, 0, 0), 1.0, 0.5))

    def test_touching_intervals_are_disjoint(self):
        a = Q((0, 0, 0), 1.0, 1.0)
        b = Q((0, 0, 0), 1.0 + a.duration, 1.0)
        assert cv.disjoint(a, b)


class TestFamily:
    def test_mixed_alpha_rejected(self):
        with pytest.raises(ValueError):
            cv.CylinderFamily([Q((0, 0, 0), 1, 0.1), Q((0, 0, 0), 1, 0.1, 1.2)])

    def test_type_checked(self):
        with pytest.raises(TypeError):
            cv.CylinderFamily([(0, 0, 0)])

    def test_sup_radius(self):
        fam = cv.CylinderFamily([Q((0, 0, 0), 1, 0.1), Q((1, 0, 0), 1, 0.3)])
        assert fam.sup_radius == 0.3
        assert cv.CylinderFamily([]).sup_radius == 0.0


class TestVitali:
    def test_selection_is_disjoint_and_covers_after_dilation(self, rng):
        cyls = [Q(rng.uniform(0, 2, 3), rng.uniform(0, 1), rng.uniform(0.05, 0.4)) for _ in range(60)]
        sel = cv.vitali_select(cyls).selected
        for i, a in enumerate(sel):
            for b in sel[i + 1:]:
                assert cv.disjoint(a, b)
        big = [cv.dilate(c, 5.0) for c in sel]
        pts_x = np.array([c.center_x for c in cyls])
        pts_t = np.array([c.centroid_t for c in cyls])
        assert cv.covered_by(pts_x, pts_t, big).all()

    def test_deterministic(self, rng):
        cyls = [Q(rng.uniform(0, 1, 3), 0.5, 0.2) for _ in range(20)]
        a = cv.vitali_select(cyls).selected
        b = cv.vitali_select(list(reversed(cyls))).selected
        assert a == b

    def test_empty_family(self):
        assert cv.vitali_select([]).count == 0


class TestPremeasure:
    def test_single_point(self):
        res = cv.parabolic_premeasure([[0.0, 0.0, 0.0, 0.5]], beta=1.0, delta=0.2)
        assert res.count == 1 and res.premeasure == pytest.approx(0.1)

    def test_zero_gauge_counts_cylinders(self, rng):
        pts = np.column_stack([rng.uniform(0, 1, (30, 3)), rng.uniform(0, 1, 30)])
        res = cv.parabolic_premeasure(pts, 0.0, 0.3)
        assert res.premeasure == res.count
        px, pt = pts[:, :3], pts[:, 3]
        assert cv.covered_by(px, pt, res.selected).all()

    @pytest.mark.parametrize("method", ["greedy", "grid"])
    def test_empty_set(self, method):
        assert cv.parabolic_premeasure(np.zeros((0, 4)), 1.0, 0.1, method=method).premeasure == 0

    def test_grid_cover_contains_points(self, rng):
        pts = np.column_stack([rng.uniform(0, 1, (40, 3)), rng.uniform(0.01, 1, 40)])
        res = cv.parabolic_premeasure(pts, 0.0, 0.25, method="grid")
        assert cv.covered_by(pts[:, :3], pts[:, 3], res.selected).all()

    def test_grid_count_is_monotone(self, rng):
        pts = np.column_stack([rng.uniform(0, 1, (40, 3)), rng.uniform(0.01, 1, 40)])
        small = cv.parabolic_premeasure(pts[:20], 0.0, 0.25, method="grid").count
        full = cv.parabolic_premeasure(pts, 0.0, 0.25, method="grid").count
        assert small <= full

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            cv.parabolic_premeasure([[0, 0, 0, 0]], -1.0, 0.1)
        with pytest.raises(ValueError):
            cv.parabolic_premeasure([[0, 0, 0, 0]], 1.0, 0.0)
        with pytest.raises(ValueError):
            cv.parabolic_premeasure([[0, 0, 0, 0]], 1.0, 0.1, method="random")


class TestBoxCounting:
    def test_bound_is_exact_for_fractions(self):
        assert cv.box_dimension_bound(Fraction(5, 4)) == 0
        assert cv.box_dimension_bound(Fraction(1)) == Fraction(5, 3)
        assert cv.box_dimension_bound(1.0) == pytest.approx(5 / 3)

    def test_segment_in_time(self):
        t = np.linspace(0, 1, 2001)
        pts = np.column_stack([np.zeros((len(t), 3)), t])
        est = cv.box_counting_estimate(pts, [0.4, 0.2, 0.1, 0.05], alpha=1.25)
        # a time segment has parabolic dimension 2 alpha; four coarse scales
        # give a biased but clearly super-Euclidean slope
        assert 2.2 < est["slope"] < 2.6

    def test_euclidean_gauge_segment(self):
        t = np.linspace(0, 1, 2001)
        pts = np.column_stack([np.zeros((len(t), 3)), t])
        est = cv.box_counting_estimate(pts, [0.4, 0.2, 0.1, 0.05], gauge="euclidean")
        assert est["slope"] == pytest.approx(1.0, abs=0.1)

    def test_empty_set_has_zero_slope(self):
        est = cv.box_counting_estimate(np.zeros((0, 4)), [0.4, 0.2, 0.1])
        assert est["slope"] == 0.0 and np.all(est["counts"] == 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            cv.box_counting_estimate([[0, 0, 0, 0]], [0.4, 0.2])
        with pytest.raises(ValueError):
            cv.box_counting_estimate([[0, 0, 0, 0]], [0.4, 0.2, 0.1], gauge="taxicab")


class TestSingularScan:
    def test_smooth_flow_flags_nothing(self, tg16):
        L = tg16.params.torus_len
        res = cv.singular_scan(tg16, radii=[L / 16, L / 32], threshold=1.0, times=[0.1], stride=4)
        assert res.flagged == [] and res.n_candidates == 64
        assert res.audit_ok and res.bound_sum == 0

    def test_low_threshold_flags_and_audits(self, tg16):
        L = tg16.params.torus_len
        res = cv.singular_scan(tg16, radii=[L / 16, L / 32], threshold=1e-12, times=[0.1], stride=4)
        assert len(res.flagged) > 0
        assert res.audit_ok
        sel = res.cover.selected
        assert all(cv.disjoint(a, b) for i, a in enumerate(sel) for b in sel[i + 1:])

    def test_pointwise_criterion(self, tg16):
        L = tg16.params.torus_len
        res = cv.singular_scan(tg16, criterion=lambda tr, x, t, r: 1.0, radii=[L / 16],
                               threshold=0.5, times=[0.1], stride=8)
        assert len(res.flagged) == 8

    def test_radii_must_decrease(self, tg16):
        with pytest.raises(ValueError):
            cv.singular_scan(tg16, radii=[0.1, 0.2])
