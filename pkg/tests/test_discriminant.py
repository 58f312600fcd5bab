import math
import warnings

import numpy as np
import pytest
from core.discriminant import (
    Ellipse, FocalQuery, MetricPD, RankStratum, collision_teacher, discriminant_2x2_frobenius,
    discriminant_2x2_iid, discriminant_2x2_iid_scale, ellipse_critical_points, ellipse_evolute_cusp,
    focal_points_on_segment, rank1_critical_angles_2x2, run_focal_query, stability_probe,
)
from core.discriminant_terms import TERMS, TERMS_SHA256, table_digest
from core.errors import BaselineDegenerateError, NonGenericSegmentError, PolylandWarning, PreconditionError
from core.quadlandscape import QuadMetric, ey_frobenius_critical, ey_gaussian_critical, index_by_focal_count

IDENTITY = MetricPD.identity(2)


def _random_symmetric(rng, n):
    A = rng.normal(size=(n, n))
    return (A + A.T) / 2


# ── Ellipse ──

def test_ellipse_centre_has_four_points():
    points = ellipse_critical_points([0.0, 0.0], IDENTITY, 2.0, 1.0)
    assert len(points) == 4
    by_position = {(round(p.point[0], 9), round(p.point[1], 9)): p for p in points}
    for key in [(2.0, 0.0), (-2.0, 0.0)]:
        assert by_position[key].index == 1
        assert by_position[key].value == pytest.approx(4.0)
    for key in [(0.0, 1.0), (0.0, -1.0)]:
        assert by_position[key].index == 0
        assert by_position[key].value == pytest.approx(1.0)


@pytest.mark.parametrize("t,count", [((3.0, 0.0), 2), ((1.0, 0.0), 4), ((0.3, 0.2), 4), ((0.0, 5.0), 2)])
def test_ellipse_point_counts(t, count):
    points = ellipse_critical_points(t, IDENTITY, 2.0, 1.0)
    assert len(points) == count
    assert all(not p.degenerate for p in points)


def test_ellipse_points_are_stationary():
    t = np.array([0.4, -0.3])
    for p in ellipse_critical_points(t, IDENTITY, 2.0, 1.0):
        tangent = np.array([-2.0 * math.sin(p.theta), math.cos(p.theta)])
        assert abs((np.array(p.point) - t) @ tangent) <= 1e-10


def test_ellipse_cusp_is_degenerate():
    assert ellipse_evolute_cusp(2.0, 1.0) == pytest.approx(1.5)
    points = ellipse_critical_points([1.5, 0.0], IDENTITY, 2.0, 1.0)
    assert any(p.degenerate for p in points)


def test_ellipse_with_anisotropic_metric():
    sigma = MetricPD(np.array([[2.0, 0.3], [0.3, 1.0]]))
    points = ellipse_critical_points([0.1, 0.1], sigma, 2.0, 1.0)
    assert len(points) in (2, 4)
    values = [p.value for p in points]
    assert min(values) >= 0.0
    assert [p.index for p in points].count(0) >= 1


def test_metric_must_be_positive_definite():
    with pytest.raises(PreconditionError):
        MetricPD(np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(PreconditionError):
        Ellipse(0.0, 1.0)


# ── Focal points on segments ──

def test_single_crossing():
    crossings = focal_points_on_segment(np.diag([0.0, 1.0]), np.diag([3.0, 1.0]), QuadMetric.frobenius())
    assert len(crossings) == 1
    assert crossings[0].alpha == pytest.approx(1 / 3)
    assert crossings[0].multiplicity == 1


def test_best_approximation_has_no_focal_points():
    T = np.diag([5.0, 3.0, 1.0])
    best = min(ey_frobenius_critical(T, 2), key=lambda p: p.index)
    assert best.index == 0
    assert focal_points_on_segment(best.S, T, QuadMetric.frobenius()) == []


@pytest.mark.parametrize("metric,enumerate_rank", [
    (QuadMetric.frobenius(), ey_frobenius_critical),
    (QuadMetric.gaussian(), ey_gaussian_critical),
], ids=["frobenius", "gaussian"])
def test_focal_count_matches_index(metric, enumerate_rank, rng):
    checked = 0
    while checked < 200:
        n = int(rng.integers(2, 7))
        T = _random_symmetric(rng, n)
        for r in range(1, n + 1):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", PolylandWarning)
                points = enumerate_rank(T, r)
                for point in points:
                    if point.degenerate:
                        continue
                    assert index_by_focal_count(point.S, T, metric) == point.index
                    checked += 1


def test_non_commuting_2x2_segment_has_no_crossings():
    # a 2x2 repeated eigenvalue needs a multiple of the identity
    theta = 0.4
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    T = np.diag([3.0, 1.0])
    S = R @ np.diag([0.0, 2.0]) @ R.T
    assert focal_points_on_segment(S, T, QuadMetric.frobenius()) == []


def test_persistent_coincidence_is_rejected():
    with pytest.raises(NonGenericSegmentError):
        focal_points_on_segment(np.diag([1.0, 1.0, 0.0]), np.diag([2.0, 2.0, 1.0]), QuadMetric.frobenius())


def test_focal_points_need_matrix_metric():
    with pytest.raises(PreconditionError):
        focal_points_on_segment(np.eye(2), np.eye(2), QuadMetric.iid(1.0, 5.0))


# ── Discriminants ──

@pytest.mark.parametrize("T,value", [
    (np.eye(2), 0.0),
    (np.diag([2.0, 1.0]), 1.0),
    (np.array([[0.0, 1.0], [1.0, 0.0]]), 64.0),
])
def test_frobenius_discriminant(T, value):
    assert discriminant_2x2_frobenius(T) == pytest.approx(value)


def test_frobenius_discriminant_scan(rng):
    for _ in range(10_000):
        T = _random_symmetric(rng, 2)
        gap = np.diff(np.linalg.eigvalsh(T))[0]
        value = discriminant_2x2_frobenius(T)
        assert value > 0
        assert value == pytest.approx(gap ** 6, rel=1e-6)
    for _ in range(200):
        theta, c = rng.uniform(0, 2 * math.pi), rng.uniform(-3, 3)
        R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        assert abs(discriminant_2x2_frobenius(R @ (c * np.eye(2)) @ R.T)) <= 1e-12


def test_term_table_checksum():
    assert len(TERMS) == 68
    assert table_digest() == TERMS_SHA256


def test_iid_discriminant_homogeneity(rng):
    T = _random_symmetric(rng, 2)
    base = discriminant_2x2_iid(T, 1.0, 7.0)
    scale = discriminant_2x2_iid_scale(T, 1.0, 7.0)
    for c in (0.5, 2.0, -1.5):
        assert abs(discriminant_2x2_iid(c * T, 1.0, 7.0) - c ** 6 * base) <= 1e-12 * c ** 6 * scale


def test_iid_discriminant_moment_weighting(rng):
    T = _random_symmetric(rng, 2)
    base = discriminant_2x2_iid(T, 0.8, 5.0)
    scale = discriminant_2x2_iid_scale(T, 0.8, 5.0)
    c = 1.7
    assert abs(discriminant_2x2_iid(T, c * 0.8, c * c * 5.0) - c ** 24 * base) <= 1e-12 * c ** 24 * scale


def test_iid_discriminant_vanishes_on_isotropic_teacher():
    T = np.eye(2)
    assert abs(discriminant_2x2_iid(T, 1.0, 3.0)) <= 1e-9 * discriminant_2x2_iid_scale(T, 1.0, 3.0)


def test_rank_one_angles_are_critical():
    T = np.array([[1.0, 0.3], [0.3, 0.5]])
    metric = QuadMetric.iid(1.0, 20.0)
    points = rank1_critical_angles_2x2(T, 1.0, 20.0)
    assert len(points) >= 2
    for point in points:
        grad = metric.gradient(point.S, T)
        u = np.array([math.cos(point.phi), math.sin(point.phi)])
        assert np.linalg.norm(grad @ u) <= 1e-8 * (1 + np.linalg.norm(T))


def test_collision_lies_on_discriminant():
    T0 = np.array([[1.0, 0.3], [0.3, 0.0]])
    T1 = np.array([[1.0, 0.3], [0.3, 1.0]])
    result = collision_teacher(T0, T1, 1.0, 20.0, grid=50)
    assert 0.2 < result.s < 0.4
    assert result.counts[0] != result.counts[1]
    assert abs(result.value) <= 1e-6 * result.scale


def test_collision_needs_a_count_change():
    with pytest.raises(PreconditionError):
        collision_teacher(np.diag([2.0, 1.0]), np.diag([2.1, 1.0]), 1.0, 3.0, grid=10)


# ── Stability ──

def test_centre_is_stable():
    report = stability_probe([0.0, 0.0], Ellipse(2.0, 1.0), 1e-3, 30, seed=3)
    assert report.stable
    assert report.baseline_count == 4
    assert report.counts_observed == [4]
    assert report.violations == []


def test_counts_change_across_the_cusp():
    assert len(ellipse_critical_points([1.49, 0.0], IDENTITY, 2.0, 1.0)) == 4
    assert len(ellipse_critical_points([1.51, 0.0], IDENTITY, 2.0, 1.0)) == 2


def test_cusp_is_unstable():
    report = stability_probe([1.5, 0.0], Ellipse(2.0, 1.0), 1e-2, 60, seed=5)
    assert not report.stable
    assert report.baseline_degenerate
    assert report.baseline_count == 2
    assert 2 in report.counts_observed
    assert len(report.violations) == 60


def test_cusp_strict_mode_raises():
    with pytest.raises(BaselineDegenerateError):
        stability_probe([1.5, 0.0], Ellipse(2.0, 1.0), 1e-2, 5, seed=5, strict=True)


def test_generic_stratum_is_stable():
    T = np.diag([3.0, 1.0, -2.0])
    report = stability_probe(T, RankStratum(3, 1, QuadMetric.frobenius()), 1e-4, 50, seed=9)
    assert report.stable
    assert report.baseline_count == 3


def test_stability_is_reproducible():
    args = ([1.4, 0.05], Ellipse(2.0, 1.0), 5e-2, 20)
    first = stability_probe(*args, seed=17).to_dict()
    second = stability_probe(*args, seed=17).to_dict()
    assert first == second


# ── Queries ──

def test_focal_query_from_dict_ellipse():
    query = FocalQuery.from_dict({"variety": "ellipse", "teacher": [0.0, 0.0], "a": 2.0, "b": 1.0})
    payload = run_focal_query(query)
    assert payload["variety"] == "ellipse"
    assert payload["cusp"] == pytest.approx(1.5)
    assert len(payload["critical_points"]) == 4


def test_focal_query_stratum_crossings_match_indices():
    query = FocalQuery.from_dict({"variety": "stratum", "teacher": [[3.0, 0.0], [0.0, 1.0]], "r": 1})
    payload = run_focal_query(query)
    for row in payload["critical_points"]:
        assert sum(c["multiplicity"] for c in row["crossings"]) == row["index"]


@pytest.mark.parametrize("r", [1, 2])
def test_gaussian_stratum_crossings_match_indices(r):
    T = np.diag([3.0, 1.0, -0.5])
    query = FocalQuery(RankStratum(3, r, QuadMetric.gaussian()), T)
    payload = run_focal_query(query)
    assert len(payload["critical_points"]) == len(ey_gaussian_critical(T, r))
    for row in payload["critical_points"]:
        assert sum(c["multiplicity"] for c in row["crossings"]) == row["index"]
