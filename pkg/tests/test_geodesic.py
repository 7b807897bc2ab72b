import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopforge.corpus import builtin_manifold
from loopforge.errors import LeftChartDomain, PointOutsideChart
from loopforge.geodesic import (
    GeodesicPath,
    IntegratorOptions,
    PathSegment,
    TangentState,
    exp_differential,
    exp_inverse_continuation,
    exp_map,
    geodesic_rhs,
    integrate_geodesic,
)
from loopforge.metric import cholesky_factor, norm


def fd_differential(model, q, v, h=1e-5):
    cols = [(exp_map(model, q, v + h * e) - exp_map(model, q, v - h * e)) / (2 * h) for e in np.eye(len(q))]
    return np.column_stack(cols)


def test_rhs_examples(corpus):
    dx, dv = geodesic_rhs(corpus["euclidean-plane"], TangentState(np.array([1.0, 2.0]), np.array([0.3, 0.4])))
    np.testing.assert_array_equal(dx, [0.3, 0.4])
    np.testing.assert_array_equal(dv, [0.0, 0.0])
    _, dv = geodesic_rhs(corpus["round-sphere"], TangentState(np.array([math.pi / 2, 0.0]), np.array([0.0, 1.0])))
    np.testing.assert_allclose(dv, 0.0, atol=1e-15)
    _, dv = geodesic_rhs(corpus["pseudosphere"], TangentState(np.array([1.0, 0.0]), np.array([1.0, 0.0])))
    np.testing.assert_array_equal(dv, [0.0, 0.0])


def test_integrate_examples(corpus):
    path = integrate_geodesic(corpus["euclidean-plane"], TangentState(np.zeros(2), np.array([1.0, 0.0])), 5.0)
    np.testing.assert_allclose(path.end.x, [5.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(path.end.v, [1.0, 0.0], atol=1e-12)
    path = integrate_geodesic(corpus["round-sphere"], TangentState(np.array([math.pi / 2, 0.0]), np.array([0.0, 1.0])), math.pi)
    np.testing.assert_allclose(path.end.x, [math.pi / 2, math.pi], atol=1e-10)
    np.testing.assert_allclose(path.end.v, [0.0, 1.0], atol=1e-10)
    # torus inner equator, length 2 pi (R - r)
    path = integrate_geodesic(corpus["torus-revolution"], TangentState(np.array([math.pi, 0.0]), np.array([0.0, 1.0])), 2 * math.pi)
    np.testing.assert_allclose(path.end.x, [math.pi, 2 * math.pi], atol=1e-10)
    np.testing.assert_allclose(path.end.v, [0.0, 1.0], atol=1e-10)


def test_path_structure(corpus):
    m = corpus["catenoid"]
    path = integrate_geodesic(m, TangentState.unit(m, [0.2, 0.0], [1.0, 1.0]), 2.5)
    assert path.t[0] == 0.0 and path.total_length == pytest.approx(2.5, abs=1e-15)
    assert np.all(np.diff(path.t) > 0)
    mid = path.state_at(1.2345)
    direct = integrate_geodesic(m, TangentState.unit(m, [0.2, 0.0], [1.0, 1.0]), 1.2345)
    np.testing.assert_allclose(mid.x, direct.end.x, atol=1e-10)
    np.testing.assert_allclose(mid.v, direct.end.v, atol=1e-8)


def test_speed_drift_per_unit_length(corpus, rng):
    for name in ("torus-revolution", "catenoid", "pseudosphere", "round-sphere"):
        m = corpus[name]
        for _ in range(3):
            x = np.array([rng.uniform(0.8, 2.3), rng.uniform(0, 6)])
            if name == "round-sphere":
                L = 1.0
            else:
                L = 10.0
            path = integrate_geodesic(m, TangentState.unit(m, x, rng.normal(size=2)), L)
            assert path.speed_drift(m) <= 1e-7 * L


def test_unit_speed_required(corpus):
    with pytest.raises(ValueError):
        integrate_geodesic(corpus["euclidean-plane"], TangentState(np.zeros(2), np.array([2.0, 0.0])), 1.0)
    with pytest.raises(ValueError):
        TangentState.unit(corpus["euclidean-plane"], [0, 0], [0, 0])


def test_leaving_the_chart(corpus):
    with pytest.raises(LeftChartDomain) as exc:
        integrate_geodesic(corpus["round-sphere"], TangentState(np.array([0.5, 0.0]), np.array([-1.0, 0.0])), 2.0)
    assert exc.value.t_exit == pytest.approx(0.5, abs=2e-3)
    assert exc.value.partial.total_length <= 0.5
    with pytest.raises(PointOutsideChart):
        exp_map(corpus["round-sphere"], [4.0, 0.0], [1.0, 0.0])


def test_richardson(corpus):
    m = corpus["catenoid"]
    st0 = TangentState.unit(m, [0.1, 0.0], [0.3, 1.0])
    coarse = integrate_geodesic(m, st0, 3.0, IntegratorOptions(step=0.05))
    fine = integrate_geodesic(m, st0, 3.0, IntegratorOptions(step=0.05, richardson=True, richardson_tol=1e-10))
    ref = integrate_geodesic(m, st0, 3.0, IntegratorOptions(step=1e-3))
    assert fine.step < coarse.step
    assert np.linalg.norm(fine.end.x - ref.end.x) < 1e-9


def test_exp_examples(corpus):
    for m in corpus.values():
        np.testing.assert_array_equal(exp_map(m, [0.7, 0.2], [0.0, 0.0]), [0.7, 0.2])
    np.testing.assert_allclose(exp_map(corpus["euclidean-plane"], [1.0, 1.0], [2.0, 0.0]), [3.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(exp_map(corpus["round-sphere"], [math.pi / 2, 0.0], [0.0, math.pi]), [math.pi / 2, math.pi], atol=1e-10)


def test_differential_examples(corpus, rng):
    e = corpus["euclidean-plane"]
    for _ in range(3):
        D = exp_differential(e, rng.normal(size=2), rng.normal(size=2)).matrix
        np.testing.assert_allclose(D, np.eye(2), atol=1e-12)
    D = exp_differential(corpus["catenoid"], [0.3, 0.0], [0.0, 0.0]).matrix
    np.testing.assert_array_equal(D, np.eye(2))
    small = exp_differential(corpus["catenoid"], [0.3, 0.0], [1e-6, 2e-6]).matrix
    np.testing.assert_allclose(small, np.eye(2), atol=1e-5)
    # sphere: transverse entry sin(t)/t in orthonormal frames
    m = corpus["round-sphere"]
    q = np.array([math.pi / 2, 0.0])
    d = exp_differential(m, q, [0.0, math.pi / 2])
    Dhat = cholesky_factor(m, d.endpoint).T @ d.matrix @ np.linalg.inv(cholesky_factor(m, q).T)
    assert Dhat[0, 0] == pytest.approx(2 / math.pi, abs=1e-9)
    assert Dhat[1, 1] == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(d.matrix, fd_differential(m, q, np.array([0.0, math.pi / 2])), rtol=1e-6, atol=1e-8)


def test_differential_near_conjugate_is_flagged(corpus):
    from loopforge.errors import NearSingular

    m = corpus["round-sphere"]
    d = exp_differential(m, [math.pi / 2, 0.0], [0.0, math.pi], check=False)
    assert d.singular
    with pytest.raises(NearSingular):
        exp_differential(m, [math.pi / 2, 0.0], [0.0, math.pi])


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from(["torus-revolution", "catenoid", "pseudosphere", "round-sphere"]),
    st.floats(0.8, 2.3),
    st.floats(0, 6.28),
    st.floats(0, 6.28),
    st.floats(0.05, 1.5),
    st.floats(0, 6.28),
)
def test_differential_matches_finite_differences(name, a, b, ang, r, ang_w):
    m = builtin_manifold(name)
    q = np.array([a, b])
    v = r * np.array([math.cos(ang), math.sin(ang)])
    w = np.array([math.cos(ang_w), math.sin(ang_w)])
    D = exp_differential(m, q, v).matrix
    fd = (exp_map(m, q, v + 1e-5 * w) - exp_map(m, q, v - 1e-5 * w)) / 2e-5
    assert np.linalg.norm(D @ w - fd) <= 1e-5 * np.linalg.norm(fd)


# ---------------------------------------------------------------------------
# local inverse continuation
# ---------------------------------------------------------------------------


def test_lift_euclidean_is_translation(corpus):
    m = corpus["euclidean-plane"]
    q = np.array([0.0, 0.0])
    path = integrate_geodesic(m, TangentState(np.array([1.0, 2.0]), np.array([0.6, 0.8])), 2.0)
    lift = exp_inverse_continuation(m, q, PathSegment(path, 0.0, 2.0), np.array([1.0, 2.0]), nodes=8)
    np.testing.assert_allclose(lift.lift, lift.target_x - q, atol=1e-10)
    np.testing.assert_allclose(lift.end, path.end.x - q, atol=1e-10)


def test_lift_of_constant_curve(corpus):
    m = corpus["catenoid"]
    q = np.array([0.2, 0.1])
    v = np.array([0.4, 0.9])
    p = exp_map(m, q, v)
    t = np.linspace(0, 1, 5)
    const = GeodesicPath(t, np.tile(p, (5, 1)), np.zeros((5, 2)), np.zeros((5, 2)))
    lift = exp_inverse_continuation(m, q, PathSegment(const, 0.0, 1.0), v, nodes=4)
    np.testing.assert_allclose(lift.lift, np.tile(v, (5, 1)), atol=1e-9)


def test_lift_rejects_bad_start(corpus):
    m = corpus["catenoid"]
    path = integrate_geodesic(m, TangentState.unit(m, [0.3, 0.0], [1.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        exp_inverse_continuation(m, np.array([0.0, 0.0]), PathSegment(path, 0, 1), np.array([0.1, 0.0]))


def test_lift_on_catenoid_against_finer_grid(corpus):
    from loopforge.loops import loop_from_state

    m = corpus["catenoid"]
    loop = loop_from_state(m, [0.5, 0.0], [-0.40845952229755306, 0.787152178178008], 6.537541195079716)
    delta = 0.3
    q = loop.path.state_at(delta)
    v = (loop.length - delta) * q.v
    seg = PathSegment(loop.path, 0.0, delta)
    coarse = exp_inverse_continuation(m, q.x, seg, v, nodes=8)
    fine = exp_inverse_continuation(m, q.x, seg, v, nodes=80)
    np.testing.assert_allclose(coarse.end, fine.end, atol=1e-9)
    u = coarse.end
    assert np.linalg.norm(m.chart.difference(exp_map(m, q.x, u), q.x)) <= 1e-8
    assert norm(m, q.x, u) < loop.length
