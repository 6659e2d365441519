from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import quad

from linesplit.errors import NonFiniteEvaluation, NonPositiveKappa
from linesplit.geometry import Axis, IntensityProfile, LineNetwork, Segment
from linesplit.kernels import (
    UNCLAMPED,
    CoefficientBundle,
    KernelConfig,
    correction_rhs,
    correction_rhs_infinite,
    correction_rhs_segment,
    correction_rhs_variable_kappa,
    count_clamped,
    dirichlet_data_w,
    grad_green_infinite_line,
    grad_green_segment,
    grad_singular_sum,
    green_infinite_line,
    green_segment,
    green_segment_conjugate,
    green_segment_forward,
    singular_part,
    singular_sum,
)

SEG = Segment(np.array([0.2, 0.3, 0.1]), np.array([0.7, 0.6, 0.9]))


def brute_green(seg, x):
    val, _ = quad(lambda t: 1.0 / np.linalg.norm(x - seg.point_at(t)), 0.0, seg.L, epsabs=0, epsrel=1e-13, limit=200)
    return val


def random_points_away(seg, n, rng, dmin=0.05):
    from linesplit.geometry import distance_to_segment

    pts = []
    while len(pts) < n:
        x = rng.uniform(-0.5, 1.5, size=3)
        if distance_to_segment(seg, x) > dmin:
            pts.append(x)
    return np.array(pts)


def test_reference_value_on_perpendicular_bisector_line():
    seg = Segment(np.array([0, 0, -0.5]), np.array([0, 0, 0.5]))
    # r_a = r_b = 0.625 at (0.375, 0, 0) -> ln((0.625 + 0.5) / (0.625 - 0.5)) = ln 9
    assert green_segment(seg, np.array([0.375, 0.0, 0.0])) == pytest.approx(math.log(9.0), rel=1e-15)


def test_green_matches_adaptive_quadrature(rng):
    pts = random_points_away(SEG, 40, rng)
    g = green_segment(SEG, pts)
    ref = np.array([brute_green(SEG, x) for x in pts])
    assert np.max(np.abs(g - ref) / np.abs(ref)) < 1e-10


def test_gradient_matches_central_differences(rng):
    pts = random_points_away(SEG, 30, rng)
    h = 1e-6
    fd = np.stack([(green_segment(SEG, pts + h * e) - green_segment(SEG, pts - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)
    g = grad_green_segment(SEG, pts)
    assert np.max(np.linalg.norm(g - fd, axis=1) / np.linalg.norm(g, axis=1)) < 1e-6


def test_forward_and_conjugate_forms_agree_where_both_are_stable(rng):
    pts = random_points_away(SEG, 50, rng, dmin=0.2)
    assert_allclose(green_segment_forward(SEG, pts), green_segment_conjugate(SEG, pts), rtol=1e-12)
    assert_allclose(green_segment(SEG, pts), green_segment_forward(SEG, pts), rtol=1e-12)


def test_stable_on_the_axis_extensions():
    seg = Segment(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    behind = np.array([0.0, 0.0, -2.0])
    ahead = np.array([0.0, 0.0, 3.0])
    # G = ln(|x-b|/|x-a|) on the extension rays
    assert green_segment(seg, behind) == pytest.approx(math.log(3 / 2), rel=1e-14)
    assert green_segment(seg, ahead) == pytest.approx(math.log(3 / 2), rel=1e-14)
    with np.errstate(all="ignore"):
        assert not np.isfinite(green_segment_forward(seg, ahead))
    # just off the extension, far away: no cancellation blow-up
    x = np.array([1e-9, 0.0, 50.0])
    assert green_segment(seg, x) == pytest.approx(math.log(50 / 49), rel=1e-9)


def test_harmonic_away_from_the_segment(rng):
    pts = random_points_away(SEG, 20, rng, dmin=0.2)
    h = 1e-3
    lap = sum(green_segment(SEG, pts + h * e) + green_segment(SEG, pts - h * e) for e in np.eye(3)) - 6 * green_segment(SEG, pts)
    lap /= h * h
    assert np.max(np.abs(lap)) < 1e-3


def test_infinite_line_limit():
    rho = 0.3
    x = np.array([rho, 0.0, 0.0])

    def gap(L):
        seg = Segment(np.array([0, 0, -L]), np.array([0, 0, L]))
        return abs(green_segment(seg, x) - 2.0 * math.log(2 * L) + 2 * math.log(rho))

    gaps = [gap(L) for L in (2.0, 4.0, 8.0, 16.0)]
    for g0, g1 in zip(gaps, gaps[1:]):
        assert g1 / g0 <= 0.3


def test_infinite_line_kernel_and_gradient():
    ax_point, ax_dir = np.array([0.5, 0.5, 0.0]), np.array([0.0, 0.0, 1.0])
    x = np.array([0.8, 0.9, 0.3])
    assert green_infinite_line(ax_point, ax_dir, x) == pytest.approx(math.log(0.5))
    assert_allclose(grad_green_infinite_line(ax_point, ax_dir, x), np.array([0.3, 0.4, 0.0]) / 0.25)
    with pytest.raises(NonFiniteEvaluation):
        green_infinite_line(ax_point, ax_dir, np.array([0.5, 0.5, 0.7]), UNCLAMPED)


def test_clamping_on_the_segment():
    on = SEG.point_at(0.3)
    with pytest.raises(NonFiniteEvaluation) as err:
        green_segment(SEG, on, UNCLAMPED)
    assert err.value.location is not None
    g = green_segment(SEG, on, KernelConfig(1e-8))
    assert np.isfinite(g)
    assert g == pytest.approx(math.log(4 * 0.3 * (SEG.L - 0.3) / 1e-16), rel=1e-6)
    assert count_clamped(LineNetwork.from_segments([SEG]), np.array([on, on + 1.0]), KernelConfig(1e-8)) == 1
    # on the extension beyond an endpoint no clamp is needed
    assert np.isfinite(green_segment(SEG, SEG.point_at(SEG.L + 0.5), UNCLAMPED))


# ----------------------------------------------------------------------------- correction right-hand sides

X, Y, Z = sp.symbols("x y z", real=True)


def sym_green(seg):
    ax, ay, az = (sp.nsimplify(v) for v in seg.a)
    bx, by, bz = (sp.nsimplify(v) for v in seg.b)
    L = sp.sqrt((bx - ax) ** 2 + (by - ay) ** 2 + (bz - az) ** 2)
    ra = sp.sqrt((X - ax) ** 2 + (Y - ay) ** 2 + (Z - az) ** 2)
    rb = sp.sqrt((X - bx) ** 2 + (Y - by) ** 2 + (Z - bz) ** 2)
    s = ((X - ax) * (bx - ax) + (Y - ay) * (by - ay) + (Z - az) * (bz - az)) / L
    return sp.log((rb + L - s) / (ra - s)), s


def sym_lap(expr):
    return sum(sp.diff(expr, v, 2) for v in (X, Y, Z))


@pytest.fixture(scope="module")
def sym_seg():
    seg = Segment(np.array([0.25, 0.5, 0.125]), np.array([0.75, 0.25, 0.875]))
    G, s = sym_green(seg)
    return seg, G, s


def test_segment_rhs_equals_laplacian_of_singular_term(sym_seg, rng):
    """F = Lap(E G) off the line, so that -Lap w = F for w = 4 pi u - E G."""
    seg, G, s = sym_seg
    coeffs = (0.3, -1.2, 0.7, 0.4)
    prof = IntensityProfile(coeffs)
    E = sum(c * s**j for j, c in enumerate(coeffs))
    lap = sp.lambdify((X, Y, Z), sym_lap(E * G), "numpy")
    pts = random_points_away(seg, 12, rng, dmin=0.1)
    ref = lap(pts[:, 0], pts[:, 1], pts[:, 2])
    assert_allclose(correction_rhs_segment(seg, prof, pts), ref, rtol=1e-9, atol=1e-9)


def test_segment_rhs_quadratic_profile():
    # f(t) = t^2: F = 2 G + 4 t (1/ra - 1/rb)
    seg = Segment(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    x = np.array([0.3, 0.1, 0.4])
    ra = np.linalg.norm(x)
    rb = np.linalg.norm(x - seg.b)
    F = correction_rhs_segment(seg, IntensityProfile((0.0, 0.0, 1.0)), x)
    assert F == pytest.approx(2 * green_segment(seg, x) + 4 * 0.4 * (1 / ra - 1 / rb), rel=1e-13)
    assert correction_rhs_segment(seg, IntensityProfile((3.0,)), x) == 0.0


def test_variable_kappa_rhs_against_symbolic_operator(sym_seg, rng):
    """-div(kappa grad w) = F with w = 4 pi u - E G / kappa and u kappa-harmonic off the line."""
    seg, G, s = sym_seg
    kap = 1 + X / 3 + Y * Z / 5 + X**2 / 7
    coeffs = (0.5, 0.8, -0.3)
    E = sum(c * s**j for j, c in enumerate(coeffs))
    q = E * G / kap
    flux = sum(sp.diff(kap * sp.diff(q, v), v) for v in (X, Y, Z))
    ref_fn = sp.lambdify((X, Y, Z), flux, "numpy")
    grad_k = [sp.lambdify((X, Y, Z), sp.diff(kap, v), "numpy") for v in (X, Y, Z)]
    k_fn = sp.lambdify((X, Y, Z), kap, "numpy")
    lap_k = sp.lambdify((X, Y, Z), sym_lap(kap), "numpy")

    def comp(f):
        return lambda x: np.broadcast_to(f(x[..., 0], x[..., 1], x[..., 2]), x.shape[:-1]).astype(float)

    bundle = CoefficientBundle(
        comp(k_fn),
        lambda x: np.stack([comp(g)(x) for g in grad_k], axis=-1),
        comp(lap_k),
    )
    pts = random_points_away(seg, 10, rng, dmin=0.1)
    pts = np.clip(pts, 0.0, 1.0)
    F = correction_rhs_variable_kappa(seg, IntensityProfile(coeffs), bundle, pts)
    assert_allclose(F, ref_fn(pts[:, 0], pts[:, 1], pts[:, 2]), rtol=1e-8, atol=1e-8)


def test_variable_kappa_reduces_to_unit_kappa(rng):
    one = CoefficientBundle(lambda x: np.ones(x.shape[:-1]), lambda x: np.zeros(x.shape), lambda x: np.zeros(x.shape[:-1]))
    prof = IntensityProfile((0.1, 0.4, -0.6))
    pts = random_points_away(SEG, 20, rng)
    assert_allclose(correction_rhs_variable_kappa(SEG, prof, one, pts), correction_rhs_segment(SEG, prof, pts), rtol=1e-12)


def test_non_positive_kappa_is_rejected():
    bad = CoefficientBundle(lambda x: np.zeros(x.shape[:-1]), lambda x: np.zeros(x.shape), lambda x: np.zeros(x.shape[:-1]))
    with pytest.raises(NonPositiveKappa):
        correction_rhs_variable_kappa(SEG, IntensityProfile((1.0,)), bad, np.array([[0.9, 0.1, 0.1]]))


def test_infinite_line_rhs():
    axis = Axis(np.array([0.5, 0.5, 0.0]), np.array([0.0, 0.0, 1.0]))
    x = np.array([0.6, 0.5, 0.25])
    F = correction_rhs_infinite(IntensityProfile((0, 0, 0, 1.0)), axis, x)
    assert F == pytest.approx(6 * 0.25 * math.log(0.1))


# ----------------------------------------------------------------------------- network sums


def test_network_sums_superpose(rng):
    s2 = Segment(np.array([0.9, 0.1, 0.1]), np.array([0.6, 0.8, 0.3]))
    p1, p2 = IntensityProfile((1.0, 0.5)), IntensityProfile((-0.2,))
    net = LineNetwork.from_segments([SEG, s2], [p1, p2])
    pts = random_points_away(SEG, 10, rng, 0.1)
    one = LineNetwork.from_segments([SEG], [p1])
    two = LineNetwork.from_segments([s2], [p2])
    assert_allclose(singular_sum(net, pts), singular_sum(one, pts) + singular_sum(two, pts), rtol=1e-13)
    assert_allclose(singular_part(net, pts), singular_sum(net, pts) / (4 * math.pi))
    assert_allclose(correction_rhs(net, pts), correction_rhs_segment(SEG, p1, pts), rtol=1e-13)
    assert singular_sum(None, pts).shape == (10,) and not singular_sum(None, pts).any()
    assert_allclose(dirichlet_data_w(lambda x: np.ones(x.shape[:-1]), net, pts), 4 * math.pi - singular_sum(net, pts))
    h = 1e-6
    fd = np.stack([(singular_sum(net, pts + h * e) - singular_sum(net, pts - h * e)) / (2 * h) for e in np.eye(3)], -1)
    assert_allclose(grad_singular_sum(net, pts), fd, rtol=1e-6, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(-2.0, 3.0), st.floats(0.2, 5.0))
def test_green_is_positive_and_symmetric(rho, s, L):
    seg = Segment(np.zeros(3), np.array([0.0, 0.0, L]))
    x = np.array([rho, 0.0, s])
    mirror = np.array([0.0, rho, L - s])
    g = green_segment(seg, x)
    assert g > 0
    assert green_segment(seg, mirror) == pytest.approx(g, rel=1e-12)
