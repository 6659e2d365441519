from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from linesplit.geometry import (
    Axis,
    IntensityProfile,
    LineNetwork,
    Segment,
    axis_offset,
    distance_to,
    distance_to_segment,
    endpoint_distances,
    project_arclength,
)

coord = st.floats(-2, 2, allow_nan=False)
vec3 = st.tuples(coord, coord, coord).map(np.array)


def test_segment_derived_fields():
    s = Segment(np.zeros(3), np.array([0.0, 3.0, 4.0]))
    assert s.L == 5.0
    assert_allclose(s.tau, [0, 0.6, 0.8])
    assert_allclose(s.point_at(2.5), s.midpoint)


def test_segment_rejects_zero_length_and_nan():
    with pytest.raises(ValueError):
        Segment(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        Segment(np.array([0, 0, np.nan]), np.ones(3))


def test_segment_arrays_are_read_only():
    s = Segment(np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        s.a[0] = 1.0


def test_profile_evaluation_and_calculus():
    f = IntensityProfile((1.0, -2.0, 3.0))  # 1 - 2t + 3t^2
    assert f(2.0) == 9.0
    assert f.derivative()(2.0) == 10.0
    assert f.derivative(2)(0.3) == 6.0
    assert f.derivative(3).coefficients == (0.0,)
    assert f.integral(0.0, 1.0) == pytest.approx(1.0)
    assert not f.is_constant
    assert IntensityProfile.constant(2.0).is_constant


def test_network_defaults_and_subset():
    segs = [Segment(np.zeros(3), np.array([1.0, 0, 0])), Segment(np.zeros(3), np.array([0, 2.0, 0]))]
    net = LineNetwork.vascular(segs, [0.5, 0.1], [1.0, -0.1])
    assert net.intensities[0](0.3) == 0.5
    assert net.intensities[1](0.0) == pytest.approx(-0.01)
    assert_allclose(net.lengths, [1.0, 2.0])
    assert net.total_intensity() == pytest.approx(0.5 - 0.02)
    assert net.subset([]) is None
    assert len(net.subset([1])) == 1
    with pytest.raises(ValueError):
        LineNetwork.vascular(segs, [-1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        LineNetwork((), (), (), ())


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, vec3)
def test_distance_decomposition(a, b, x):
    if np.linalg.norm(b - a) < 1e-3:
        return
    seg = Segment(a, b)
    s, p = axis_offset(seg, x)
    # orthogonal split of x - a
    assert_allclose(seg.a + s * seg.tau + p, x, atol=1e-12)
    assert abs(p @ seg.tau) < 1e-10
    assert s == pytest.approx(project_arclength(seg, x))
    d = distance_to_segment(seg, x)
    ra, rb = endpoint_distances(seg, x)
    assert d <= min(ra, rb) + 1e-12
    assert d >= np.linalg.norm(p) - 1e-12
    # brute-force minimum over a fine parameter grid
    t = np.linspace(0, seg.L, 2001)
    brute = np.min(np.linalg.norm(seg.point_at(t) - x, axis=-1))
    assert d <= brute + 1e-12
    assert brute - d <= seg.L / 2000 + 1e-12


def test_axis_distance():
    ax = Axis(np.array([0.5, 0.5, 0.0]), np.array([0.0, 0.0, 2.0]))
    assert_allclose(ax.direction, [0, 0, 1])
    assert distance_to(ax, np.array([0.5, 0.8, 7.0])) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        Axis(np.zeros(3), np.zeros(3))
