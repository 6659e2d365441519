from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as spi

from linesplit.analysis import (
    ORDERING_LABELS,
    RateTable,
    SubdomainSpec,
    WeightedNormSpec,
    convergence_rates,
    error_norm,
    error_norms,
    heuristic_orderings,
    integrate,
    modelling_indicator,
    removal_study,
    removed_count,
    weighted_l2_norm,
)
from linesplit.assembly import FeFunction, FeSpace
from linesplit.geometry import Axis, LineNetwork, Segment
from linesplit.kernels import green_segment
from linesplit.mesh import MeshParams, build_box_prism, build_box_tet
from linesplit.studies import NetworkProblem, StudyConfig, reconstruct_u

MESH = build_box_prism(MeshParams(8, 4))
SPACE = FeSpace(MESH)
ZAXIS = Axis(np.array([0.5, 0.5, 0.0]), np.array([0.0, 0.0, 1.0]))


def test_zero_error_for_representable_field():
    uh = SPACE.interpolate(lambda x: 2 * x[..., 0] - x[..., 2])
    res = error_norms(uh, lambda x: 2 * x[..., 0] - x[..., 2],
                      lambda x: np.broadcast_to([2.0, 0.0, -1.0], x.shape))
    assert all(v < 1e-12 for v in res.values())


def test_constant_difference_is_volume():
    zero = FeFunction(SPACE, np.zeros(SPACE.ndofs))
    assert error_norm(zero, lambda x: np.ones(x.shape[:-1])) == pytest.approx(1.0, rel=1e-13)
    assert error_norm(zero, None) == 0.0
    res = error_norms(zero, lambda x: np.ones(x.shape[:-1]), lambda x: np.zeros(x.shape))
    assert res[("full", "H1semi")] == 0.0 and res[("full", "H1")] == pytest.approx(1.0)


def test_tube_exclusion_volume():
    fine = build_box_tet(MeshParams(16, 2))
    zero = FeFunction(FeSpace(fine), np.zeros(fine.n_nodes))
    R = 0.2
    e = error_norm(zero, lambda x: np.ones(x.shape[:-1]), sub=SubdomainSpec.tube(ZAXIS, R))
    assert e**2 == pytest.approx(1 - math.pi * R**2, rel=1e-2)


def test_singular_field_inside_tube_is_ignored():
    zero = FeFunction(SPACE, np.zeros(SPACE.ndofs))

    def blows_up(x):
        return np.where(ZAXIS.distance(x) < 0.1, np.inf, 1.0)

    res = error_norms(zero, blows_up, subs={"R": SubdomainSpec.tube(ZAXIS, 0.2)}, kinds=("L2",))
    assert np.isfinite(res[("R", "L2")])
    with pytest.raises(Exception):
        error_norms(zero, blows_up, kinds=("L2",))


@pytest.mark.parametrize("alpha", [0.0, 0.5, -0.5])
def test_weighted_norm_against_radial_oracle(alpha):
    fine = build_box_prism(MeshParams(16, 1))
    spec = WeightedNormSpec(alpha, ZAXIS)
    got = weighted_l2_norm(lambda x: np.ones(x.shape[:-1]), spec, fine)
    if alpha < 0:
        # int of 1/r over the square centred on the axis
        oracle = 4 * math.log(1 + math.sqrt(2))
    else:
        oracle, _ = spi.dblquad(lambda y, x: math.hypot(x - 0.5, y - 0.5) ** (2 * alpha), 0, 1, 0, 1)
    # the 1/r weight is singular on cell edges, so quadrature is less accurate there
    assert got**2 == pytest.approx(oracle, rel=2e-3 if alpha >= 0 else 1e-2)


def test_weighted_spec_validation():
    with pytest.raises(ValueError):
        WeightedNormSpec(1.0, ZAXIS)


def test_integrate():
    assert integrate(lambda x: x[..., 0] * x[..., 1] ** 2, MESH) == pytest.approx(1 / 6, rel=1e-12)


def test_rates():
    assert convergence_rates(3.8e-4, 9.5e-5, 1 / 32, 1 / 64) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        convergence_rates(1.0, 0.5, 0.1, 0.2)


@given(st.floats(0.5, 3.0), st.floats(1e-6, 1.0))
def test_rate_of_power_law(p, c):
    hs = [1 / 4, 1 / 8, 1 / 16]
    t = RateTable(("L2",))
    for h in hs:
        t.add(1 / 16, h, {"L2": c * h**p})
    assert t.rate(0, "L2") is None
    for i in (1, 2):
        assert t.rate(i, "L2") == pytest.approx(p, rel=1e-9)


def test_rate_table_text_and_csv():
    t = RateTable(("L2", "H1"), "demo")
    t.add(1 / 16, 1 / 4, {"L2": 4e-2, "H1": 2e-1})
    t.add(1 / 16, 1 / 8, {"L2": 1e-2, "H1": 1e-1})
    t.add(1 / 64, 1 / 8, {"L2": 0.9e-2, "H1": 0.9e-1})
    t.add(1 / 32, 1 / 4, {"L2": 1.0, "H1": 1.0})
    txt = t.to_text().splitlines()
    assert txt[0] == "demo"
    assert "1/16" in txt[2] and "2.00" in txt[3] and "1.00" in txt[3]
    assert t.rate(3, "L2") is None
    rows = t.to_csv().splitlines()
    assert rows[0] == "h_par,h_perp,L2,p_L2,H1,p_H1"
    assert len(rows) == 5
    assert len(t.select(1 / 16).rows) == 2


def _net():
    segs = [
        Segment(np.array([0.2, 0.2, 0.2]), np.array([0.2, 0.2, 0.6])),
        Segment(np.array([0.7, 0.3, 0.3]), np.array([0.7, 0.6, 0.3])),
        Segment(np.array([0.4, 0.7, 0.5]), np.array([0.6, 0.8, 0.9])),
    ]
    return LineNetwork.vascular(segs, [0.02, 0.04, 0.01], [1.0, -0.1, 1.0])


def test_indicator_scaling_and_zero_gamma():
    net = _net()
    M = modelling_indicator(net, MESH)
    assert np.all(M > 0)
    doubled = LineNetwork.vascular(net.segments, [2 * r for r in net.radii], net.gammas)
    assert modelling_indicator(doubled, MESH) == pytest.approx(2 * M, rel=1e-14)
    zero = LineNetwork.vascular(net.segments, net.radii, [0.0, 1.0, 1.0])
    assert modelling_indicator(zero, MESH)[0] == 0.0


def test_indicator_against_dense_midpoint_grid():
    net = _net()
    n = 60
    c = (np.arange(n) + 0.5) / n
    X = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
    fine = build_box_tet(MeshParams(8, 8))
    M = modelling_indicator(net, fine)
    for i, seg in enumerate(net.segments):
        oracle = abs(net.gammas[i] * net.radii[i]) * math.sqrt(np.mean(green_segment(seg, X) ** 2))
        assert M[i] == pytest.approx(oracle, rel=2e-2)


def test_orderings():
    net = _net()
    o = heuristic_orderings(net, indicator=np.array([1.0, 3.0, 2.0]))
    assert tuple(o) == ORDERING_LABELS
    assert o["R"].tolist() == [1, 0, 2]
    assert o["M"].tolist() == [1, 2, 0]
    L = net.lengths
    assert o["L"].tolist() == list(np.argsort(-L, kind="stable"))
    key = np.asarray(net.radii) * np.sqrt(L)
    assert o["R*sqrt(L)"].tolist() == list(np.argsort(-key, kind="stable"))
    ties = LineNetwork.vascular(net.segments, [0.1, 0.1, 0.1], [1.0, 1.0, 1.0])
    assert heuristic_orderings(ties)["R"].tolist() == [0, 1, 2]


def test_removed_count():
    assert [removed_count(20, f) for f in (0, 0.1, 0.25, 0.5, 1.0)] == [0, 2, 5, 10, 20]
    assert removed_count(3, 0.5) == 2


def test_tube_norm_shrinks_with_radius():
    uh = FeFunction(SPACE, np.zeros(SPACE.ndofs))
    f = lambda x: 1.0 / np.maximum(ZAXIS.distance(x), 1e-3)
    vals = [error_norm(uh, f, sub=SubdomainSpec.tube(ZAXIS, R)) for R in (0.05, 0.1, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_removal_study_endpoints():
    net = _net()
    prob = NetworkProblem(MESH, 1.0, 1.0, StudyConfig("network"))
    fr = (0.0, 0.5, 1.0)
    curves = removal_study(net, heuristic_orderings(net, mesh=MESH), prob.solve_w, prob.space, fr)
    assert [c.label for c in curves] == list(ORDERING_LABELS)
    w = prob.solve_w(net)
    u = reconstruct_u(FeFunction(prob.space, w), net)
    # removing everything leaves u = 1 exactly
    full = error_norm(FeFunction(prob.space, w / (4 * math.pi)),
                      lambda x: 1.0 - reconstruct_u(FeFunction(prob.space, np.zeros_like(w)), net).evaluate(x))
    for c in curves:
        assert c.errors[0] == 0.0
        assert c.removed_counts.tolist() == [0, 2, 3]
        assert c.errors[-1] == pytest.approx(full, rel=1e-6)
    assert np.isfinite(u.nodal).all()
