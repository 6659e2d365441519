from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from linesplit.errors import InvalidCell, ParseError
from linesplit.mesh import (
    PRISM,
    TET,
    Box,
    Mesh,
    MeshParams,
    build_box_prism,
    build_box_tet,
    export_ascii_mesh,
    facet_multiplicity,
    import_ascii_mesh,
    validate_mesh,
)


def test_params_from_fractions():
    p = MeshParams.from_h(1 / 16, 1 / 64)
    assert (p.n_perp, p.n_par) == (16, 64)
    with pytest.raises(ValueError):
        MeshParams(0, 1)


@pytest.mark.parametrize("n,nz", [(1, 1), (2, 3), (4, 4)])
def test_tet_counts_and_volume(n, nz):
    m = build_box_tet(MeshParams(n, nz))
    assert m.kind == TET
    assert m.n_nodes == (n + 1) ** 2 * (nz + 1)
    assert m.n_cells == 6 * n * n * nz
    vol = m.cell_volumes()
    assert np.all(vol > 0)
    assert vol.sum() == pytest.approx(1.0, rel=1e-14)
    # every boundary face of the cube is split into 2 triangles per square
    assert m.n_facets == 2 * (2 * n * n + 4 * n * nz)
    validate_mesh(m)


@pytest.mark.parametrize("n,nz", [(1, 1), (4, 16), (3, 2)])
def test_prism_counts_and_volume(n, nz):
    m = build_box_prism(MeshParams(n, nz))
    assert m.kind == PRISM
    assert m.n_cells == 2 * n * n * nz
    assert m.cell_volumes().sum() == pytest.approx(1.0, rel=1e-14)
    assert m.n_facets == 2 * 2 * n * n + 4 * n * nz
    tri = m.facet_nodes[:, 3] < 0
    assert tri.sum() == 4 * n * n  # top and bottom triangles
    validate_mesh(m)


def test_facets_are_boundary_and_tagged(small_mesh):
    m = small_mesh
    assert set(np.unique(facet_multiplicity(m)).tolist()) <= {1, 2}
    assert set(m.facet_tags.tolist()) == set(range(6))
    # each facet lies on the face its tag names
    for tag in range(6):
        axis, side = divmod(tag, 2)
        ids = m.facet_nodes[m.facet_tags == tag]
        coords = m.nodes[ids[ids >= 0], axis]
        assert_allclose(coords, float(side))
    bnd = m.boundary_nodes()
    x = m.nodes[bnd]
    assert np.all(np.any((x == 0) | (x == 1), axis=1))


def test_non_unit_box():
    m = build_box_prism(MeshParams(2, 2, Box((-1, 0, 0), (1, 2, 0.5))))
    assert m.cell_volumes().sum() == pytest.approx(2.0)
    assert m.bounding_box().lo == (-1.0, 0.0, 0.0)


def test_invalid_cells_rejected():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    def mesh(cells):
        e = np.zeros((0, 4), dtype=np.int64)
        return Mesh(nodes, np.array(cells), TET, e, np.zeros(0, np.int64), np.zeros(0, np.int64))

    validate_mesh(mesh([[0, 1, 2, 3]]))
    with pytest.raises(InvalidCell):
        validate_mesh(mesh([[0, 2, 1, 3]]))  # negative orientation
    with pytest.raises(InvalidCell):
        validate_mesh(mesh([[0, 1, 2, 7]]))


def test_ascii_round_trip(tmp_path, small_mesh):
    path = tmp_path / "m.txt"
    export_ascii_mesh(small_mesh, path)
    back = import_ascii_mesh(path)
    assert back.kind == small_mesh.kind
    assert np.array_equal(back.nodes, small_mesh.nodes)
    assert np.array_equal(back.cells, small_mesh.cells)
    assert np.array_equal(back.facet_tags, small_mesh.facet_tags)
    assert np.array_equal(back.facet_nodes, small_mesh.facet_nodes)


@pytest.mark.parametrize(
    "text,line",
    [
        ("nodes 1 cells 0 facets 0 kind hex\n0 0 0\n", 1),
        ("nodes 2 cells 0 facets 0 kind tet\n0 0 0\n", 3),
        ("nodes 1 cells 0 facets 0 kind tet\n0 0 zero\n", 2),
        ("garbage\n", 1),
        ("nodes 1 cells 0 facets 0 kind tet\n0 0 0\n1 1 1\n", 3),
    ],
)
def test_ascii_parse_errors_carry_line_numbers(tmp_path, text, line):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(ParseError) as err:
        import_ascii_mesh(path)
    assert err.value.line == line
    assert str(path) in str(err.value)


def test_missing_mesh_file(tmp_path):
    with pytest.raises(ParseError):
        import_ascii_mesh(tmp_path / "nope.txt")


def test_mesh_arrays_read_only(tet4):
    with pytest.raises(ValueError):
        tet4.nodes[0, 0] = 3.0
