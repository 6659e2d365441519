"""Structured box meshes of tetrahedra or right prisms, plus ASCII I/O.

Boundary facets are tagged by box face: 0..5 for -x, +x, -y, +y, -z, +z.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InvalidCell, ParseError
from .fileio import atomic_write_text

TET = "tet"
PRISM = "prism"
NODES_PER_CELL = {TET: 4, PRISM: 6}

# local faces; triangles padded with -1
_TET_FACES = np.array([[1, 2, 3, -1], [0, 2, 3, -1], [0, 1, 3, -1], [0, 1, 2, -1]])
_PRISM_FACES = np.array([[0, 1, 2, -1], [3, 4, 5, -1], [0, 1, 4, 3], [1, 2, 5, 4], [2, 0, 3, 5]])


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float] = (0.0, 0.0, 0.0)
    hi: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if not all(h > l for l, h in zip(lo, hi)):
            raise ValueError(f"degenerate box {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))


UNIT_BOX = Box()


@dataclass(frozen=True)
class MeshParams:
    """``n_perp`` subdivisions along x and y, ``n_par`` along z."""

    n_perp: int
    n_par: int
    bounds: Box = UNIT_BOX

    def __post_init__(self):
        if self.n_perp < 1 or self.n_par < 1:
            raise ValueError("n_perp and n_par must be >= 1")

    @classmethod
    def from_h(cls, h_perp, h_par, bounds: Box = UNIT_BOX) -> "MeshParams":
        """Subdivision counts from mesh sizes given as fractions of the unit length."""
        return cls(_count(h_perp), _count(h_par), bounds)


def _count(h) -> int:
    n = 1 / Fraction(h).limit_denominator(1 << 20)
    if n.denominator != 1:
        raise ValueError(f"1/h must be an integer, got h={h}")
    return int(n)


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    cells: np.ndarray
    kind: str
    facet_nodes: np.ndarray
    facet_tags: np.ndarray
    facet_cells: np.ndarray
    uniform_kind: bool = field(default=True)

    def __post_init__(self):
        for name in ("nodes", "cells", "facet_nodes", "facet_tags", "facet_cells"):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_facets(self) -> int:
        return len(self.facet_tags)

    def cell_volumes(self) -> np.ndarray:
        X = self.nodes[self.cells]
        if self.kind == TET:
            return _tet_signed_volumes(X)
        area = _tri_signed_areas(X[:, :3, :2])
        return area * (X[:, 3, 2] - X[:, 0, 2])

    def bounding_box(self) -> Box:
        return Box(tuple(self.nodes.min(axis=0)), tuple(self.nodes.max(axis=0)))

    def boundary_nodes(self, tags=None) -> np.ndarray:
        sel = np.ones(self.n_facets, dtype=bool) if tags is None else np.isin(self.facet_tags, list(tags))
        ids = self.facet_nodes[sel].ravel()
        return np.unique(ids[ids >= 0])

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "nodes": self.n_nodes,
            "cells": self.n_cells,
            "facets": self.n_facets,
            "volume": float(self.cell_volumes().sum()),
        }


def _tet_signed_volumes(X: np.ndarray) -> np.ndarray:
    d = X[:, 1:, :] - X[:, :1, :]
    return np.linalg.det(d) / 6.0


def _tri_signed_areas(P: np.ndarray) -> np.ndarray:
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _grid_nodes(box: Box, nx: int, ny: int, nz: int) -> np.ndarray:
    # index * h, never cumulative sums
    axes = [
        box.lo[d] + (box.hi[d] - box.lo[d]) * np.arange(n + 1) / n
        for d, n in enumerate((nx, ny, nz))
    ]
    Z, Y, X = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


def _node_id(i, j, k, nx, ny):
    return i + (nx + 1) * (j + (ny + 1) * k)


def _kuhn_local() -> np.ndarray:
    tets = []
    corner = lambda bits: bits[0] + 2 * bits[1] + 4 * bits[2]
    for perm in itertools.permutations(range(3)):
        v = [0, 0, 0]
        path = [corner(v)]
        for axis in perm:
            v[axis] = 1
            path.append(corner(v))
        P = np.array([[(c >> b) & 1 for b in range(3)] for c in path], dtype=float)
        if np.linalg.det(P[1:] - P[0]) < 0:
            path[2], path[3] = path[3], path[2]
        tets.append(path)
    return np.array(tets)


def build_box_tet(params: MeshParams) -> Mesh:
    """Each grid cube split into 6 tetrahedra around its main diagonal."""
    nx = ny = params.n_perp
    nz = params.n_par
    nodes = _grid_nodes(params.bounds, nx, ny, nz)
    K, J, I = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    corners = np.stack(
        [_node_id(I + (c & 1), J + ((c >> 1) & 1), K + ((c >> 2) & 1), nx, ny) for c in range(8)], axis=1
    )
    local = _kuhn_local()
    cells = corners[:, local].reshape(-1, 4)
    return _finish(nodes, cells, TET, params.bounds)


def build_box_prism(params: MeshParams) -> Mesh:
    """Each grid square split along its lower-left to upper-right diagonal, extruded in z."""
    nx = ny = params.n_perp
    nz = params.n_par
    nodes = _grid_nodes(params.bounds, nx, ny, nz)
    K, J, I = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    n00 = _node_id(I, J, K, nx, ny)
    n10 = _node_id(I + 1, J, K, nx, ny)
    n11 = _node_id(I + 1, J + 1, K, nx, ny)
    n01 = _node_id(I, J + 1, K, nx, ny)
    up = (nx + 1) * (ny + 1)
    t1 = np.stack([n00, n10, n11], axis=1)
    t2 = np.stack([n00, n11, n01], axis=1)
    tri = np.stack([t1, t2], axis=1).reshape(-1, 3)
    cells = np.concatenate([tri, tri + up], axis=1)
    return _finish(nodes, cells, PRISM, params.bounds)


def _finish(nodes, cells, kind, box: Box | None, facet_tags_given=None) -> Mesh:
    nodes = np.ascontiguousarray(nodes, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    fn, fc = find_boundary_facets(cells, kind, len(nodes))
    if facet_tags_given is None:
        tags = tag_box_facets(nodes, fn, box if box is not None else _bbox(nodes))
    else:
        tags = facet_tags_given(fn)
    return Mesh(nodes, cells, kind, fn, tags, fc)


def _bbox(nodes) -> Box:
    return Box(tuple(nodes.min(axis=0)), tuple(nodes.max(axis=0)))


def _face_keys(cells: np.ndarray, kind: str, n_nodes: int):
    local = _TET_FACES if kind == TET else _PRISM_FACES
    nf = len(local)
    faces = np.where(local[None, :, :] >= 0, cells[:, np.maximum(local, 0)], -1)  # (M, nf, 4)
    faces = faces.reshape(-1, 4)
    srt = np.sort(np.where(faces < 0, np.iinfo(np.int64).max, faces), axis=1)
    # three smallest ids identify a planar face in a conforming mesh
    n = np.int64(n_nodes)
    keys = (srt[:, 0] * n + srt[:, 1]) * n + srt[:, 2]
    owner = np.repeat(np.arange(len(cells)), nf)
    return faces, keys, owner


def find_boundary_facets(cells: np.ndarray, kind: str, n_nodes: int):
    """Facets owned by exactly one cell: (node ids padded with -1, owning cell)."""
    faces, keys, owner = _face_keys(cells, kind, n_nodes)
    _, first, counts = np.unique(keys, return_index=True, return_counts=True)
    sel = np.sort(first[counts == 1])
    return faces[sel], owner[sel]


def facet_multiplicity(mesh: Mesh) -> np.ndarray:
    """Number of cells sharing each distinct facet."""
    _, keys, _ = _face_keys(mesh.cells, mesh.kind, mesh.n_nodes)
    return np.unique(keys, return_counts=True)[1]


def tag_box_facets(nodes, facet_nodes, box: Box, rtol: float = 1e-10) -> np.ndarray:
    tol = rtol * box.diameter
    tags = np.full(len(facet_nodes), -1, dtype=np.int64)
    valid = facet_nodes >= 0
    X = nodes[np.maximum(facet_nodes, 0)]
    for axis in range(3):
        for side, val in enumerate((box.lo[axis], box.hi[axis])):
            on = np.all((np.abs(X[..., axis] - val) < tol) | ~valid, axis=1)
            tags[on & (tags < 0)] = 2 * axis + side
    return tags


def validate_mesh(mesh: Mesh) -> None:
    m = mesh
    if m.cells.min(initial=0) < 0 or m.cells.max(initial=0) >= m.n_nodes:
        raise InvalidCell("cell references a node index out of range")
    vols = m.cell_volumes()
    bad = np.flatnonzero(~(vols > 0))
    if len(bad):
        raise InvalidCell(f"cell {int(bad[0])} has non-positive volume {vols[bad[0]]:.3e}")
    if m.kind == PRISM:
        X = m.nodes[m.cells]
        scale = float(np.abs(m.nodes).max()) or 1.0
        if not np.allclose(X[:, :3, :2], X[:, 3:, :2], atol=1e-12 * scale, rtol=0):
            raise InvalidCell("prism top and bottom triangles are not vertically aligned")
        for half in (slice(0, 3), slice(3, 6)):
            zz = X[:, half, 2]
            if not np.allclose(zz, zz[:, :1], atol=1e-12 * scale, rtol=0):
                raise InvalidCell("prism triangles are not horizontal")


# ----------------------------------------------------------------------------- I/O


def export_ascii_mesh(mesh: Mesh, path) -> None:
    lines = [f"nodes {mesh.n_nodes} cells {mesh.n_cells} facets {mesh.n_facets} kind {mesh.kind}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.nodes.tolist()]
    lines += [" ".join(map(str, c)) for c in mesh.cells.tolist()]
    for tag, ids in zip(mesh.facet_tags.tolist(), mesh.facet_nodes.tolist()):
        lines.append(" ".join(map(str, [tag] + [i for i in ids if i >= 0])))
    atomic_write_text(path, "\n".join(lines) + "\n")


def import_ascii_mesh(path) -> Mesh:
    """Read the node/cell/facet ASCII format; see README for the layout."""
    path = Path(path)
    try:
        raw = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read mesh file: {exc}", path) from exc
    rows = []
    for no, line in enumerate(raw, start=1):
        body = line.split("#", 1)[0].split()
        if body:
            rows.append((no, body))
    if not rows:
        raise ParseError("empty mesh file", path, 1)
    no, head = rows[0]
    try:
        if len(head) != 8 or head[0] != "nodes" or head[2] != "cells" or head[4] != "facets" or head[6] != "kind":
            raise ValueError
        n, m, k, kind = int(head[1]), int(head[3]), int(head[5]), head[7]
    except ValueError:
        raise ParseError("bad header, expected 'nodes N cells M facets K kind {tet|prism}'", path, no) from None
    if kind not in NODES_PER_CELL:
        raise ParseError(f"unknown cell kind {kind!r}", path, no)
    body = rows[1:]
    if len(body) < n + m + k:
        last = rows[-1][0]
        raise ParseError(f"truncated file: expected {n + m + k} data lines, found {len(body)}", path, last + 1)
    nodes = np.empty((n, 3))
    for i in range(n):
        no, vals = body[i]
        try:
            if len(vals) != 3:
                raise ValueError
            nodes[i] = [float(v) for v in vals]
        except ValueError:
            raise ParseError("node line needs 3 reals", path, no) from None
    npc = NODES_PER_CELL[kind]
    cells = np.empty((m, npc), dtype=np.int64)
    for i in range(m):
        no, vals = body[n + i]
        try:
            if len(vals) != npc:
                raise ValueError
            cells[i] = [int(v) for v in vals]
        except ValueError:
            raise ParseError(f"{kind} cell line needs {npc} integer node ids", path, no) from None
        if cells[i].min() < 0 or cells[i].max() >= n:
            raise ParseError("cell node id out of range", path, no)
    tagged = {}
    for i in range(k):
        no, vals = body[n + m + i]
        try:
            ids = [int(v) for v in vals]
            if len(ids) not in (4, 5):
                raise ValueError
        except ValueError:
            raise ParseError("facet line needs 'tag id id id [id]'", path, no) from None
        tagged[tuple(sorted(ids[1:])[:3])] = ids[0]
    if len(body) > n + m + k:
        raise ParseError("unexpected trailing data", path, body[n + m + k][0])

    probe = Mesh(nodes, cells, kind, np.zeros((0, 4), np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    validate_mesh(probe)

    def tags_from_file(fn):
        out = np.empty(len(fn), dtype=np.int64)
        for j, ids in enumerate(fn.tolist()):
            key = tuple(sorted(i for i in ids if i >= 0)[:3])
            out[j] = tagged.get(key, -1)
        return out

    return _finish(nodes, cells, kind, None, tags_from_file)
