"""Uniform-grid cell index, segment clipping and point location."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .errors import SegmentOutsideMesh
from .geometry import Segment
from .mesh import TET, Mesh

_INSIDE_TOL = 1e-12


def cell_affine(mesh: Mesh, cells=None) -> tuple[np.ndarray, np.ndarray]:
    """Affine maps ``x -> A x + c`` whose components are all >= 0 inside a cell.

    Tets yield the 4 barycentric coordinates (node order).  Prisms yield the 3
    triangle barycentrics in the xy-plane followed by zeta and 1 - zeta, zeta
    the normalized height.
    """
    cells = mesh.cells if cells is None else mesh.cells[cells]
    X = mesh.nodes[cells]
    if mesh.kind == TET:
        J = np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))
        Jinv = np.linalg.inv(J)  # rows: grad lambda_1..3
        c123 = -np.einsum("mij,mj->mi", Jinv, X[:, 0, :])
        A = np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)
        c = np.concatenate([1.0 - c123.sum(axis=1, keepdims=True), c123], axis=1)
        return A, c
    P = X[:, :3, :2]
    J = np.transpose(P[:, 1:, :] - P[:, :1, :], (0, 2, 1))
    Jinv = np.linalg.inv(J)
    c12 = -np.einsum("mij,mj->mi", Jinv, P[:, 0, :])
    A2 = np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)  # (M,3,2)
    c2 = np.concatenate([1.0 - c12.sum(axis=1, keepdims=True), c12], axis=1)
    z0 = X[:, 0, 2]
    dz = X[:, 3, 2] - z0
    M = len(cells)
    A = np.zeros((M, 5, 3))
    A[:, :3, :2] = A2
    A[:, 3, 2] = 1.0 / dz
    A[:, 4, 2] = -1.0 / dz
    c = np.empty((M, 5))
    c[:, :3] = c2
    c[:, 3] = -z0 / dz
    c[:, 4] = 1.0 + z0 / dz
    return A, c


class CellIndex:
    """Uniform grid of bins over cell bounding boxes; built once, read-only."""

    def __init__(self, mesh: Mesh):
        X = mesh.nodes[mesh.cells]
        lo = X.min(axis=1)
        hi = X.max(axis=1)
        self.lo = mesh.nodes.min(axis=0)
        span = np.maximum(mesh.nodes.max(axis=0) - self.lo, 1e-300)
        ext = np.maximum(np.median(hi - lo, axis=0), span * 1e-9)
        # bins at least as large as a typical cell, capped near one cell per bin
        nb = np.maximum(1, np.floor(span / ext)).astype(np.int64)
        while np.prod(nb) > max(8, mesh.n_cells):
            nb = np.maximum(1, nb // 2)
        self.nb = nb
        self.size = span / nb
        b0 = self._bin(lo)
        b1 = self._bin(hi)
        cells, bins = [], []
        rng = (b1 - b0).max(axis=0)
        for dx in range(rng[0] + 1):
            for dy in range(rng[1] + 1):
                for dz in range(rng[2] + 1):
                    b = b0 + np.array([dx, dy, dz])
                    ok = np.all(b <= b1, axis=1)
                    cells.append(np.flatnonzero(ok))
                    bins.append(self._flat(b[ok]))
        cells = np.concatenate(cells)
        bins = np.concatenate(bins)
        order = np.lexsort((cells, bins))
        self.cells = cells[order]
        self.offsets = np.searchsorted(bins[order], np.arange(np.prod(nb) + 1))

    def _bin(self, x) -> np.ndarray:
        b = np.floor((np.asarray(x) - self.lo) / self.size).astype(np.int64)
        return np.clip(b, 0, self.nb - 1)

    def _flat(self, b) -> np.ndarray:
        return b[..., 0] + self.nb[0] * (b[..., 1] + self.nb[1] * b[..., 2])

    def cells_in_box(self, lo, hi) -> np.ndarray:
        b0 = self._bin(lo)
        b1 = self._bin(hi)
        grids = np.meshgrid(*[np.arange(b0[d], b1[d] + 1) for d in range(3)], indexing="ij")
        flat = self._flat(np.stack([g.ravel() for g in grids], axis=1))
        parts = [self.cells[self.offsets[f] : self.offsets[f + 1]] for f in flat]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, np.int64)

    def cells_near_segment(self, a, b, pad: float) -> np.ndarray:
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        n = int(np.ceil(np.max(np.abs(b - a) / self.size) * 2)) + 1
        ts = np.linspace(0.0, 1.0, n + 1)
        pts = a + ts[:, None] * (b - a)
        found = []
        for p, q in zip(pts[:-1], pts[1:]):
            found.append(self.cells_in_box(np.minimum(p, q) - pad, np.maximum(p, q) + pad))
        return np.unique(np.concatenate(found))

    def candidate_cells(self, x) -> list[np.ndarray]:
        flat = self._flat(self._bin(x))
        return [self.cells[self.offsets[f] : self.offsets[f + 1]] for f in np.atleast_1d(flat)]


_INDEX_CACHE: "weakref.WeakKeyDictionary[Mesh, CellIndex]" = weakref.WeakKeyDictionary()


def cell_index(mesh: Mesh) -> CellIndex:
    idx = _INDEX_CACHE.get(mesh)
    if idx is None:
        idx = CellIndex(mesh)
        _INDEX_CACHE[mesh] = idx
    return idx


@dataclass(frozen=True)
class SubSegment:
    cell: int
    t0: float
    t1: float

    @property
    def length(self) -> float:
        return self.t1 - self.t0


def _clip_intervals(mesh: Mesh, seg: Segment, cells: np.ndarray):
    """Exact parameter intervals plus tolerance-widened ones used for membership."""
    A, c = cell_affine(mesh, cells)
    alpha = np.einsum("mkj,j->mk", A, seg.a) + c
    beta = np.einsum("mkj,j->mk", A, seg.tau)
    out = []
    for tol in (0.0, _INSIDE_TOL):
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = (-tol - alpha) / beta
        lower = np.where(beta > 0, bound, -np.inf).max(axis=1)
        upper = np.where(beta < 0, bound, np.inf).min(axis=1)
        flat_ok = np.all((beta != 0) | (alpha >= -tol), axis=1)
        out.append((np.maximum(lower, 0.0), np.minimum(upper, seg.L), flat_ok))
    (e0, e1, _), (w0, w1, ok) = out
    keep = ok & (w1 > w0)
    return cells[keep], e0[keep], e1[keep], w0[keep], w1[keep]


def clip_segment(mesh: Mesh, seg: Segment) -> list[SubSegment]:
    """Split a segment into per-cell pieces, sorted by start parameter.

    A piece lying on a facet shared by several cells goes to the lowest cell id.
    """
    idx = cell_index(mesh)
    pad = 1e-9 * float(np.linalg.norm(idx.size))
    cand = idx.cells_near_segment(seg.a, seg.b, pad)
    cells, e0, e1, t0, t1 = _clip_intervals(mesh, seg, cand)
    drop = 1e-12 * seg.L
    ends = np.concatenate([[0.0, seg.L], e0, e1])
    ends = np.sort(ends[(ends >= 0) & (ends <= seg.L)])
    brk = [ends[0]]
    for e in ends[1:]:
        if e - brk[-1] > drop:
            brk.append(e)
    if seg.L - brk[-1] <= drop:
        brk[-1] = seg.L
    else:
        brk.append(seg.L)
    brk = np.array(brk)
    mids = 0.5 * (brk[:-1] + brk[1:])
    gap = 0.0
    pieces: list[SubSegment] = []
    order = np.argsort(cells, kind="stable")
    cells, t0, t1 = cells[order], t0[order], t1[order]
    for m, lo, hi in zip(mids, brk[:-1], brk[1:]):
        hit = np.flatnonzero((t0 <= m) & (m <= t1))
        if len(hit) == 0:
            gap += hi - lo
            continue
        cell = int(cells[hit[0]])
        if pieces and pieces[-1].cell == cell and pieces[-1].t1 == lo:
            pieces[-1] = SubSegment(cell, pieces[-1].t0, float(hi))
        else:
            pieces.append(SubSegment(cell, float(lo), float(hi)))
    if gap > 1e-9 * seg.L:
        raise SegmentOutsideMesh(f"{seg!r} leaves the mesh (uncovered length {gap:.3e})")
    return pieces


def locate_points(mesh: Mesh, x) -> np.ndarray:
    """Cell id containing each point (lowest id on shared facets); -1 outside."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    idx = cell_index(mesh)
    out = np.full(len(x), -1, dtype=np.int64)
    tol = 1e-10
    flat = idx._flat(idx._bin(x))
    # group points by bin so each bin's cells are tested once
    order = np.argsort(flat, kind="stable")
    uniq, starts = np.unique(flat[order], return_index=True)
    bounds = np.append(starts, len(order))
    for k, f in enumerate(uniq):
        pts_i = order[bounds[k] : bounds[k + 1]]
        cand = idx.cells[idx.offsets[f] : idx.offsets[f + 1]]
        out[pts_i] = _first_containing(mesh, cand, x[pts_i], tol)
    missing = np.flatnonzero(out < 0)
    if len(missing):
        # points on bin borders: widen the search
        for i in missing:
            cand = idx.cells_in_box(x[i] - idx.size * 0.5, x[i] + idx.size * 0.5)
            out[i] = _first_containing(mesh, cand, x[i : i + 1], tol)[0]
    return out


def _first_containing(mesh, cand, pts, tol) -> np.ndarray:
    if len(cand) == 0:
        return np.full(len(pts), -1, dtype=np.int64)
    A, c = cell_affine(mesh, cand)
    lam = np.einsum("mkj,pj->pmk", A, pts) + c[None]
    inside = np.all(lam >= -tol, axis=2)
    first = np.argmax(inside, axis=1)
    return np.where(inside.any(axis=1), cand[first], -1)
