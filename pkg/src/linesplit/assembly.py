"""P1 Galerkin assembly on tetrahedra and on right prisms.

The prism space is the tensor product of linear triangle functions with
linear functions in z, so every prism has 6 vertex dofs
``lambda_i(x, y) * (1 - zeta)`` (bottom) and ``lambda_i(x, y) * zeta`` (top).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCell, NonFiniteEvaluation
from .geometry import LineNetwork
from .mesh import PRISM, TET, Mesh
from .parallel import map_chunks
from .quadrature import QuadratureSpec, gauss_interval, prism_rule, quad_rule, tet_rule, triangle_rule
from .solver import CsrMatrix
from .spatial import cell_affine, clip_segment, locate_points


@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: Mesh

    @property
    def ndofs(self) -> int:
        return self.mesh.n_nodes

    @property
    def kind(self) -> str:
        return self.mesh.kind

    def interpolate(self, fn) -> "FeFunction":
        return FeFunction(self, np.asarray(fn(self.mesh.nodes), dtype=float))


@dataclass(frozen=True, eq=False)
class FeFunction:
    space: FeSpace
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.space.ndofs,):
            raise ValueError(f"expected {self.space.ndofs} nodal values, got {self.values.shape}")

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)[0]

    def evaluate(self, x):
        """Values and gradients at arbitrary points (NaN outside the mesh)."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        mesh = self.space.mesh
        cells = locate_points(mesh, flat)
        val = np.full(len(flat), np.nan)
        grad = np.full((len(flat), 3), np.nan)
        ok = cells >= 0
        if ok.any():
            phi, dphi = basis_physical(mesh, cells[ok], flat[ok][:, None, :])
            coef = self.values[mesh.cells[cells[ok]]]
            val[ok] = np.einsum("mqk,mk->m", phi, coef)
            grad[ok] = np.einsum("mqkd,mk->md", dphi, coef)
        return val.reshape(x.shape[:-1]), grad.reshape(x.shape)


# ----------------------------------------------------------------------------- basis


def basis_physical(mesh: Mesh, cells: np.ndarray, x: np.ndarray):
    """Basis values (m, q, k) and gradients (m, q, k, 3) at points x (m, q, 3)."""
    A, c = cell_affine(mesh, cells)
    lam = np.einsum("mkj,mqj->mqk", A, x) + c[:, None, :]
    if mesh.kind == TET:
        dphi = np.broadcast_to(A[:, None, :, :], lam.shape + (3,))
        return lam, dphi
    tri = lam[..., :3]
    zeta = lam[..., 3]
    dl = A[:, None, :3, :]
    dz = A[:, None, 3, :]
    phi = np.concatenate([tri * (1 - zeta)[..., None], tri * zeta[..., None]], axis=-1)
    lo = dl * (1 - zeta)[..., None, None] - tri[..., None] * dz[:, :, None, :]
    hi = dl * zeta[..., None, None] + tri[..., None] * dz[:, :, None, :]
    return phi, np.concatenate([lo, hi], axis=2)


class CellQuadrature:
    """Reference-cell quadrature mapped to a contiguous range of cells."""

    def __init__(self, mesh: Mesh, lo: int, hi: int, degree: int, z_points: int | None = None):
        self.mesh = mesh
        self.cells = np.arange(lo, hi)
        X = mesh.nodes[mesh.cells[lo:hi]]
        if mesh.kind == TET:
            ref, w = tet_rule(degree)
            J = np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))
            det = np.linalg.det(J)
            self.x = X[:, None, 0, :] + np.einsum("mij,qj->mqi", J, ref)
            self.phi = np.column_stack([1.0 - ref.sum(axis=1), ref])
        else:
            ref, w = prism_rule(degree, z_points)
            P = X[:, :3, :2]
            J2 = np.transpose(P[:, 1:, :] - P[:, :1, :], (0, 2, 1))
            z0 = X[:, 0, 2]
            dz = X[:, 3, 2] - z0
            det = np.linalg.det(J2) * dz
            xy = P[:, None, 0, :] + np.einsum("mij,qj->mqi", J2, ref[:, :2])
            z = z0[:, None] + dz[:, None] * ref[None, :, 2]
            self.x = np.concatenate([xy, z[..., None]], axis=-1)
            lam = np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])
            zeta = ref[:, 2]
            self.phi = np.concatenate([lam * (1 - zeta)[:, None], lam * zeta[:, None]], axis=1)
            self._lam, self._zeta = lam, zeta
        bad = np.flatnonzero(np.abs(det) < 1e-14)
        if len(bad):
            raise DegenerateCell(f"cell {lo + int(bad[0])} has |det J| = {abs(det[bad[0]]):.3e}")
        self.wdet = np.abs(det)[:, None] * w[None, :]

    def fe_values(self, coef: np.ndarray) -> np.ndarray:
        """Values (m, q) of P1 fields with per-cell nodal coefficients (m, k)."""
        return coef @ self.phi.T

    def fe_grads(self, coef: np.ndarray) -> np.ndarray:
        """Gradients (m, q, 3) of P1 fields, without forming every basis gradient."""
        A, _ = cell_affine(self.mesh, self.cells)
        q = self.x.shape[1]
        if self.mesh.kind == TET:
            g = np.einsum("mkd,mk->md", A, coef)
            return np.broadcast_to(g[:, None, :], (len(self.cells), q, 3))
        bot, top = coef[:, :3], coef[:, 3:]
        zeta = self._zeta
        mixed = bot[:, None, :] * (1 - zeta)[None, :, None] + top[:, None, :] * zeta[None, :, None]
        out = np.empty((len(self.cells), q, 3))
        out[..., :2] = np.einsum("mqk,mkd->mqd", mixed, A[:, :3, :2])
        out[..., 2] = ((top - bot) @ self._lam.T) * A[:, 3, 2][:, None]
        return out

    def grads(self) -> np.ndarray:
        """Basis gradients (m, q, k, 3)."""
        A, _ = cell_affine(self.mesh, self.cells)
        q = self.x.shape[1]
        if self.mesh.kind == TET:
            return np.broadcast_to(A[:, None, :, :], (len(self.cells), q, 4, 3))
        lam, zeta = self._lam, self._zeta
        dl = A[:, None, :3, :]
        dz = A[:, None, None, 3, :]
        lo = dl * (1 - zeta)[None, :, None, None] - lam[None, :, :, None] * dz
        hi = dl * zeta[None, :, None, None] + lam[None, :, :, None] * dz
        return np.concatenate([lo, hi], axis=2)


def _scatter_matrix(mesh: Mesh, lo: int, hi: int, K: np.ndarray) -> CsrMatrix:
    conn = mesh.cells[lo:hi]
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    return CsrMatrix.from_coo(rows, cols, K.ravel(), mesh.n_nodes)


def _sum_matrices(parts: list[CsrMatrix], n: int) -> CsrMatrix:
    if not parts:
        return CsrMatrix.from_coo([], [], [], n)
    total = parts[0].to_scipy()
    for p in parts[1:]:
        total = total + p.to_scipy()
    return CsrMatrix.from_scipy(total)


def assemble_stiffness(space: FeSpace, quad: QuadratureSpec = QuadratureSpec(), threads: int = 1) -> CsrMatrix:
    """(grad u, grad v) over the mesh.

    Tets use the constant-gradient formula; prisms the 3-point triangle x
    2-point Gauss rule, exact for the product-linear basis.
    """
    mesh = space.mesh

    def chunk(lo, hi):
        if mesh.kind == TET:
            X = mesh.nodes[mesh.cells[lo:hi]]
            vol = np.linalg.det(X[:, 1:, :] - X[:, :1, :]) / 6.0
            bad = np.flatnonzero(np.abs(6.0 * vol) < 1e-14)
            if len(bad):
                raise DegenerateCell(f"cell {lo + int(bad[0])} is degenerate")
            A, _ = cell_affine(mesh, np.arange(lo, hi))
            K = np.abs(vol)[:, None, None] * np.einsum("mid,mjd->mij", A, A)
        else:
            cq = CellQuadrature(mesh, lo, hi, 2, 2)
            g = cq.grads()
            K = np.einsum("mq,mqid,mqjd->mij", cq.wdet, g, g)
        K = 0.5 * (K + np.transpose(K, (0, 2, 1)))
        return _scatter_matrix(mesh, lo, hi, K)

    parts = map_chunks(chunk, mesh.n_cells, threads)
    return _sum_matrices(parts, mesh.n_nodes)


def assemble_mass(space: FeSpace, threads: int = 1) -> CsrMatrix:
    mesh = space.mesh

    def chunk(lo, hi):
        cq = CellQuadrature(mesh, lo, hi, 2)
        K = np.einsum("mq,qi,qj->mij", cq.wdet, cq.phi, cq.phi)
        return _scatter_matrix(mesh, lo, hi, K)

    return _sum_matrices(map_chunks(chunk, mesh.n_cells, threads), mesh.n_nodes)


def assemble_line_rhs(space: FeSpace, network: LineNetwork, quad: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """b_i = sum over segments of int f(t) phi_i(x(t)) dt, per clipped piece."""
    mesh = space.mesh
    b = np.zeros(space.ndofs)
    gp, gw = gauss_interval(quad.line_points)
    for seg, prof in zip(network.segments, network.intensities):
        pieces = clip_segment(mesh, seg)
        if not pieces:
            continue
        cells = np.array([p.cell for p in pieces])
        t0 = np.array([p.t0 for p in pieces])
        dt = np.array([p.t1 - p.t0 for p in pieces])
        t = t0[:, None] + dt[:, None] * gp[None, :]
        w = dt[:, None] * gw[None, :] * prof(t)
        phi, _ = basis_physical(mesh, cells, seg.point_at(t))
        contrib = np.einsum("mq,mqk->mk", w, phi)
        b += np.bincount(mesh.cells[cells].ravel(), weights=contrib.ravel(), minlength=space.ndofs)
    return b


def assemble_volume_rhs(space: FeSpace, F, quad: QuadratureSpec = QuadratureSpec(), threads: int = 1,
                        stats: dict | None = None) -> np.ndarray:
    """(F, v) by degree-``quad.volume_degree`` quadrature on every cell.

    ``F`` maps points (..., 3) to values.  If it exposes ``count_clamped``
    the number of clamped kernel evaluations is added to ``stats``.
    """
    mesh = space.mesh
    counter = getattr(F, "count_clamped", None)

    def chunk(lo, hi):
        cq = CellQuadrature(mesh, lo, hi, quad.volume_degree)
        vals = np.asarray(F(cq.x), dtype=float)
        if not np.all(np.isfinite(vals)):
            m, q = np.argwhere(~np.isfinite(vals))[0]
            raise NonFiniteEvaluation(
                f"right-hand side is not finite in cell {lo + m} at {cq.x[m, q].tolist()}",
                location=cq.x[m, q], cell=lo + int(m),
            )
        contrib = np.einsum("mq,mq,qk->mk", cq.wdet, vals, cq.phi)
        n_clamped = counter(cq.x) if counter is not None else 0
        return np.bincount(mesh.cells[lo:hi].ravel(), weights=contrib.ravel(), minlength=space.ndofs), n_clamped

    b = np.zeros(space.ndofs)
    clamped = 0
    for part, nc in map_chunks(chunk, mesh.n_cells, threads):
        b += part
        clamped += nc
    if stats is not None:
        stats["clamped"] = stats.get("clamped", 0) + clamped
    return b


# ----------------------------------------------------------------------------- facets


def facet_quadrature(mesh: Mesh, facets: np.ndarray, degree: int):
    """Physical points (m, q, 3), weights (m, q) and outward unit normals (m, 3)."""
    fn = mesh.facet_nodes[facets]
    is_tri = fn[:, 3] < 0
    P = mesh.nodes[np.maximum(fn, 0)]
    centroid = mesh.nodes[mesh.cells[mesh.facet_cells[facets]]].mean(axis=1)
    tp, tw = triangle_rule(degree)
    qp, qw = quad_rule(degree)
    nq = max(len(tw), len(qw))
    x = np.zeros((len(fn), nq, 3))
    w = np.zeros((len(fn), nq))
    normal = np.zeros((len(fn), 3))
    if is_tri.any():
        T = P[is_tri, :3]
        e1 = T[:, 1] - T[:, 0]
        e2 = T[:, 2] - T[:, 0]
        cr = np.cross(e1, e2)
        area2 = np.linalg.norm(cr, axis=1)
        x[is_tri, : len(tw)] = T[:, None, 0] + tp[None, :, :1] * e1[:, None] + tp[None, :, 1:] * e2[:, None]
        w[is_tri, : len(tw)] = area2[:, None] * tw[None, :]
        normal[is_tri] = cr / area2[:, None]
    isq = ~is_tri
    if isq.any():
        Q = P[isq]
        xi, eta = qp[:, 0], qp[:, 1]
        N = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
        dxi = np.stack([-(1 - eta), (1 - eta), eta, -eta], axis=1)
        deta = np.stack([-(1 - xi), -xi, xi, (1 - xi)], axis=1)
        x[isq, : len(qw)] = np.einsum("qa,mad->mqd", N, Q)
        cr = np.cross(np.einsum("qa,mad->mqd", dxi, Q), np.einsum("qa,mad->mqd", deta, Q))
        jac = np.linalg.norm(cr, axis=2)
        w[isq, : len(qw)] = jac * qw[None, :]
        normal[isq] = cr[:, 0] / jac[:, :1]
    # unused slots of triangle facets sit on a valid point with zero weight
    pad = w == 0.0
    x[pad] = np.broadcast_to(x[:, :1, :], x.shape)[pad]
    out = np.einsum("md,md->m", normal, P[:, 0] - centroid)
    normal *= np.where(out < 0, -1.0, 1.0)[:, None]
    return x, w, normal


def assemble_neumann_rhs(space: FeSpace, g, tags, quad: QuadratureSpec = QuadratureSpec(), b=None,
                         facets=None) -> np.ndarray:
    """Add int_facet g(x, n) phi_i dS over facets with the given tags.

    ``g`` is called with points (m, q, 3) and outward normals (m, q, 3); a
    plain number is accepted as a constant flux.  An explicit ``facets``
    index array overrides ``tags``.
    """
    mesh = space.mesh
    b = np.zeros(space.ndofs) if b is None else np.array(b, dtype=float)
    if facets is None:
        facets = np.flatnonzero(np.isin(mesh.facet_tags, list(tags)))
    facets = np.asarray(facets, dtype=np.int64)
    if len(facets) == 0:
        return b
    x, w, n = facet_quadrature(mesh, facets, quad.facet_degree)
    nn = np.broadcast_to(n[:, None, :], x.shape)
    vals = np.full(w.shape, float(g)) if np.isscalar(g) else np.asarray(g(x, nn), dtype=float)
    cells = mesh.facet_cells[facets]
    phi, _ = basis_physical(mesh, cells, x)
    contrib = np.einsum("mq,mq,mqk->mk", w, vals, phi)
    b += np.bincount(mesh.cells[cells].ravel(), weights=contrib.ravel(), minlength=space.ndofs)
    return b


# ----------------------------------------------------------------------------- Dirichlet


def dirichlet_dofs(space: FeSpace, tags=None) -> np.ndarray:
    return space.mesh.boundary_nodes(tags)


def apply_dirichlet(A: CsrMatrix, b, space: FeSpace, uD, tags=None, dofs=None):
    """Symmetric elimination of boundary values.

    Returns ``(A', b', dofs)``: constrained rows and columns of ``A`` are
    zeroed with a unit diagonal, ``b`` is lifted by the known values.
    ``uD`` is a callable on node coordinates or an array over ``dofs``.
    """
    if dofs is None:
        dofs = dirichlet_dofs(space, tags)
    if callable(uD):
        g_vals = np.asarray(uD(space.mesh.nodes[dofs]), dtype=float)
    else:
        g_vals = np.broadcast_to(np.asarray(uD, dtype=float), dofs.shape)
    g = np.zeros(space.ndofs)
    g[dofs] = g_vals
    b2 = np.asarray(b, dtype=float) - A.matvec(g)
    b2[dofs] = g_vals
    A2 = eliminate_rows_cols(A, dofs)
    return A2, b2, dofs


def eliminate_rows_cols(A: CsrMatrix, dofs: np.ndarray) -> CsrMatrix:
    free = np.ones(A.n, dtype=bool)
    free[dofs] = False
    rows = A.row_ids()
    keep = free[rows] & free[A.indices]
    data = np.where(keep, A.data, 0.0)
    diag = (rows == A.indices) & ~free[rows]
    data[diag] = 1.0
    out = CsrMatrix(A.indptr, A.indices, data, A.n)
    if not np.all(np.isin(dofs, rows[diag])):
        # a constrained dof without stored diagonal: add it
        eye = CsrMatrix.from_coo(dofs, dofs, np.ones(len(dofs)), A.n)
        out = CsrMatrix.from_scipy(out.to_scipy().maximum(eye.to_scipy()))
    return out
