"""End-to-end drivers: manufactured line-source problems and vascular networks.

Two discretizations are compared.  The standard method solves for u with
the line right-hand side directly; the split method solves for the smooth
correction w and reconstructs u from the closed-form singular part.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .analysis import (
    RateTable,
    RemovalCurve,
    SubdomainSpec,
    WeightedNormSpec,
    error_norms,
    heuristic_orderings,
    modelling_indicator,
    removal_study,
)
from .assembly import (
    FeFunction,
    FeSpace,
    apply_dirichlet,
    assemble_line_rhs,
    assemble_neumann_rhs,
    assemble_stiffness,
    assemble_volume_rhs,
    eliminate_rows_cols,
)
from .errors import ConfigError
from .fileio import atomic_write_text
from .geometry import Axis, IntensityProfile, LineNetwork, Segment
from .kernels import (
    DEFAULT,
    FOUR_PI,
    KernelConfig,
    correction_rhs,
    correction_rhs_infinite,
    count_clamped,
    grad_green_infinite_line,
    grad_singular_sum,
    green_infinite_line,
    singular_part,
    singular_sum,
)
from .mesh import PRISM, TET, UNIT_BOX, Box, Mesh, MeshParams, build_box_prism, build_box_tet
from .quadrature import QuadratureSpec
from .solver import SolveReport, SolverConfig, cg_solve

log = logging.getLogger(__name__)

STUDIES = ("smooth", "segment", "network")
METHODS = ("standard", "ssb", "both")
DEFAULT_OFFSET = (13 / 24, 11 / 24)
DEFAULT_FRACTIONS = tuple(round(0.1 * k, 10) for k in range(11))


@dataclass(frozen=True)
class StudyConfig:
    study: str = "smooth"
    offset: tuple[float, float] = DEFAULT_OFFSET
    element: str = PRISM
    h_perp: tuple[float, ...] = (1 / 4, 1 / 8)
    h_par: tuple[float, ...] = (1 / 16,)
    method: str = "both"
    exclusion_radius: float = 0.2
    solver: SolverConfig = SolverConfig()
    quad: QuadratureSpec = QuadratureSpec()
    kernel: KernelConfig = DEFAULT
    out_dir: str | None = None
    vtk: bool = False
    threads: int = 1
    alpha: float = 0.5
    box: Box = UNIT_BOX
    split_height: float | None = None
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.element not in (TET, PRISM):
            raise ConfigError(f"unknown element kind {self.element!r}")
        if not self.h_perp or not self.h_par:
            raise ConfigError("refinement lists must be nonempty")
        if any(not 0 < h <= 1 for h in (*self.h_perp, *self.h_par)):
            raise ConfigError("mesh sizes must lie in (0, 1]")
        x0, y0 = self.offset
        if not (0 < x0 < 1 and 0 < y0 < 1):
            raise ConfigError("line offset must be strictly interior")
        if self.exclusion_radius < 0:
            raise ConfigError("exclusion radius must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if any(not 0 <= f <= 1 for f in self.fractions):
            raise ConfigError("removal fractions must lie in [0, 1]")

    @property
    def methods(self) -> tuple[str, ...]:
        return ("standard", "ssb") if self.method == "both" else (self.method,)

    def levels(self):
        """(h_par, h_perp) pairs: outer loop over h_par, inner over h_perp."""
        return [(hz, hp) for hz in self.h_par for hp in self.h_perp]


# ----------------------------------------------------------------------------- manufactured solutions


@dataclass(frozen=True)
class ManufacturedSolution:
    """u = scale * (E(f) G + w) with closed-form u, w and their gradients."""

    name: str
    segment: Segment
    profile: IntensityProfile
    scale: float
    u: Callable
    grad_u: Callable
    w: Callable
    grad_w: Callable
    singular: Callable
    rhs: Callable
    exclusion: Segment | Axis

    def u_D(self, x):
        return self.u(x)

    def w_D(self, x):
        """Boundary data for w derived from u_D and the singular part."""
        return self.u(x) / self.scale - self.singular(x)

    def network(self) -> LineNetwork:
        return LineNetwork.from_segments([self.segment], [self.profile])

    def consistency_error(self, x) -> float:
        x = np.asarray(x, dtype=float)
        lhs = self.u(x)
        rhs = self.scale * (self.singular(x) + self.w(x))
        return float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))))


def smooth_solution(offset=DEFAULT_OFFSET, kernel: KernelConfig = DEFAULT) -> ManufacturedSolution:
    """Vertical line through the unit cube with f(z) = z^3.

    u = -(z^3 ln r + w) / (2 pi) with w = -1.5 z r^2 (ln r - 1), so that
    -Lap w = 6 z ln r.
    """
    x0, y0 = offset
    seg = Segment(np.array([x0, y0, 0.0]), np.array([x0, y0, 1.0]))
    axis = Axis(seg.a, seg.tau)
    prof = IntensityProfile(np.array([0.0, 0.0, 0.0, 1.0]))
    scale = -1.0 / (2.0 * math.pi)

    def lnr(x):
        return green_infinite_line(axis.point, axis.direction, x, kernel)

    def w(x):
        x = np.asarray(x, dtype=float)
        l = lnr(x)
        return -1.5 * x[..., 2] * np.exp(2 * l) * (l - 1.0)

    def grad_w(x):
        x = np.asarray(x, dtype=float)
        _, p = axis.offset(x)
        l = lnr(x)
        z = x[..., 2]
        g = (-1.5 * z * (2.0 * l - 1.0))[..., None] * p
        g[..., 2] = -1.5 * np.exp(2 * l) * (l - 1.0)
        return g

    def singular(x):
        x = np.asarray(x, dtype=float)
        return x[..., 2] ** 3 * lnr(x)

    def u(x):
        return scale * (singular(x) + w(x))

    def grad_u(x):
        x = np.asarray(x, dtype=float)
        z = x[..., 2]
        g = (z**3)[..., None] * grad_green_infinite_line(axis.point, axis.direction, x, kernel)
        g[..., 2] += 3 * z**2 * lnr(x)
        return scale * (g + grad_w(x))

    def rhs(x):
        return correction_rhs_infinite(prof, axis, x, kernel)

    return ManufacturedSolution("smooth", seg, prof, scale, u, grad_u, w, grad_w, singular, rhs, axis)


def segment_solution(offset=DEFAULT_OFFSET, z_range=(0.2, 0.8), kernel: KernelConfig = DEFAULT) -> ManufacturedSolution:
    """Interior vertical segment with E(f) = z and w = r_b - r_a."""
    x0, y0 = offset
    za, zb = z_range
    seg = Segment(np.array([x0, y0, za]), np.array([x0, y0, zb]))
    prof = IntensityProfile(np.array([za, 1.0]))
    net = LineNetwork.from_segments([seg], [prof])
    scale = 1.0 / FOUR_PI

    def w(x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - seg.b, axis=-1) - np.linalg.norm(x - seg.a, axis=-1)

    def grad_w(x):
        x = np.asarray(x, dtype=float)
        db = x - seg.b
        da = x - seg.a
        return db / np.linalg.norm(db, axis=-1)[..., None] - da / np.linalg.norm(da, axis=-1)[..., None]

    def singular(x):
        return singular_sum(net, x, kernel)

    def u(x):
        return scale * (singular(x) + w(x))

    def grad_u(x):
        return scale * (grad_singular_sum(net, x, kernel) + grad_w(x))

    def rhs(x):
        return correction_rhs(net, x, kernel)

    return ManufacturedSolution("segment", seg, prof, scale, u, grad_u, w, grad_w, singular, rhs, seg)


# ----------------------------------------------------------------------------- level pipeline


def build_mesh(element: str, h_perp: float, h_par: float, box: Box = UNIT_BOX) -> Mesh:
    params = MeshParams.from_h(h_perp, h_par, box)
    return build_box_tet(params) if element == TET else build_box_prism(params)


@dataclass
class LevelResult:
    h_par: float
    h_perp: float
    mesh: Mesh
    fields: dict[str, np.ndarray] = field(default_factory=dict)
    errors: dict[str, dict[str, float]] = field(default_factory=dict)
    reports: dict[str, SolveReport] = field(default_factory=dict)
    clamped: int = 0
    seconds: float = 0.0


@dataclass
class StudyResult:
    """Rate tables per method plus the cross-method table when both ran."""

    standard: RateTable | None
    ssb: RateTable | None
    cross: RateTable | None
    levels: list[LevelResult]

    def __iter__(self):
        yield self.standard
        yield self.ssb

    def tables(self) -> dict[str, RateTable]:
        out = {}
        for name in ("standard", "ssb", "cross"):
            t = getattr(self, name)
            if t is not None:
                out[name] = t
        return out

    def max_residual(self) -> float:
        return max((r.residual for lv in self.levels for r in lv.reports.values()), default=0.0)


STANDARD_NORMS = ("L2", "L2_R", "H1_R", "L2w")
SSB_NORMS = ("L2", "H1", "L2_R", "H1_R", "L2w")
CROSS_NORMS = ("L2_R",)


def _level(cfg: StudyConfig, ms: ManufacturedSolution, h_par: float, h_perp: float) -> LevelResult:
    t0 = time.perf_counter()
    mesh = build_mesh(cfg.element, h_perp, h_par)
    V = FeSpace(mesh)
    A = assemble_stiffness(V, cfg.quad, cfg.threads)
    dofs = mesh.boundary_nodes()
    A_bc = eliminate_rows_cols(A, dofs)
    res = LevelResult(h_par, h_perp, mesh)
    subs = {"full": SubdomainSpec(), "R": SubdomainSpec.tube(ms.exclusion, cfg.exclusion_radius)}
    weighted = {"w": WeightedNormSpec(cfg.alpha, ms.exclusion)}

    def solve(b, g):
        _, b2, _ = apply_dirichlet(A, b, V, g, dofs=dofs)
        return cg_solve(A_bc, b2, cfg.solver)

    if "standard" in cfg.methods:
        b = assemble_line_rhs(V, ms.network(), cfg.quad)
        u, rep = solve(b, ms.u_D)
        e = error_norms(FeFunction(V, u), ms.u, ms.grad_u, subs, ("L2", "H1"), cfg.quad, weighted, cfg.threads)
        res.fields["u_standard"] = u
        res.reports["standard"] = rep
        res.errors["standard"] = {"L2": e[("full", "L2")], "L2_R": e[("R", "L2")], "H1_R": e[("R", "H1")],
                                  "L2w": e[("w", "L2w")]}
    if "ssb" in cfg.methods:
        stats: dict = {}
        F = _Rhs(ms.rhs, ms.network(), cfg.kernel)
        b = assemble_volume_rhs(V, F, cfg.quad, cfg.threads, stats)
        w, rep = solve(b, ms.w_D)
        # H1 over the full domain is only meaningful for the smooth w
        e = error_norms(FeFunction(V, w), ms.w, ms.grad_w, subs, ("L2", "H1"), cfg.quad, weighted, cfg.threads)
        res.fields["w_ssb"] = w
        res.reports["ssb"] = rep
        res.clamped = stats.get("clamped", 0)
        res.errors["ssb"] = {"L2": e[("full", "L2")], "H1": e[("full", "H1")], "L2_R": e[("R", "L2")],
                             "H1_R": e[("R", "H1")], "L2w": e[("w", "L2w")]}
        rec = ms.scale * (ms.singular(mesh.nodes) + w)
        res.fields["u_ssb"] = rec
    if cfg.method == "both":
        diff = FeFunction(V, res.fields["u_standard"] - ms.scale * res.fields["w_ssb"])
        e = error_norms(diff, lambda x: ms.scale * ms.singular(x), None, {"R": subs["R"]}, ("L2",), cfg.quad,
                        threads=cfg.threads)
        res.errors["cross"] = {"L2_R": e[("R", "L2")]}
    res.seconds = time.perf_counter() - t0
    log.info("level h_par=%g h_perp=%g: %d nodes, %.1f s", h_par, h_perp, mesh.n_nodes, res.seconds)
    return res


class _Rhs:
    """Volume right-hand side evaluator that also reports kernel clamping."""

    def __init__(self, fn, network, kernel):
        self.fn = fn
        self.network = network
        self.kernel = kernel

    def __call__(self, x):
        return self.fn(x)

    def count_clamped(self, x) -> int:
        return count_clamped(self.network, x, self.kernel)


def _run_manufactured(cfg: StudyConfig, ms: ManufacturedSolution) -> StudyResult:
    tables = {
        "standard": RateTable(STANDARD_NORMS, f"{ms.name}: standard method, error in u")
        if "standard" in cfg.methods else None,
        "ssb": RateTable(SSB_NORMS, f"{ms.name}: split method, error in w") if "ssb" in cfg.methods else None,
        "cross": RateTable(CROSS_NORMS, f"{ms.name}: standard vs reconstructed u") if cfg.method == "both" else None,
    }
    levels = []
    for hz, hp in cfg.levels():
        lv = _level(cfg, ms, hz, hp)
        for name, t in tables.items():
            if t is not None:
                t.add(hz, hp, lv.errors[name])
        levels.append(lv)
        if cfg.vtk and cfg.out_dir:
            from .app import write_vtk

            tag = f"{ms.name}_{cfg.element}_par{round(1 / hz)}_perp{round(1 / hp)}"
            write_vtk(lv.mesh, lv.fields, Path(cfg.out_dir) / f"{tag}.vtk")
        # keep only what later levels need
        lv.fields = {} if not cfg.vtk else lv.fields
        if not cfg.vtk:
            lv.mesh = None
    result = StudyResult(tables["standard"], tables["ssb"], tables["cross"], levels)
    if cfg.out_dir:
        write_tables(result.tables(), cfg.out_dir, f"{ms.name}_{cfg.element}")
    return result


def write_tables(tables: dict[str, RateTable], out_dir, stem: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, t in tables.items():
        atomic_write_text(out / f"{stem}_{name}.txt", t.to_text())
        atomic_write_text(out / f"{stem}_{name}.csv", t.to_csv())


def run_smooth_study(cfg: StudyConfig) -> StudyResult:
    return _run_manufactured(cfg, smooth_solution(cfg.offset, cfg.kernel))


def run_segment_study(cfg: StudyConfig) -> StudyResult:
    return _run_manufactured(cfg, segment_solution(cfg.offset, kernel=cfg.kernel))


# ----------------------------------------------------------------------------- reconstruction


@dataclass
class Reconstruction:
    nodal: np.ndarray
    evaluate: Callable
    clamped: int


def reconstruct_u(w_h: FeFunction, network: LineNetwork | None, cfg: StudyConfig | KernelConfig = DEFAULT) -> Reconstruction:
    """u = (sum_i E_i(f) G_i + w_h) / (4 pi), nodally and at arbitrary points."""
    kernel = cfg.kernel if isinstance(cfg, StudyConfig) else cfg
    nodes = w_h.space.mesh.nodes
    nodal = (singular_sum(network, nodes, kernel) + w_h.values) / FOUR_PI
    clamped = count_clamped(network, nodes, kernel)

    def evaluate(x):
        return singular_part(network, x, kernel) + w_h(x) / FOUR_PI

    return Reconstruction(nodal, evaluate, clamped)


# ----------------------------------------------------------------------------- networks


@dataclass
class NetworkResult:
    mesh: Mesh
    w: np.ndarray
    u: np.ndarray
    split_height: float
    indicator: np.ndarray
    orderings: dict[str, np.ndarray]
    curves: list[RemovalCurve]
    reports: list[SolveReport]
    clamped: int

    def curves_csv(self) -> str:
        lines = ["ordering,fraction,removed,error"]
        for c in self.curves:
            for label, f, k, e in c.to_rows():
                lines.append(f"{label},{f!r},{k},{e!r}")
        return "\n".join(lines) + "\n"


class NetworkProblem:
    """Mixed boundary-value problem for the correction of a constant-intensity network.

    Dirichlet data u_D on boundary points with z <= H, homogeneous flux for
    u on facets above H.  One stiffness matrix serves every sub-network.
    """

    def __init__(self, mesh: Mesh, split_height: float, u_D: float = 1.0, cfg: StudyConfig = StudyConfig("network")):
        self.mesh = mesh
        self.space = FeSpace(mesh)
        self.H = float(split_height)
        self.u_D = float(u_D)
        self.cfg = cfg
        tol = 1e-12 * mesh.bounding_box().diameter
        bnd = mesh.boundary_nodes()
        self.dirichlet = bnd[mesh.nodes[bnd, 2] <= self.H + tol]
        fn = mesh.facet_nodes
        pts = mesh.nodes[np.maximum(fn, 0)]
        cnt = (fn >= 0).sum(axis=1)
        zc = (pts[..., 2] * (fn >= 0)).sum(axis=1) / cnt
        self.neumann_facets = np.flatnonzero(zc > self.H)
        self.A = assemble_stiffness(self.space, cfg.quad, cfg.threads)
        self.A_bc = eliminate_rows_cols(self.A, self.dirichlet)
        self.reports: list[SolveReport] = []

    def solve_w(self, network: LineNetwork | None) -> np.ndarray:
        cfg = self.cfg
        if network is not None and not all(p.is_constant for p in network.intensities):
            raise ConfigError("network study needs constant intensities")

        def flux(x, n):
            return -np.einsum("...i,...i->...", grad_singular_sum(network, x, cfg.kernel), n)

        b = np.zeros(self.space.ndofs)
        if network is not None and len(self.neumann_facets):
            b = assemble_neumann_rhs(self.space, flux, (), cfg.quad, facets=self.neumann_facets)
        wD = FOUR_PI * self.u_D - singular_sum(network, self.mesh.nodes[self.dirichlet], cfg.kernel)
        _, b2, _ = apply_dirichlet(self.A, b, self.space, wD, dofs=self.dirichlet)
        w, rep = cg_solve(self.A_bc, b2, cfg.solver)
        self.reports.append(rep)
        return w


def default_split_height(box: Box) -> float:
    return float(box.lo[2] + 0.25 * (box.hi[2] - box.lo[2]))


def run_network_study(cfg: StudyConfig, network: LineNetwork, removal: bool = True) -> NetworkResult:
    mesh = build_mesh(cfg.element, cfg.h_perp[0], cfg.h_par[0], cfg.box)
    H = default_split_height(cfg.box) if cfg.split_height is None else cfg.split_height
    prob = NetworkProblem(mesh, H, 1.0, cfg)
    w = prob.solve_w(network)
    rec = reconstruct_u(FeFunction(prob.space, w), network, cfg)
    indicator = modelling_indicator(network, mesh, cfg.quad, cfg.kernel, cfg.threads)
    orderings = heuristic_orderings(network, indicator)
    curves = []
    if removal:
        def solve(sub):
            if sub is network:
                return w
            return prob.solve_w(sub)

        curves = removal_study(network, orderings, solve, prob.space, cfg.fractions, cfg.quad, cfg.kernel, cfg.threads)
    result = NetworkResult(mesh, w, rec.nodal, H, indicator, orderings, curves, prob.reports, rec.clamped)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if curves:
            atomic_write_text(out / "removal_curves.csv", result.curves_csv())
        if cfg.vtk:
            from .app import write_vtk

            write_vtk(mesh, {"w": w, "u": rec.nodal}, out / "network.vtk")
    return result
