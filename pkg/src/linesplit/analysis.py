"""Error norms, convergence rates, the modelling-error indicator and removal studies."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .assembly import CellQuadrature, FeFunction, FeSpace
from .errors import NonFiniteEvaluation
from .geometry import Axis, LineNetwork, Segment, distance_to
from .kernels import DEFAULT, FOUR_PI, KernelConfig, green_segment, singular_sum
from .mesh import Mesh
from .parallel import map_chunks
from .quadrature import QuadratureSpec

NORM_CHUNK = 8192


@dataclass(frozen=True)
class SubdomainSpec:
    """Omega minus tubes of radius R around each listed segment or axis."""

    exclusions: tuple = ()

    def __post_init__(self):
        ex = tuple((g, float(r)) for g, r in self.exclusions)
        for g, r in ex:
            if r < 0:
                raise ValueError("exclusion radius must be >= 0")
            if not isinstance(g, (Segment, Axis)):
                raise TypeError(f"unsupported exclusion geometry {type(g).__name__}")
        object.__setattr__(self, "exclusions", ex)

    @classmethod
    def full(cls) -> "SubdomainSpec":
        return cls(())

    @classmethod
    def tube(cls, geometry, radius: float) -> "SubdomainSpec":
        return cls(((geometry, radius),))

    def keep(self, x: np.ndarray) -> np.ndarray:
        mask = np.ones(x.shape[:-1], dtype=bool)
        for g, r in self.exclusions:
            if r > 0:
                mask &= distance_to(g, x) >= r
        return mask


@dataclass(frozen=True)
class WeightedNormSpec:
    alpha: float
    geometry: Segment | Axis

    def __post_init__(self):
        if not -1.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (-1, 1)")

    def weight(self, x, cfg: KernelConfig = DEFAULT) -> np.ndarray:
        r = distance_to(self.geometry, x)
        if self.alpha < 0 and cfg.clamp_dist <= 0 and np.any(r == 0):
            raise NonFiniteEvaluation("weight r^(2 alpha) is infinite on the line", location=None)
        r = np.maximum(r, cfg.clamp_dist)
        return r ** (2.0 * self.alpha)


def _fe_at_quadrature(cq: CellQuadrature, coef: np.ndarray, need_grad: bool):
    """u_h and grad u_h at the quadrature points of a chunk."""
    vals = cq.fe_values(coef)
    return vals, (cq.fe_grads(coef) if need_grad else None)


def _check_finite(arr, x, lo):
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = np.argwhere(bad)[0]
        m, q = int(idx[0]), int(idx[1])
        raise NonFiniteEvaluation(
            f"exact field is not finite at {x[m, q].tolist()} (cell {lo + m})", location=x[m, q], cell=lo + m
        )


def error_norms(
    u_h: FeFunction,
    exact: Callable | None,
    grad_exact: Callable | None = None,
    subs: dict[str, SubdomainSpec] | None = None,
    kinds: Sequence[str] = ("L2", "H1semi", "H1"),
    quad: QuadratureSpec = QuadratureSpec(),
    weighted: dict[str, WeightedNormSpec] | None = None,
    threads: int = 1,
) -> dict[tuple[str, str], float]:
    """Several error norms of ``exact - u_h`` in one pass over the mesh.

    Returns ``{(sub_name, kind): value}``; weighted L2 norms appear under
    ``(name, "L2w")``.  ``exact=None`` means the zero field.
    """
    mesh = u_h.space.mesh
    subs = {"full": SubdomainSpec()} if subs is None else subs
    weighted = weighted or {}
    need_grad = any(k in ("H1semi", "H1") for k in kinds)
    if need_grad and grad_exact is None and exact is not None:
        raise ValueError("H1-type norms need grad_exact")
    names = list(subs)

    def chunk(lo, hi):
        cq = CellQuadrature(mesh, lo, hi, quad.volume_degree)
        coef = u_h.values[mesh.cells[lo:hi]]
        uh, guh = _fe_at_quadrature(cq, coef, need_grad)
        ue = np.zeros_like(uh) if exact is None else np.asarray(exact(cq.x), dtype=float)
        out = np.zeros((len(names) + len(weighted), 2))
        masks = [subs[n].keep(cq.x) for n in names]
        any_mask = np.logical_or.reduce(masks) if masks else np.zeros(uh.shape, bool)
        if weighted:
            any_mask = np.ones_like(any_mask)
        # points dropped by every filter may be singular; mask them out first
        ue = np.where(any_mask, ue, 0.0)
        _check_finite(ue, cq.x, lo)
        e2 = (ue - uh) ** 2
        if need_grad:
            ge = np.zeros_like(guh) if exact is None else np.asarray(grad_exact(cq.x), dtype=float)
            ge = np.where(any_mask[..., None], ge, 0.0)
            _check_finite(ge.sum(axis=-1), cq.x, lo)
            g2 = ((ge - guh) ** 2).sum(axis=-1)
        for i, m in enumerate(masks):
            wm = cq.wdet * m
            out[i, 0] = float((wm * e2).sum())
            if need_grad:
                out[i, 1] = float((wm * g2).sum())
        for j, spec in enumerate(weighted.values()):
            out[len(names) + j, 0] = float((cq.wdet * spec.weight(cq.x) * e2).sum())
        return out

    tot = np.zeros((len(names) + len(weighted), 2))
    for part in map_chunks(chunk, mesh.n_cells, threads, NORM_CHUNK):
        tot += part
    res: dict[tuple[str, str], float] = {}
    for i, n in enumerate(names):
        for k in kinds:
            if k == "L2":
                res[(n, k)] = math.sqrt(tot[i, 0])
            elif k == "H1semi":
                res[(n, k)] = math.sqrt(tot[i, 1])
            elif k == "H1":
                res[(n, k)] = math.sqrt(tot[i, 0] + tot[i, 1])
            else:
                raise ValueError(f"unknown norm kind {k!r}")
    for j, n in enumerate(weighted):
        res[(n, "L2w")] = math.sqrt(tot[len(names) + j, 0])
    return res


def error_norm(u_h: FeFunction, exact, grad_exact=None, kind: str = "L2", sub: SubdomainSpec | None = None,
               quad: QuadratureSpec = QuadratureSpec(), threads: int = 1) -> float:
    sub = SubdomainSpec() if sub is None else sub
    return error_norms(u_h, exact, grad_exact, {"s": sub}, (kind,), quad, threads=threads)[("s", kind)]


def integrate(fn, mesh: Mesh, quad: QuadratureSpec = QuadratureSpec(), threads: int = 1) -> float:
    """Integral of a point evaluator over the mesh."""

    def chunk(lo, hi):
        cq = CellQuadrature(mesh, lo, hi, quad.volume_degree)
        v = np.asarray(fn(cq.x), dtype=float)
        _check_finite(v, cq.x, lo)
        return float((cq.wdet * v).sum())

    return float(sum(map_chunks(chunk, mesh.n_cells, threads, NORM_CHUNK)))


def weighted_l2_norm(v, spec: WeightedNormSpec, mesh: Mesh, quad: QuadratureSpec = QuadratureSpec(),
                     cfg: KernelConfig = DEFAULT) -> float:
    """sqrt(int v^2 r^(2 alpha))."""
    return math.sqrt(integrate(lambda x: np.asarray(v(x)) ** 2 * spec.weight(x, cfg), mesh, quad))


# ----------------------------------------------------------------------------- rates


def convergence_rates(e1: float, e2: float, h1: float, h2: float) -> float:
    if e1 <= 0 or e2 <= 0:
        raise ValueError("errors must be positive")
    if not h1 > h2 > 0:
        raise ValueError("need h1 > h2 > 0")
    return math.log(e1 / e2) / math.log(h1 / h2)


def _fmt_h(h) -> str:
    from fractions import Fraction

    f = Fraction(h).limit_denominator(4096)
    return f"1/{f.denominator}" if f.numerator == 1 else f"{float(h):g}"


@dataclass
class RateTable:
    """Errors per refinement level with observed orders.

    Rows are kept in insertion order; an order is reported for a row when the
    previous row has the same h_par (h_perp refined) or the same h_perp.
    """

    norms: tuple[str, ...]
    title: str = ""
    rows: list[dict] = field(default_factory=list)

    def add(self, h_par: float, h_perp: float, errors: dict[str, float]) -> None:
        self.rows.append({"h_par": float(h_par), "h_perp": float(h_perp), "errors": {k: float(errors[k]) for k in self.norms}})

    def rate(self, i: int, norm: str) -> float | None:
        if i == 0:
            return None
        a, b = self.rows[i - 1], self.rows[i]
        if a["h_par"] == b["h_par"] and a["h_perp"] > b["h_perp"]:
            h1, h2 = a["h_perp"], b["h_perp"]
        elif a["h_perp"] == b["h_perp"] and a["h_par"] > b["h_par"]:
            h1, h2 = a["h_par"], b["h_par"]
        else:
            return None
        e1, e2 = a["errors"][norm], b["errors"][norm]
        if e1 <= 0 or e2 <= 0:
            return None
        return convergence_rates(e1, e2, h1, h2)

    def errors(self, norm: str) -> list[float]:
        return [r["errors"][norm] for r in self.rows]

    def select(self, h_par: float) -> "RateTable":
        out = RateTable(self.norms, self.title)
        out.rows = [r for r in self.rows if r["h_par"] == h_par]
        return out

    def to_text(self) -> str:
        head = ["h_par", "h_perp"]
        for n in self.norms:
            head += [n, "p"]
        lines = []
        table = [head]
        for i, r in enumerate(self.rows):
            cells = [_fmt_h(r["h_par"]), _fmt_h(r["h_perp"])]
            for n in self.norms:
                p = self.rate(i, n)
                cells += [f"{r['errors'][n]:.2e}", "" if p is None else f"{p:.2f}"]
            table.append(cells)
        widths = [max(len(row[j]) for row in table) for j in range(len(head))]
        if self.title:
            lines.append(self.title)
        for row in table:
            lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["h_par", "h_perp"]
        for n in self.norms:
            head += [n, f"p_{n}"]
        w.writerow(head)
        for i, r in enumerate(self.rows):
            row = [repr(r["h_par"]), repr(r["h_perp"])]
            for n in self.norms:
                p = self.rate(i, n)
                row += [repr(r["errors"][n]), "" if p is None else repr(p)]
            w.writerow(row)
        return buf.getvalue()


# ----------------------------------------------------------------------------- modelling error


def modelling_indicator(network: LineNetwork, mesh: Mesh, quad: QuadratureSpec = QuadratureSpec(),
                        cfg: KernelConfig = DEFAULT, threads: int = 1) -> np.ndarray:
    """M_i = |gamma_i R_i| * ||G_i||_{L2(Omega)}."""
    n = len(network)

    def chunk(lo, hi):
        cq = CellQuadrature(mesh, lo, hi, quad.volume_degree)
        out = np.empty(n)
        for i, seg in enumerate(network.segments):
            out[i] = float((cq.wdet * green_segment(seg, cq.x, cfg) ** 2).sum())
        return out

    g2 = np.zeros(n)
    for part in map_chunks(chunk, mesh.n_cells, threads, NORM_CHUNK):
        g2 += part
    gr = np.abs(np.asarray(network.gammas) * np.asarray(network.radii))
    return gr * np.sqrt(g2)


ORDERING_LABELS = ("R", "L", "R*sqrt(L)", "M")


def _decreasing(keys: np.ndarray) -> np.ndarray:
    # stable sort on -key: ties keep ascending index
    return np.argsort(-np.asarray(keys, dtype=float), kind="stable")


def heuristic_orderings(network: LineNetwork, indicator: np.ndarray | None = None, mesh: Mesh | None = None,
                        quad: QuadratureSpec = QuadratureSpec()) -> dict[str, np.ndarray]:
    """Permutations sorting segments by decreasing R, L, R sqrt(L) and M."""
    R = np.asarray(network.radii)
    L = network.lengths
    out = {"R": _decreasing(R), "L": _decreasing(L), "R*sqrt(L)": _decreasing(R * np.sqrt(L))}
    if indicator is None and mesh is not None:
        indicator = modelling_indicator(network, mesh, quad)
    if indicator is not None:
        out["M"] = _decreasing(indicator)
    return out


@dataclass
class RemovalCurve:
    label: str
    fractions: np.ndarray
    errors: np.ndarray
    removed_counts: np.ndarray

    def to_rows(self):
        return [(self.label, float(f), int(k), float(e)) for f, k, e in zip(self.fractions, self.removed_counts, self.errors)]


def removed_count(n: int, fraction: float) -> int:
    return int(min(n, max(0, math.floor(fraction * n + 0.5))))


def removal_study(network: LineNetwork, orderings: dict[str, np.ndarray], solve_w, space: FeSpace,
                  fractions: Sequence[float], quad: QuadratureSpec = QuadratureSpec(),
                  cfg: KernelConfig = DEFAULT, threads: int = 1) -> list[RemovalCurve]:
    """Error of dropping the least-ranked segments from each ordering.

    ``solve_w(subnetwork_or_None)`` returns the nodal correction for a reduced
    network.  The reported error is ||u_full - u_reduced||_{L2(Omega)} with
    u = (sum E_i G_i + w)/(4 pi): the removed singular terms are integrated
    exactly by quadrature, the corrections through their P1 fields.
    """
    n = len(network)
    w_full = solve_w(network)
    cache: dict[tuple[int, ...], float] = {(): 0.0}
    curves = []
    for label, perm in orderings.items():
        perm = np.asarray(perm)
        errs, counts = [], []
        for frac in fractions:
            k = removed_count(n, frac)
            removed = tuple(sorted(int(i) for i in perm[n - k:])) if k else ()
            if removed not in cache:
                keep = [i for i in range(n) if i not in set(removed)]
                sub = network.subset(keep)
                w_red = solve_w(sub)
                gone = network.subset(removed)
                diff = FeFunction(space, (w_red - w_full) / FOUR_PI)
                e = error_norms(diff, lambda x, g=gone: singular_sum(g, x, cfg) / FOUR_PI, None,
                                kinds=("L2",), quad=quad, threads=threads)
                cache[removed] = e[("full", "L2")]
            errs.append(cache[removed])
            counts.append(k)
        curves.append(RemovalCurve(label, np.asarray(fractions, float), np.asarray(errs), np.asarray(counts)))
    return curves
