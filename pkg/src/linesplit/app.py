"""Command line front end, network files, synthetic networks and VTK output."""

from __future__ import annotations

import argparse
import io
import logging
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .analysis import ORDERING_LABELS, heuristic_orderings, modelling_indicator
from .config import load_study_config, parse_fraction_list
from .errors import ConfigError, LinesplitError, NotConverged, ParseError
from .fileio import atomic_write_text
from .geometry import LineNetwork, Segment
from .mesh import PRISM, TET, UNIT_BOX, Box, Mesh
from .studies import StudyConfig, build_mesh, run_network_study, run_segment_study, run_smooth_study, write_tables

log = logging.getLogger(__name__)

# ----------------------------------------------------------------------------- network files


@dataclass(frozen=True)
class NetworkFile:
    """``seg ax ay az bx by bz [radius gamma]`` lines; ``#`` starts a comment."""

    network: LineNetwork

    @classmethod
    def parse(cls, text: str, path=None) -> "NetworkFile":
        segs, radii, gammas = [], [], []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] != "seg":
                raise ParseError(f"expected 'seg', got {parts[0]!r}", path, lineno)
            if len(parts) not in (7, 9):
                raise ParseError(f"expected 6 or 8 numbers after 'seg', got {len(parts) - 1}", path, lineno)
            try:
                vals = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from exc
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", path, lineno)
            try:
                seg = Segment(np.array(vals[:3]), np.array(vals[3:6]))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from exc
            r, g = (vals[6], vals[7]) if len(vals) == 8 else (1.0, 1.0)
            if r < 0:
                raise ParseError("radius must be >= 0", path, lineno)
            segs.append(seg)
            radii.append(r)
            gammas.append(g)
        if not segs:
            raise ParseError("network file has no segments", path)
        return cls(LineNetwork.vascular(segs, radii, gammas))

    @classmethod
    def read(cls, path) -> "NetworkFile":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ParseError(f"cannot read network file: {exc.strerror}", path) from exc
        return cls.parse(text, path)

    def to_text(self) -> str:
        net = self.network
        out = ["# seg ax ay az bx by bz radius gamma"]
        for s, r, g in zip(net.segments, net.radii, net.gammas):
            nums = [*s.a, *s.b, r, g]
            out.append("seg " + " ".join(repr(float(v)) for v in nums))
        return "\n".join(out) + "\n"

    def write(self, path) -> None:
        atomic_write_text(path, self.to_text())


def gen_network(count: int, box: Box = UNIT_BOX, seed: int = 0, min_len: float = 0.05,
                max_len: float = 0.4) -> NetworkFile:
    """Random straight vessels inside ``box`` with a 5% endpoint margin.

    Radii are log-uniform in [0.01, 0.1] times the box size; about one in
    ten segments is arterial (gamma = 1), the rest venous (gamma = -0.1).
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.asarray(box.lo)
    ext = box.extent
    size = float(ext.max())
    inner_lo = lo + 0.05 * ext
    inner_hi = lo + 0.95 * ext
    segs, radii, gammas = [], [], []
    while len(segs) < count:
        a = rng.uniform(inner_lo, inner_hi)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        b = a + rng.uniform(min_len, max_len) * size * d
        r = float(np.exp(rng.uniform(math.log(0.01), math.log(0.1)))) * size
        g = 1.0 if rng.uniform() < 0.1 else -0.1
        if np.all(b >= inner_lo) and np.all(b <= inner_hi):
            segs.append(Segment(a, b))
            radii.append(r)
            gammas.append(g)
    return NetworkFile(LineNetwork.vascular(segs, radii, gammas))


# ----------------------------------------------------------------------------- VTK

_VTK_TYPE = {TET: 10, PRISM: 13}
# VTK wants the first wedge triangle oriented with its normal away from the second
_VTK_ORDER = {TET: [0, 1, 2, 3], PRISM: [0, 2, 1, 3, 5, 4]}


def write_vtk(mesh: Mesh, fields: dict, path) -> None:
    """Legacy ASCII VTK 3.0 unstructured grid with nodal scalar fields."""
    n = mesh.n_nodes
    arrays = {}
    for name, f in fields.items():
        vals = np.asarray(getattr(f, "values", f), dtype=float)
        if vals.shape != (n,):
            raise ValueError(f"field {name!r} has shape {vals.shape}, expected ({n},)")
        arrays[name] = vals
    k = mesh.cells.shape[1]
    buf = io.StringIO()
    buf.write("# vtk DataFile Version 3.0\nlinesplit\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    buf.write(f"POINTS {n} double\n")
    np.savetxt(buf, mesh.nodes, fmt="%.17g")
    buf.write(f"CELLS {mesh.n_cells} {mesh.n_cells * (k + 1)}\n")
    conn = np.column_stack([np.full(mesh.n_cells, k), mesh.cells[:, _VTK_ORDER[mesh.kind]]])
    np.savetxt(buf, conn, fmt="%d")
    buf.write(f"CELL_TYPES {mesh.n_cells}\n")
    np.savetxt(buf, np.full(mesh.n_cells, _VTK_TYPE[mesh.kind]), fmt="%d")
    if arrays:
        buf.write(f"POINT_DATA {n}\n")
        for name, vals in arrays.items():
            buf.write(f"SCALARS {name.replace(' ', '_')} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(buf, vals, fmt="%.17g")
    try:
        atomic_write_text(path, buf.getvalue())
    except OSError as exc:
        raise OSError(f"{path}: cannot write VTK file: {exc.strerror}") from exc


# ----------------------------------------------------------------------------- CLI

EPILOG = """\
outputs:
  study-*        rate tables <study>_<element>_<method>.{txt,csv} in --out; CSV
                 columns h_par, h_perp, then <norm>, p_<norm> per norm.  Norms:
                 L2, H1 (full domain), L2_R, H1_R (tube of --exclusion-radius
                 removed), L2w (weighted, alpha = 0.5).
  solve-network  removal_curves.csv: ordering, fraction, removed, error.
  rank-segments  CSV: id, R, L, R_sqrtL, M; then one line per ordering
                 'order,<label>,<ids...>' (decreasing rank).
exit codes: 0 success, 1 invalid input, 2 solver did not converge.
"""


def _fractions(text: str) -> tuple[float, ...]:
    try:
        return parse_fraction_list(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linesplit", description="Line-source elliptic solvers and studies.",
                                epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--h-perp", type=_fractions, help="cross-section mesh sizes, e.g. 1/4,1/8")
    common.add_argument("--h-par", type=_fractions, help="mesh sizes along z, e.g. 1/16")
    common.add_argument("--element", choices=(TET, PRISM), help="element kind (default prism)")
    common.add_argument("--method", choices=("standard", "ssb", "both"), help="discretization (default both)")
    common.add_argument("--exclusion-radius", type=float, help="tube radius R for the Omega_R norms (default 0.2)")
    common.add_argument("--config", type=Path, help="INI file with [study] [mesh] [solver] [quadrature] [kernel] [output]")
    common.add_argument("--network", type=Path, help="network file ('seg ax ay az bx by bz radius gamma' lines)")
    common.add_argument("--out", help="output directory (file path for gen-network)")
    common.add_argument("--vtk", action="store_true", default=None, help="also write VTK files")
    common.add_argument("--threads", type=int, help="worker threads; 1 is the reference mode")
    common.add_argument("--seed", type=int, default=0, help="seed for gen-network")
    common.add_argument("--count", type=int, default=20, help="segment count for gen-network")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    for name, text in (
        ("study-smooth", "manufactured line through the cube, f = z^3"),
        ("study-segment", "manufactured interior segment, E(f) = z"),
        ("solve-network", "mixed problem for a vessel network plus removal study"),
        ("rank-segments", "segment statistics and the four removal orderings"),
        ("mesh-info", "build a box mesh and print its summary"),
        ("gen-network", "write a seeded synthetic network file"),
    ):
        sub.add_parser(name, parents=[common], help=text, description=text, epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return p


def _study_config(args, study: str) -> StudyConfig:
    cfg = StudyConfig(study)
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"{args.config}: config file not found")
        cfg = load_study_config(args.config, cfg)
    kw = {}
    for attr, key in (("h_perp", "h_perp"), ("h_par", "h_par"), ("element", "element"), ("method", "method"),
                      ("exclusion_radius", "exclusion_radius"), ("out", "out_dir"), ("vtk", "vtk"),
                      ("threads", "threads")):
        v = getattr(args, attr)
        if v is not None:
            kw[key] = v
    if study == "network" and args.h_perp is None and (args.config is None or cfg.h_perp == StudyConfig().h_perp):
        kw.setdefault("h_perp", (1 / 16,))
        kw.setdefault("h_par", (1 / 16,))
        kw.setdefault("element", TET)
    return replace(cfg, **kw)


def _need_network(args) -> LineNetwork:
    if args.network is None:
        raise ConfigError("--network PATH is required")
    return NetworkFile.read(args.network).network


def rank_table(network: LineNetwork, indicator: np.ndarray) -> str:
    lines = ["id,R,L,R_sqrtL,M"]
    for i, (r, L, m) in enumerate(zip(network.radii, network.lengths, indicator)):
        lines.append(f"{i},{r!r},{float(L)!r},{float(r * math.sqrt(L))!r},{float(m)!r}")
    orders = heuristic_orderings(network, indicator)
    for label in ORDERING_LABELS:
        lines.append("order," + label + "," + ",".join(str(int(i)) for i in orders[label]))
    return "\n".join(lines) + "\n"


def _emit(text: str, out_dir, name: str) -> None:
    sys.stdout.write(text)
    if out_dir:
        atomic_write_text(Path(out_dir) / name, text)


def _dispatch(args) -> int:
    cmd = args.command
    if cmd in ("study-smooth", "study-segment"):
        cfg = _study_config(args, "smooth" if cmd == "study-smooth" else "segment")
        res = run_smooth_study(cfg) if cmd == "study-smooth" else run_segment_study(cfg)
        for t in res.tables().values():
            sys.stdout.write(t.to_text() + "\n")
        return 0
    if cmd == "solve-network":
        cfg = _study_config(args, "network")
        net = _need_network(args)
        res = run_network_study(cfg, net)
        _emit(res.curves_csv(), None, "removal_curves.csv")
        return 0
    if cmd == "rank-segments":
        cfg = _study_config(args, "network")
        net = _need_network(args)
        mesh = build_mesh(cfg.element, cfg.h_perp[0], cfg.h_par[0], cfg.box)
        ind = modelling_indicator(net, mesh, cfg.quad, cfg.kernel, cfg.threads)
        _emit(rank_table(net, ind), cfg.out_dir, "rank_segments.csv")
        return 0
    if cmd == "mesh-info":
        cfg = _study_config(args, "smooth")
        lines = []
        for hz, hp in cfg.levels():
            m = build_mesh(cfg.element, hp, hz, cfg.box)
            s = m.summary()
            lines.append(f"h_par={hz:g} h_perp={hp:g} kind={s['kind']} nodes={s['nodes']} cells={s['cells']} "
                         f"facets={s['facets']} volume={s['volume']:.12g}")
        sys.stdout.write("\n".join(lines) + "\n")
        return 0
    if cmd == "gen-network":
        nf = gen_network(args.count, UNIT_BOX, args.seed)
        if args.out:
            nf.write(args.out)
        else:
            sys.stdout.write(nf.to_text())
        return 0
    raise ConfigError(f"unknown command {cmd}")


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    try:
        return _dispatch(args)
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LinesplitError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
