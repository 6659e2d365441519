"""Finite element solvers for elliptic problems with line sources.

Two discretizations are provided: the standard Galerkin method with a
line right-hand side, and singularity subtraction, which solves for the
smooth remainder w once the explicit log-type potential of every segment
has been removed.
"""

from __future__ import annotations

from .geometry import IntensityProfile, LineNetwork, Segment
from .kernels import KernelConfig, green_segment, grad_green_segment, singular_part
from .mesh import Box, Mesh, MeshParams, build_box_prism, build_box_tet
from .solver import CsrMatrix, SolverConfig, cg_solve

__version__ = "0.1.0"

__all__ = [
    "Box",
    "CsrMatrix",
    "IntensityProfile",
    "KernelConfig",
    "LineNetwork",
    "Mesh",
    "MeshParams",
    "Segment",
    "SolverConfig",
    "build_box_prism",
    "build_box_tet",
    "cg_solve",
    "grad_green_segment",
    "green_segment",
    "singular_part",
]
