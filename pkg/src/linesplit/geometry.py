"""Points, segments, intensity profiles and line networks.

Points are plain numpy arrays with a trailing axis of length 3; every
operation here broadcasts over leading axes so a whole batch of quadrature
points can be processed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Point3 = np.ndarray


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite coordinates {arr}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Segment:
    """Straight segment from ``a`` to ``b`` parametrized by arclength."""

    a: np.ndarray
    b: np.ndarray
    L: float = field(init=False)
    tau: np.ndarray = field(init=False)

    def __post_init__(self):
        a = as_point(self.a)
        b = as_point(self.b)
        d = b - a
        L = float(np.linalg.norm(d))
        if not L > 0.0:
            raise ValueError("segment has zero length")
        tau = d / L
        tau.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "tau", tau)

    def point_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.a + t[..., None] * self.tau

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.a + self.b)

    def __repr__(self) -> str:
        return f"Segment(a={self.a.tolist()}, b={self.b.tolist()})"


@dataclass(frozen=True)
class IntensityProfile:
    """Polynomial line intensity f(t) = sum_j c_j t^j on arclength t."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            raise ValueError("an intensity profile needs at least one coefficient")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def constant(cls, value: float) -> "IntensityProfile":
        return cls((value,))

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), self.coefficients)

    def derivative(self, order: int = 1) -> "IntensityProfile":
        c = np.polynomial.polynomial.polyder(self.coefficients, order) if len(self.coefficients) > order else [0.0]
        return IntensityProfile(tuple(c))

    def scaled(self, factor: float) -> "IntensityProfile":
        return IntensityProfile(tuple(factor * c for c in self.coefficients))

    def integral(self, t0: float, t1: float) -> float:
        """Exact integral of f over [t0, t1]."""
        anti = np.polynomial.polynomial.polyint(self.coefficients)
        return float(np.polynomial.polynomial.polyval(t1, anti) - np.polynomial.polynomial.polyval(t0, anti))

    @property
    def is_constant(self) -> bool:
        return all(c == 0.0 for c in self.coefficients[1:])


@dataclass(frozen=True)
class LineNetwork:
    segments: tuple[Segment, ...]
    intensities: tuple[IntensityProfile, ...]
    radii: tuple[float, ...]
    gammas: tuple[float, ...]

    def __post_init__(self):
        n = len(self.segments)
        if n < 1:
            raise ValueError("a network needs at least one segment")
        if not (len(self.intensities) == len(self.radii) == len(self.gammas) == n):
            raise ValueError("segments, intensities, radii and gammas must have equal length")
        if any(r < 0 for r in self.radii):
            raise ValueError("radii must be non-negative")
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "intensities", tuple(self.intensities))
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))

    @classmethod
    def from_segments(
        cls,
        segments: Sequence[Segment],
        intensities: Sequence[IntensityProfile] | None = None,
        radii: Sequence[float] | None = None,
        gammas: Sequence[float] | None = None,
    ) -> "LineNetwork":
        n = len(segments)
        radii = [1.0] * n if radii is None else list(radii)
        gammas = [1.0] * n if gammas is None else list(gammas)
        if intensities is None:
            intensities = [IntensityProfile.constant(g * r) for g, r in zip(gammas, radii)]
        return cls(tuple(segments), tuple(intensities), tuple(radii), tuple(gammas))

    @classmethod
    def vascular(cls, segments, radii, gammas) -> "LineNetwork":
        """Network with constant intensities f_i = gamma_i * R_i."""
        return cls.from_segments(segments, None, radii, gammas)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([s.L for s in self.segments])

    def subset(self, indices) -> "LineNetwork | None":
        idx = list(indices)
        if not idx:
            return None
        return LineNetwork(
            tuple(self.segments[i] for i in idx),
            tuple(self.intensities[i] for i in idx),
            tuple(self.radii[i] for i in idx),
            tuple(self.gammas[i] for i in idx),
        )

    def total_intensity(self) -> float:
        """Integral of f over the whole network."""
        return sum(f.integral(0.0, s.L) for s, f in zip(self.segments, self.intensities))


def project_arclength(seg: Segment, x) -> np.ndarray:
    """Arclength of the orthogonal projection onto the (unbounded) segment axis."""
    x = np.asarray(x, dtype=float)
    return (x - seg.a) @ seg.tau


def axis_offset(seg: Segment, x) -> tuple[np.ndarray, np.ndarray]:
    """Split ``x - a`` into the arclength ``s`` and the perpendicular vector ``p``."""
    d = np.asarray(x, dtype=float) - seg.a
    s = d @ seg.tau
    p = d - s[..., None] * seg.tau
    return s, p


def distance_to_axis(seg: Segment, x) -> np.ndarray:
    _, p = axis_offset(seg, x)
    return np.linalg.norm(p, axis=-1)


def distance_to_segment(seg: Segment, x) -> np.ndarray:
    """Euclidean distance to the closed segment."""
    x = np.asarray(x, dtype=float)
    s = np.clip(project_arclength(seg, x), 0.0, seg.L)
    return np.linalg.norm(x - seg.point_at(s), axis=-1)


def endpoint_distances(seg: Segment, x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return np.linalg.norm(x - seg.a, axis=-1), np.linalg.norm(x - seg.b, axis=-1)


@dataclass(frozen=True)
class Axis:
    """Infinite straight line through ``point`` with unit direction ``direction``."""

    point: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        p = as_point(self.point)
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if not n > 0:
            raise ValueError("axis direction must be nonzero")
        d = d / n
        d.setflags(write=False)
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "direction", d)

    def offset(self, x) -> tuple[np.ndarray, np.ndarray]:
        d = np.asarray(x, dtype=float) - self.point
        s = d @ self.direction
        return s, d - s[..., None] * self.direction

    def distance(self, x) -> np.ndarray:
        return np.linalg.norm(self.offset(x)[1], axis=-1)


def distance_to(geometry, x) -> np.ndarray:
    """Distance from points to a Segment or an Axis."""
    if isinstance(geometry, Segment):
        return distance_to_segment(geometry, x)
    if isinstance(geometry, Axis):
        return geometry.distance(x)
    raise TypeError(f"unsupported geometry {type(geometry).__name__}")
