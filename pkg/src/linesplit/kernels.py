"""Closed-form singular terms for straight line sources.

For a segment from ``a`` to ``b`` with unit tangent ``tau`` and length ``L``
the log potential

    G(x) = int_0^L dt / |x - a - t tau| = ln((r_b + L - s) / (r_a - s))

is evaluated in a cancellation-free way: with ``s`` the (unclamped) arclength
of the projection and ``rho`` the distance to the axis, the two algebraically
equivalent forms

    ln((r_b + L - s) / (r_a - s))      used for s <= L/2
    ln((r_a + s) / (r_b + s - L))      used for s >  L/2

are combined with the identities (r_a - s)(r_a + s) = rho^2 and
(r_b + L - s)(r_b + s - L) = rho^2 so that no difference of nearly equal
numbers is ever formed.  Each form degenerates (0/0) on the axis ray the
other one covers.

All functions take points of shape ``(..., 3)`` and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteEvaluation, NonPositiveKappa
from .geometry import Axis, IntensityProfile, LineNetwork, Segment, axis_offset

FOUR_PI = 4.0 * math.pi
_ROUNDOFF = 4.0 * np.finfo(float).eps


@dataclass(frozen=True)
class KernelConfig:
    """``clamp_dist`` is the smallest axis distance used in evaluation.

    Zero disables clamping; points on a line source then raise.
    """

    clamp_dist: float = 1e-12

    def __post_init__(self):
        if not self.clamp_dist >= 0.0:
            raise ValueError("clamp_dist must be >= 0")

    @classmethod
    def for_domain(cls, diameter: float, relative: float = 1e-12) -> "KernelConfig":
        return cls(relative * diameter)


UNCLAMPED = KernelConfig(0.0)
DEFAULT = KernelConfig()


@dataclass(frozen=True)
class CoefficientBundle:
    kappa: Callable[[np.ndarray], np.ndarray]
    grad_kappa: Callable[[np.ndarray], np.ndarray]
    lap_kappa: Callable[[np.ndarray], np.ndarray]

    def evaluate(self, x):
        k = np.asarray(self.kappa(x), dtype=float)
        if np.any(k <= 0.0):
            bad = np.argwhere(np.broadcast_to(k, np.shape(x)[:-1]) <= 0.0)[0]
            raise NonPositiveKappa(f"kappa <= 0 at {np.asarray(x)[tuple(bad)]}")
        return k, np.asarray(self.grad_kappa(x), dtype=float), np.asarray(self.lap_kappa(x), dtype=float)


def _check_on_line(on_line: np.ndarray, x, what: str):
    if np.any(on_line):
        idx = tuple(np.argwhere(on_line)[0])
        loc = np.asarray(x, dtype=float)[idx]
        raise NonFiniteEvaluation(f"{what} evaluated on the line source at {loc.tolist()}", location=loc)


class _SegmentTerms:
    """Distances shared by G, grad G and F at a batch of points."""

    __slots__ = ("s", "t", "p", "rho2", "ra", "rb", "upper")

    def __init__(self, seg: Segment, x, cfg: KernelConfig):
        x = np.asarray(x, dtype=float)
        s, p = axis_offset(seg, x)
        rho2 = np.einsum("...i,...i->...", p, p)
        if cfg.clamp_dist > 0.0:
            rho2 = np.maximum(rho2, cfg.clamp_dist**2)
        else:
            # distances below round-off of the coordinates count as zero
            tiny = (_ROUNDOFF * (seg.L + np.abs(s))) ** 2
            _check_on_line((rho2 <= tiny) & (s >= 0.0) & (s <= seg.L), x, "segment kernel")
        t = s - seg.L
        self.s, self.t, self.p, self.rho2 = s, t, p, rho2
        self.ra = np.sqrt(s * s + rho2)
        self.rb = np.sqrt(t * t + rho2)
        self.upper = s > 0.5 * seg.L

    def green(self) -> np.ndarray:
        s, t, rho2, ra, rb = self.s, self.t, self.rho2, self.ra, self.rb
        with np.errstate(divide="ignore", invalid="ignore"):
            # s <= L/2: ln((rb - t) / (ra - s))
            den_lo = np.where(s <= 0.0, ra - s, rho2 / (ra + s))
            g_lo = np.log(rb - t) - np.log(den_lo)
            # s > L/2: ln((ra + s) / (rb + t))
            den_hi = np.where(t >= 0.0, rb + t, rho2 / (rb - t))
            g_hi = np.log(ra + s) - np.log(den_hi)
        return np.where(self.upper, g_hi, g_lo)

    def grad_green(self, tau: np.ndarray) -> np.ndarray:
        s, t, rho2, ra, rb = self.s, self.t, self.rho2, self.ra, self.rb
        with np.errstate(divide="ignore", invalid="ignore"):
            a_a = np.where(s <= 0.0, 1.0 / (ra * (ra - s)), (ra + s) / (ra * rho2))
            coef_lo = 1.0 / (rb * (rb - t)) - a_a
            c_b = np.where(t >= 0.0, 1.0 / (rb * (rb + t)), (rb - t) / (rb * rho2))
            coef_hi = 1.0 / (ra * (ra + s)) - c_b
        coef = np.where(self.upper, coef_hi, coef_lo)
        along = 1.0 / ra - 1.0 / rb
        return coef[..., None] * self.p + along[..., None] * tau

    def inv_diff(self) -> np.ndarray:
        """1/r_a - 1/r_b, which equals tau . grad G."""
        return 1.0 / self.ra - 1.0 / self.rb


def green_segment(seg: Segment, x, cfg: KernelConfig = DEFAULT) -> np.ndarray:
    return _SegmentTerms(seg, x, cfg).green()


def grad_green_segment(seg: Segment, x, cfg: KernelConfig = DEFAULT) -> np.ndarray:
    return _SegmentTerms(seg, x, cfg).grad_green(seg.tau)


def green_segment_forward(seg: Segment, x) -> np.ndarray:
    """Direct evaluation of ln((r_b + L + tau.(a-x)) / (r_a + tau.(a-x))), no stabilization."""
    x = np.asarray(x, dtype=float)
    ra = np.linalg.norm(x - seg.a, axis=-1)
    rb = np.linalg.norm(x - seg.b, axis=-1)
    c = (seg.a - x) @ seg.tau
    return np.log((rb + seg.L + c) / (ra + c))


def green_segment_conjugate(seg: Segment, x) -> np.ndarray:
    """Direct evaluation of the conjugate form ln((r_a + s) / (r_b + s - L))."""
    x = np.asarray(x, dtype=float)
    ra = np.linalg.norm(x - seg.a, axis=-1)
    rb = np.linalg.norm(x - seg.b, axis=-1)
    s = (x - seg.a) @ seg.tau
    return np.log((ra + s) / (rb + s - seg.L))


def _axis_terms(axis_point, axis_dir, x, cfg: KernelConfig):
    s, p = Axis(axis_point, axis_dir).offset(x)
    rho2 = np.einsum("...i,...i->...", p, p)
    if cfg.clamp_dist > 0.0:
        rho2 = np.maximum(rho2, cfg.clamp_dist**2)
    else:
        _check_on_line(rho2 <= (_ROUNDOFF * (1.0 + np.abs(s))) ** 2, x, "line kernel")
    return p, rho2


def green_infinite_line(axis_point, axis_dir, x, cfg: KernelConfig = DEFAULT) -> np.ndarray:
    """ln(r) with r the distance to the infinite axis."""
    _, rho2 = _axis_terms(axis_point, axis_dir, x, cfg)
    return 0.5 * np.log(rho2)


def grad_green_infinite_line(axis_point, axis_dir, x, cfg: KernelConfig = DEFAULT) -> np.ndarray:
    p, rho2 = _axis_terms(axis_point, axis_dir, x, cfg)
    return p / rho2[..., None]


def extension_eval(seg: Segment, profile: IntensityProfile, x):
    """(E(f)(x), f'(P(x)), f''(P(x))) with P the unclamped projection."""
    s = (np.asarray(x, dtype=float) - seg.a) @ seg.tau
    return profile(s), profile.derivative(1)(s), profile.derivative(2)(s)


def correction_rhs_segment(seg: Segment, profile: IntensityProfile, x, cfg: KernelConfig = DEFAULT) -> np.ndarray:
    """F = f''(P) G + 2 f'(P) (1/r_a - 1/r_b) for the projection extension, kappa = 1."""
    terms = _SegmentTerms(seg, x, cfg)
    d1 = profile.derivative(1)
    d2 = profile.derivative(2)
    out = 2.0 * d1(terms.s) * terms.inv_diff()
    if any(c != 0.0 for c in d2.coefficients):
        out = out + d2(terms.s) * terms.green()
    return out


def correction_rhs_variable_kappa(
    seg: Segment, profile: IntensityProfile, coeffs: CoefficientBundle, x, cfg: KernelConfig = DEFAULT
) -> np.ndarray:
    """Right-hand side for -div(kappa grad w) = F when u = (E G / kappa + w) / 4pi."""
    kap, gk, lk = coeffs.evaluate(x)
    terms = _SegmentTerms(seg, x, cfg)
    G = terms.green()
    dG = terms.grad_green(seg.tau)
    E = profile(terms.s)
    f1 = profile.derivative(1)(terms.s)
    f2 = profile.derivative(2)(terms.s)
    dE = f1[..., None] * seg.tau
    dE_dk = np.einsum("...i,...i->...", dE, gk)
    gk2 = np.einsum("...i,...i->...", gk, gk)
    scalar = f2 - (E * lk + dE_dk) / kap + E * gk2 / kap**2
    vec = 2.0 * dE - (E / kap)[..., None] * gk
    return scalar * G + np.einsum("...i,...i->...", vec, dG)


def correction_rhs_infinite(profile: IntensityProfile, axis: Axis, x, cfg: KernelConfig = DEFAULT) -> np.ndarray:
    """f''(z) ln r for a line through the domain; z is arclength along ``axis``."""
    s, _ = axis.offset(x)
    return profile.derivative(2)(s) * green_infinite_line(axis.point, axis.direction, x, cfg)


def _segments(network: LineNetwork | None):
    if network is None:
        return ()
    return zip(network.segments, network.intensities)


def singular_sum(network: LineNetwork | None, x, cfg: KernelConfig = DEFAULT, coeffs: CoefficientBundle | None = None):
    """sum_i E_i(f) G_i (divided by kappa when ``coeffs`` is given)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for seg, prof in _segments(network):
        terms = _SegmentTerms(seg, x, cfg)
        out += prof(terms.s) * terms.green()
    if coeffs is not None:
        out = out / coeffs.evaluate(x)[0]
    return out


def grad_singular_sum(network: LineNetwork | None, x, cfg: KernelConfig = DEFAULT) -> np.ndarray:
    """sum_i [grad E_i(f) G_i + E_i(f) grad G_i] for kappa = 1."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for seg, prof in _segments(network):
        terms = _SegmentTerms(seg, x, cfg)
        f1 = prof.derivative(1)(terms.s)
        out += prof(terms.s)[..., None] * terms.grad_green(seg.tau)
        if np.any(f1 != 0.0):
            out += (f1 * terms.green())[..., None] * seg.tau
    return out


def singular_part(network: LineNetwork | None, x, cfg: KernelConfig = DEFAULT, coeffs: CoefficientBundle | None = None):
    return singular_sum(network, x, cfg, coeffs) / FOUR_PI


def grad_singular_part(network: LineNetwork | None, x, cfg: KernelConfig = DEFAULT) -> np.ndarray:
    return grad_singular_sum(network, x, cfg) / FOUR_PI


def correction_rhs(network: LineNetwork | None, x, cfg: KernelConfig = DEFAULT, coeffs: CoefficientBundle | None = None):
    """Network right-hand side for the correction w (sum over segments)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for seg, prof in _segments(network):
        if coeffs is None:
            if prof.is_constant:
                continue
            out += correction_rhs_segment(seg, prof, x, cfg)
        else:
            out += correction_rhs_variable_kappa(seg, prof, coeffs, x, cfg)
    return out


def dirichlet_data_w(uD: Callable[[np.ndarray], np.ndarray], network: LineNetwork | None, x, cfg: KernelConfig = DEFAULT):
    """w_D = 4 pi u_D - sum_i E_i(f) G_i."""
    x = np.asarray(x, dtype=float)
    return FOUR_PI * np.asarray(uD(x), dtype=float) - singular_sum(network, x, cfg)


def count_clamped(network: LineNetwork | None, x, cfg: KernelConfig = DEFAULT) -> int:
    """Number of points closer than ``clamp_dist`` to some segment axis inside its span."""
    if cfg.clamp_dist <= 0.0 or network is None:
        return 0
    x = np.asarray(x, dtype=float)
    hit = np.zeros(x.shape[:-1], dtype=bool)
    for seg in network.segments:
        s, p = axis_offset(seg, x)
        rho2 = np.einsum("...i,...i->...", p, p)
        hit |= (rho2 < cfg.clamp_dist**2) & (s >= -cfg.clamp_dist) & (s <= seg.L + cfg.clamp_dist)
    return int(hit.sum())
