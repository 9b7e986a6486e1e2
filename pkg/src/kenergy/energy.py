"""The toric K-energy ``F(u) = L(u) - int_P log det(Hess u)`` and its pieces.

``u`` is a convex function on the moment polytope, either sampled on a grid
(:class:`GridConvexFn`) or piecewise affine (:class:`PwaConvexFn`).  Only the
regular (Alexandrov) part of the Hessian enters the entropy term, so kinks of
``u`` are invisible to it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from kenergy.convex_core import (
    GridConvexFn,
    PwaConvexFn,
    legendre,
    sample_on,
    second_derivative_decompose,
)
from kenergy.errors import MassDeficit, NonConvexDirection
from kenergy.polytope import Polytope, as_polytope

DET_FLOOR = 1e-14
DEGENERATE_MEASURE = 1e-3
MASS_TOL = 1e-4
MARGIN_2D = 2


@dataclass(frozen=True)
class NormalizationConvention:
    """Coefficients of ``L(u) = c_boundary int_{dP} u dsigma - c_interior int_P u dy``."""

    name: str
    c_boundary: float
    c_interior: float

    @classmethod
    def make(cls, name: str, P) -> "NormalizationConvention":
        P = as_polytope(P)
        ratio = P.boundary_volume / P.volume
        if name == "donaldson":
            return cls(name, 1.0, ratio)
        if name == "paper-lemma":
            return cls(name, 1.0 / ratio, 1.0)
        raise ValueError(f"unknown convention {name!r}; use 'donaldson' or 'paper-lemma'")


def _convention(conv, P) -> NormalizationConvention:
    if isinstance(conv, NormalizationConvention):
        return conv
    return NormalizationConvention.make(conv or "donaldson", P)


@dataclass
class EnergyReport:
    linear_part: float
    entropy_dual: float
    total: float
    convention: str
    finite: bool
    entropy_primal: Optional[float] = None
    newtonian: Optional[float] = None
    newtonian_residual: Optional[float] = None
    notes: list = field(default_factory=list)

    def to_record(self) -> dict:
        rec = asdict(self)
        for k, v in rec.items():
            if isinstance(v, float) and not np.isfinite(v):
                rec[k] = "inf" if v > 0 else "-inf"
        return rec


# ---------------------------------------------------------------------------
# linear part

def linear_part(u, P="unit-interval", conv="donaldson") -> float:
    P = as_polytope(P)
    c = _convention(conv, P)
    if isinstance(u, PwaConvexFn):
        bdry, inner = P.integrate_boundary_pwa(u), P.integrate_pwa(u)
    else:
        bdry, inner = P.integrate_boundary_grid(u), P.integrate_grid(u)
    return c.c_boundary * bdry - c.c_interior * inner


# ---------------------------------------------------------------------------
# entropy

def _log_det_1d(u: GridConvexFn):
    dec = second_derivative_decompose(u)
    rho = dec.regular_density
    degenerate = float(np.sum(rho < DET_FLOOR) * u.step)
    return np.log(np.maximum(rho, DET_FLOOR)), u.step, degenerate


def _interior_log_det_2d(values: np.ndarray, h1: float, h2: float, margin: int):
    v = values
    d11 = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / h1**2
    d22 = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h2**2
    d12 = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * h1 * h2)
    tr, det = d11 + d22, d11 * d22 - d12**2
    disc = np.sqrt(np.maximum(tr * tr / 4 - det, 0.0))
    lam1 = np.maximum(tr / 2 + disc, DET_FLOOR)
    lam2 = np.maximum(tr / 2 - disc, DET_FLOOR)
    logdet = np.log(lam1) + np.log(lam2)
    degenerate = lam1 * lam2 <= DET_FLOOR
    m = margin - 1  # the stencils already drop one layer
    sl = (slice(m, logdet.shape[0] - m), slice(m, logdet.shape[1] - m))
    return logdet[sl], degenerate[sl]


def _coarsen(v: np.ndarray) -> np.ndarray:
    n1, n2 = (v.shape[0] // 2) * 2, (v.shape[1] // 2) * 2
    v = v[:n1, :n2]
    return 0.25 * (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2])


def _entropy_2d(u: GridConvexFn, margin: int = MARGIN_2D):
    """Margin-excluded midpoint sums at three cell sizes, extrapolated in h.

    Error model ``I(h) = I + a h log(1/h) + b h``.
    """
    v = np.asarray(u.values)
    (a1, b1), (a2, b2) = u.domain
    levels = []
    degenerate_measure = 0.0
    for k in range(3):
        h1, h2 = (b1 - a1) / v.shape[0], (b2 - a2) / v.shape[1]
        if min(v.shape) < 2 * margin + 3:
            break
        logdet, deg = _interior_log_det_2d(v, h1, h2, margin)
        levels.append((np.sqrt(h1 * h2), -np.sum(logdet) * h1 * h2))
        if k == 0:
            degenerate_measure = float(np.sum(deg) * h1 * h2)
        v = _coarsen(v)
    if len(levels) < 3:
        return levels[0][1], degenerate_measure
    A = np.array([[1.0, h * np.log(1 / h), h] for h, _ in levels])
    rhs = np.array([val for _, val in levels])
    return float(np.linalg.solve(A, rhs)[0]), degenerate_measure


def entropy_dual(u, P=None) -> float:
    """``-int_P log det(regular Hessian of u)``; ``inf`` when that Hessian degenerates."""
    if isinstance(u, PwaConvexFn):
        return float("inf")
    if P is not None:
        as_polytope(P).check_grid(u)
    u.require_convex()
    if u.dim == 1:
        logs, h, degenerate = _log_det_1d(u)
        if degenerate > DEGENERATE_MEASURE:
            return float("inf")
        return float(-np.sum(logs) * h)
    val, degenerate = _entropy_2d(u)
    if degenerate > DEGENERATE_MEASURE:
        return float("inf")
    return val


def entropy_primal(phi: GridConvexFn) -> float:
    """``int rho log rho dx`` for the density of ``phi''`` over its window.

    ``inf`` when the second derivative has atoms.  Cells with ``rho = 0``
    contribute nothing.  Mass outside the window is ignored, so the value
    depends on the window when ``phi''`` is not negligible at its edges.
    """
    dec = second_derivative_decompose(phi)
    if dec.atoms:
        return float("inf")
    rho = np.maximum(dec.regular_density, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(rho > 0, rho * np.log(np.where(rho > 0, rho, 1.0)), 0.0)
    return float(np.sum(integrand) * dec.step)


def newtonian_energy(phi: GridConvexFn) -> float:
    """``(1/4) int int |x - y| dmu dmu`` for ``mu = phi''``, via ``(1/2) int F (1 - F) dx``."""
    if phi.dim != 1:
        raise ValueError("the Newtonian energy is computed in 1-D")
    s = phi.slopes()
    if phi.tail_slopes is not None:
        lo, hi = phi.tail_slopes
    else:
        lo, hi = float(s[0]), float(s[-1])
    mass = hi - lo
    if abs(mass - 1.0) > MASS_TOL:
        raise MassDeficit(f"total mass {mass:.6g} is not 1")
    F = np.clip(s - lo, 0.0, 1.0)
    return float(0.5 * np.sum(F * (1 - F)) * phi.step)


# ---------------------------------------------------------------------------
# assembled functional

def _is_unit_interval(P: Polytope) -> bool:
    return P.dim == 1 and np.allclose(P.bounds[0], (0.0, 1.0))


def mabuchi(u, P="unit-interval", conv="donaldson", primal: bool = True, dual_size=None) -> EnergyReport:
    """K-energy report for ``u``.

    On the unit interval (and with ``primal``) the report also carries the
    primal entropy of ``phi = u*``, its Newtonian energy, and the residual of
    ``L_paper-lemma(u) = E_0(phi'')``; ``dual_size`` sets the resolution of
    ``phi``.
    """
    P = as_polytope(P)
    c = _convention(conv, P)
    lin = linear_part(u, P, c)
    ent = entropy_dual(u, P)
    finite = bool(np.isfinite(ent))
    rep = EnergyReport(lin, ent, lin + ent if finite else float("inf"), c.name, finite)
    if primal and isinstance(u, GridConvexFn) and _is_unit_interval(P):
        phi = legendre(u, n_out=dual_size)
        rep.entropy_primal = entropy_primal(phi)
        try:
            rep.newtonian = newtonian_energy(phi)
        except MassDeficit as exc:
            rep.notes.append(str(exc))
        else:
            lin_lemma = linear_part(u, P, "paper-lemma")
            rep.newtonian_residual = abs(lin_lemma - rep.newtonian)
    return rep


def mabuchi_total(u, P="unit-interval", conv="donaldson") -> float:
    return mabuchi(u, P, conv, primal=False).total


# ---------------------------------------------------------------------------
# slope along rays

@dataclass
class SlopeResult:
    times: np.ndarray
    estimates: np.ndarray
    energies: np.ndarray
    limit_prediction: float
    corrections: np.ndarray
    correction_bounds: np.ndarray
    sandwich_ok: bool
    convention: str


def slope_estimate(ray, P="unit-interval", conv="donaldson", T_list=(10.0, 100.0, 1000.0)) -> SlopeResult:
    """``M(u_0 + t v) / t`` along a ray against the predicted limit ``L(v)``.

    Also checks the bound behind the limit: with ``A = (Hess u_0)^{-1}`` the
    entropy change ``int log det(I + t A Hess v)`` lies between 0 and
    ``Vol(P) n log t + int log det(I + A Hess v)`` for ``t >= 1``.
    """
    from kenergy.geodesic import GeodesicSegment

    if not isinstance(ray, GeodesicSegment):
        raise TypeError("slope_estimate expects a GeodesicSegment")
    P = as_polytope(P)
    c = _convention(conv, P)
    if not ray.direction_is_convex():
        raise NonConvexDirection("the ray direction is not convex")
    base = ray.u0 if isinstance(ray.u0, GridConvexFn) else None
    if base is None:
        raise TypeError("the ray must start from a grid function")
    prediction = linear_part(ray.v, P, c)
    ent0 = entropy_dual(base, P)

    ts = np.asarray(T_list, dtype=float)
    energies, corrections, bounds = [], [], []
    hess_v = _regular_hessian(ray.v, base)
    hess_0 = _regular_hessian(base, base)
    for t in ts:
        ut = ray.at(t)
        energies.append(mabuchi_total(ut, P, c))
        corr = ent0 - entropy_dual(ut, P)
        corrections.append(corr)
        if base.dim == 1 and t >= 1:
            ratio = hess_v / hess_0
            const = float(np.sum(np.log1p(ratio)) * base.step)
            bounds.append(P.volume * P.dim * np.log(t) + const)
        else:
            bounds.append(np.nan)
    corrections = np.array(corrections)
    bounds = np.array(bounds)
    tol = 1e-9
    ok = bool(np.all(corrections >= -tol) and np.all((corrections <= bounds + tol) | np.isnan(bounds)))
    energies = np.array(energies)
    return SlopeResult(ts, energies / ts, energies, prediction, corrections, bounds, ok, c.name)


def _regular_hessian(f, like: GridConvexFn) -> np.ndarray:
    g = sample_on(f, like)
    if g.dim != 1:
        return np.full(g.values.shape, np.nan)
    return second_derivative_decompose(g).regular_density
