"""Geodesics as affine paths ``u_t = u_0 + t v`` of Legendre duals, and the
explicit non-orbit geodesic built from the kink ``v = max(0, y - 1/2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kenergy.convex_core import (
    GridConvexFn,
    PwaConvexFn,
    combine,
    is_affine,
    phi0,
    sample_on,
    second_derivative_decompose,
)
from kenergy.errors import DomainMismatch, NonConvexInput

CONVEXITY_T_SAMPLES = 17
LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class GeodesicSegment:
    """``u_t = u0 + t v`` for ``t`` in ``t_range`` (``t_range[1]`` may be ``inf``)."""

    u0: object
    v: object
    t_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        lo, hi = (float(t) for t in self.t_range)
        if not lo <= hi:
            raise ValueError("empty t_range")
        object.__setattr__(self, "t_range", (lo, hi))
        if isinstance(self.u0, GridConvexFn) and isinstance(self.v, GridConvexFn):
            if self.u0.domain != self.v.domain or self.u0.values.shape != self.v.values.shape:
                raise DomainMismatch("u0 and v live on different grids")
        if isinstance(self.u0, PwaConvexFn) and isinstance(self.v, PwaConvexFn):
            if self.u0.dim != self.v.dim:
                raise DomainMismatch("u0 and v have different dimensions")
        self._validate()

    def at(self, t: float):
        if isinstance(self.u0, PwaConvexFn) and isinstance(self.v, PwaConvexFn):
            if t < 0:
                raise ValueError("negative t on a piecewise-affine path")
            return self.u0 + self.v.scaled(t)
        return combine(self.u0, self.v, t=t)

    def direction_is_convex(self) -> bool:
        if isinstance(self.v, PwaConvexFn):
            return True
        return self.v.is_convex()

    def _validate(self):
        lo, hi = self.t_range
        if self.direction_is_convex() and (lo >= 0 or np.isinf(hi)):
            # u_t is convex for every t >= 0 once u0 is; for a finite range
            # convexity at both ends suffices
            ts = [max(lo, 0.0)] if np.isinf(hi) else [lo, hi]
        elif np.isinf(hi):
            raise NonConvexInput("a ray needs a convex direction")
        else:
            ts = np.linspace(lo, hi, CONVEXITY_T_SAMPLES)
        for t in ts:
            ut = self.at(t)
            if isinstance(ut, GridConvexFn) and not ut.is_convex():
                raise NonConvexInput(f"u_t is not convex at t = {t:.6g}")

    def to_record(self) -> dict:
        def rec(f):
            out = f.to_record()
            out["kind"] = "pwa" if isinstance(f, PwaConvexFn) else "grid"
            return out

        hi = self.t_range[1]
        return {"u0": rec(self.u0), "v": rec(self.v), "t_range": [self.t_range[0], "inf" if np.isinf(hi) else hi]}


def geodesic_between(u0, u1) -> GeodesicSegment:
    """Segment from ``u0`` to ``u1`` (direction ``u1 - u0``, ``t`` in [0, 1])."""
    if isinstance(u0, PwaConvexFn) and isinstance(u1, PwaConvexFn):
        raise DomainMismatch("sample one endpoint on a grid to form a difference")
    base = u0 if isinstance(u0, GridConvexFn) else u1
    a = sample_on(u0, base)
    b = sample_on(u1, base)
    if a.domain != b.domain:
        raise DomainMismatch("endpoints live on different domains")
    v = GridConvexFn(base.domain, b.values - a.values)
    return GeodesicSegment(a, v, (0.0, 1.0))


def ray(u0, v) -> GeodesicSegment:
    return GeodesicSegment(u0, v, (0.0, float("inf")))


def counterexample_phi(t: float, x):
    """The explicit geodesic ``phi_t = (u_0 + t v)^*`` for ``v = max(0, y - 1/2)``.

    ``phi_0`` for ``x <= 0``, ``log 2 + x/2`` on ``[0, t]``, and
    ``phi_0(x - t) + t/2`` for ``x >= t``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 0, phi0(x), np.where(x <= t, LOG2 + x / 2, phi0(x - t) + t / 2))
    return out if out.ndim else float(out)


def symmetric_double(t: float, x):
    """Symmetric form of the counterexample on the dual interval [-1, 1].

    ``log(e^-x + e^x)`` for ``x <= 0``, ``log 2`` on ``[0, t]`` and the same
    profile shifted by ``t`` beyond; the dual is the symmetric entropy plus
    ``t max(0, y)``.  (Doubling ``phi_t`` and subtracting ``x`` gives this
    shape only after rescaling ``x`` by 2.)
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    x = np.asarray(x, dtype=float)
    prof = lambda z: np.logaddexp(-z, z)  # noqa: E731
    out = np.where(x <= 0, prof(x), np.where(x <= t, LOG2, prof(x - t)))
    return out if out.ndim else float(out)


def counterexample_segment(u0_grid: GridConvexFn, t_max: float = 1.0) -> GeodesicSegment:
    from kenergy.convex_core import counterexample_direction

    return GeodesicSegment(u0_grid, sample_on(counterexample_direction(), u0_grid), (0.0, t_max))


def c11_seminorm(phi: GridConvexFn) -> float:
    """Largest centred second difference quotient; ``inf`` if ``phi''`` has an atom."""
    if phi.values.size < 3:
        return 0.0
    dec = second_derivative_decompose(phi)
    if dec.atoms:
        return float("inf")
    return float(np.max(np.diff(phi.values, 2)) / phi.step**2)


def is_torus_orbit(seg: GeodesicSegment, tol=None) -> bool:
    """A segment is a torus orbit iff its Legendre direction is affine."""
    v = seg.v
    if isinstance(v, PwaConvexFn):
        dom = seg.u0.domain[0] if isinstance(seg.u0, GridConvexFn) and seg.u0.dim == 1 else None
        if isinstance(seg.u0, GridConvexFn) and seg.u0.dim == 2:
            dom = seg.u0.domain
        return is_affine(v, domain=dom)
    if tol is None:
        tol = 1e-8 * v.value_scale
    return is_affine(v, tol)


def joint_c11_bound(ts, xs, func=counterexample_phi) -> float:
    """Largest second difference quotient of ``(t, x) -> func(t, x)`` over a grid.

    Covers the pure ``tt``, ``xx`` and mixed ``tx`` directions.
    """
    ts, xs = np.asarray(ts, dtype=float), np.asarray(xs, dtype=float)
    F = np.array([func(t, xs) for t in ts])
    ht, hx = ts[1] - ts[0], xs[1] - xs[0]
    dtt = np.abs(np.diff(F, 2, axis=0)) / ht**2
    dxx = np.abs(np.diff(F, 2, axis=1)) / hx**2
    dtx = np.abs(F[1:, 1:] - F[1:, :-1] - F[:-1, 1:] + F[:-1, :-1]) / (ht * hx)
    return float(max(dtt.max(), dxx.max(), dtx.max()))
