"""Moment polytopes: intervals and convex lattice polygons.

The boundary carries the lattice measure: on a facet whose primitive integer
normal is ``n`` it is Lebesgue measure divided by ``|n|``.  Integrals of
piecewise-affine functions are exact (the polytope is cut into the regions
where a single affine form is maximal); grid functions use the midpoint rule
with boundary values extrapolated linearly from the two outermost layers.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd

import numpy as np

from kenergy.convex_core import GridConvexFn, PwaConvexFn
from kenergy.errors import BoundaryDivergence, DomainMismatch


@dataclass(frozen=True)
class Polytope:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[1] == 1:
            v = np.sort(v, axis=0)
            if v.shape[0] != 2 or v[1, 0] <= v[0, 0]:
                raise ValueError("a 1-D polytope is an interval [a, b] with a < b")
        elif v.shape[1] == 2:
            if v.shape[0] < 3:
                raise ValueError("a polygon needs at least three vertices")
            if not np.allclose(v, np.round(v)):
                raise ValueError("polygon vertices must be lattice points")
            v = np.round(v)
            if _signed_area(v) < 0:
                v = v[::-1].copy()
            if _signed_area(v) <= 0:
                raise ValueError("degenerate polygon")
            n = v.shape[0]
            for i in range(n):
                p, q, r = v[i - 1], v[i], v[(i + 1) % n]
                if _cross(q - p, r - q) < 0:
                    raise ValueError("polygon must be convex")
        else:
            raise ValueError("only dimensions 1 and 2 are supported")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def interval(cls, a: float = 0.0, b: float = 1.0) -> "Polytope":
        return cls([[a], [b]])

    @classmethod
    def polygon(cls, vertices) -> "Polytope":
        return cls(vertices)

    @classmethod
    def box(cls, a1, b1, a2, b2) -> "Polytope":
        return cls([[a1, a2], [b1, a2], [b1, b2], [a1, b2]])

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def bounds(self) -> tuple:
        return tuple((float(lo), float(hi)) for lo, hi in zip(self.vertices.min(0), self.vertices.max(0)))

    @property
    def volume(self) -> float:
        if self.dim == 1:
            return float(self.vertices[1, 0] - self.vertices[0, 0])
        return float(_signed_area(self.vertices))

    def facets(self) -> list:
        """``(p, q, density)`` per edge, ``density`` = lattice measure per unit length."""
        if self.dim == 1:
            return []
        out = []
        n = self.vertices.shape[0]
        for i in range(n):
            p, q = self.vertices[i], self.vertices[(i + 1) % n]
            d = np.round(q - p).astype(int)
            g = gcd(abs(int(d[0])), abs(int(d[1])))
            out.append((p, q, g / float(np.hypot(*d))))
        return out

    @property
    def boundary_volume(self) -> float:
        if self.dim == 1:
            return 2.0
        return float(sum(np.hypot(*(q - p)) * dens for p, q, dens in self.facets()))

    @property
    def is_box(self) -> bool:
        if self.dim == 1:
            return True
        (a1, b1), (a2, b2) = self.bounds
        return self.vertices.shape[0] == 4 and np.isclose(self.volume, (b1 - a1) * (b2 - a2))

    def moment(self) -> np.ndarray:
        """``int_P y dy``."""
        if self.dim == 1:
            a, b = self.bounds[0]
            return np.array([(b * b - a * a) / 2])
        return _polygon_centroid(self.vertices) * self.volume

    # -- piecewise-affine functions -------------------------------------

    def pieces(self, f: PwaConvexFn) -> list:
        """``(form index, region)`` for each form that is maximal on a set of positive measure."""
        _check_dim(self, f)
        out = []
        g, b = f.gradients, f.offsets
        if self.dim == 1:
            a, c = self.bounds[0]
            for i in range(f.n_forms):
                lo, hi = a, c
                for j in range(f.n_forms):
                    if j == i:
                        continue
                    ds, db = g[j, 0] - g[i, 0], b[j] - b[i]
                    # form j <= form i  <=>  ds * y <= -db
                    if ds > 0:
                        hi = min(hi, -db / ds)
                    elif ds < 0:
                        lo = max(lo, -db / ds)
                    elif db > 0 or (db == 0 and j < i):
                        hi = lo
                if hi - lo > 1e-14 * max(1.0, c - a):
                    out.append((i, np.array([[lo], [hi]])))
            return out
        for i in range(f.n_forms):
            poly = np.array(self.vertices, dtype=float)
            for j in range(f.n_forms):
                if j == i or poly.shape[0] == 0:
                    continue
                ds, db = g[j] - g[i], b[j] - b[i]
                if not np.any(ds):
                    if db > 0 or (db == 0 and j < i):
                        poly = np.zeros((0, 2))
                    continue
                poly = _clip(poly, ds, -db)
            if poly.shape[0] >= 3 and _signed_area(poly) > 1e-14 * self.volume:
                out.append((i, poly))
        return out

    def integrate_pwa(self, f: PwaConvexFn) -> float:
        total = 0.0
        for i, reg in self.pieces(f):
            if self.dim == 1:
                lo, hi = reg[0, 0], reg[1, 0]
                total += (hi - lo) * (f.gradients[i, 0] * (lo + hi) / 2 + f.offsets[i])
            else:
                c = _polygon_centroid(reg)
                total += _signed_area(reg) * (f.gradients[i] @ c + f.offsets[i])
        return float(total)

    def integrate_boundary_pwa(self, f: PwaConvexFn) -> float:
        _check_dim(self, f)
        if self.dim == 1:
            a, b = self.bounds[0]
            return float(f(a) + f(b))
        total = 0.0
        for p, q, dens in self.facets():
            # f restricted to the edge is a 1-D piecewise-affine function of s in [0, 1]
            d = q - p
            edge = PwaConvexFn(f.gradients @ d, f.gradients @ p + f.offsets)
            total += dens * np.hypot(*d) * Polytope.interval(0.0, 1.0).integrate_pwa(edge)
        return float(total)

    def min_pwa(self, f: PwaConvexFn) -> float:
        """Exact minimum over P (attained at a vertex of the cell decomposition)."""
        best = np.inf
        for i, reg in self.pieces(f):
            best = min(best, float(np.min(reg @ f.gradients[i] + f.offsets[i])))
        return best

    # -- grid functions ---------------------------------------------------

    def check_grid(self, u: GridConvexFn) -> None:
        if u.dim != self.dim:
            raise DomainMismatch("grid and polytope dimensions differ")
        if not self.is_box or not np.allclose(u.domain, self.bounds):
            raise DomainMismatch(f"grid domain {u.domain} is not the polytope {self.bounds}")

    def integrate_grid(self, u: GridConvexFn) -> float:
        self.check_grid(u)
        return float(np.sum(u.values) * np.prod(u.steps))

    def integrate_boundary_grid(self, u: GridConvexFn) -> float:
        self.check_grid(u)
        limit = 1.0 / min(u.steps) ** 2
        if self.dim == 1:
            ea, eb = u.boundary_values()
            vals = [ea, eb]
            total = ea + eb
        else:
            v = np.asarray(u.values)
            h1, h2 = u.steps
            edges = [
                1.5 * v[0, :] - 0.5 * v[1, :],
                1.5 * v[-1, :] - 0.5 * v[-2, :],
                1.5 * v[:, 0] - 0.5 * v[:, 1],
                1.5 * v[:, -1] - 0.5 * v[:, -2],
            ]
            vals = np.concatenate(edges)
            total = h2 * (edges[0].sum() + edges[1].sum()) + h1 * (edges[2].sum() + edges[3].sum())
        if np.max(np.abs(vals)) > limit:
            raise BoundaryDivergence("boundary values exceed the 1/h^2 scale")
        return float(total)

    def to_record(self) -> dict:
        if self.dim == 1:
            return {"interval": list(self.bounds[0])}
        return {"vertices": self.vertices.tolist()}


def as_polytope(p) -> Polytope:
    if isinstance(p, Polytope):
        return p
    if isinstance(p, str):
        named = {
            "unit-interval": Polytope.interval(0.0, 1.0),
            "unit-square": Polytope.box(0, 1, 0, 1),
            "symmetric-interval": Polytope.interval(-1.0, 1.0),
        }
        if p not in named:
            raise ValueError(f"unknown polytope name {p!r}")
        return named[p]
    if isinstance(p, dict):
        if "interval" in p:
            return Polytope.interval(*p["interval"])
        return Polytope.polygon(p["vertices"])
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        return Polytope.interval(*arr)
    return Polytope(arr)


def _check_dim(P: Polytope, f: PwaConvexFn) -> None:
    if f.dim != P.dim:
        raise DomainMismatch(f"{f.dim}-D function on a {P.dim}-D polytope")


def _cross(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _polygon_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = cr.sum() / 2
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6 * a)


def _clip(poly: np.ndarray, a: np.ndarray, c: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon to ``a . y <= c``."""
    if poly.shape[0] == 0:
        return poly
    out = []
    n = poly.shape[0]
    vals = poly @ a - c
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp, fq = vals[i], vals[(i + 1) % n]
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            out.append(p + (q - p) * (fp / (fp - fq)))
    return np.array(out) if out else np.zeros((0, 2))
