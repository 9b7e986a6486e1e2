"""Convex functions on grids, piecewise-affine convex functions, and the
Legendre-Fenchel transform between them.

Grids are cell-centred: a domain ``[a, b]`` split into ``N`` cells of width
``h = (b - a) / N`` is sampled at the midpoints ``a + (i + 1/2) h``.  Values
at the domain ends are never sampled; where they are needed they come from
linear extrapolation of the two outermost samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from kenergy.errors import DegenerateHessian, DomainMismatch, NonConvexInput

DEFAULT_WINDOW = (-30.0, 30.0)
DEFAULT_N_1D = 4096
DEFAULT_N_2D = 256
CONV_RTOL = 1e-10

# The intermediate dual grid of ``biconjugate`` is this many times finer than
# the input grid (capped), since the primal function is only recovered where
# its slope exceeds the dual grid step.
BICONJ_OVERSAMPLE = 256
BICONJ_MAX_DUAL = 2**20


def cell_centers(a: float, b: float, n: int) -> np.ndarray:
    h = (b - a) / n
    return a + (np.arange(n) + 0.5) * h


def _as_domain(domain) -> tuple:
    arr = np.asarray(domain, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != 2 or arr.shape[0] not in (1, 2):
        raise ValueError(f"domain must be (a, b) or ((a1, b1), (a2, b2)), got {domain!r}")
    if np.any(arr[:, 1] <= arr[:, 0]):
        raise ValueError(f"empty domain {domain!r}")
    return tuple((float(a), float(b)) for a, b in arr)


@dataclass(frozen=True)
class GridConvexFn:
    """Samples of a (candidate) convex function on a cell-centred grid.

    ``tail_slopes`` marks a function on the whole real line represented on a
    truncation window: outside the window it continues affinely with slope
    ``s_minus`` on the left and ``s_plus`` on the right.
    """

    domain: tuple
    values: np.ndarray
    tail_slopes: Optional[tuple] = None

    def __post_init__(self):
        dom = _as_domain(self.domain)
        vals = np.array(self.values, dtype=float)
        if vals.ndim != len(dom):
            raise ValueError(f"values of ndim {vals.ndim} do not match a {len(dom)}-D domain")
        if vals.size == 0 or not np.all(np.isfinite(vals)):
            raise ValueError("values must be a non-empty array of finite numbers")
        vals.setflags(write=False)
        object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "values", vals)
        if self.tail_slopes is not None:
            if len(dom) != 1:
                raise ValueError("tail slopes only make sense in 1-D")
            lo, hi = (float(s) for s in self.tail_slopes)
            if lo > hi:
                raise ValueError("tail slopes must satisfy s_minus <= s_plus")
            object.__setattr__(self, "tail_slopes", (lo, hi))
            s = self.slopes()
            tol = self.conv_tol / self.step
            if s.size and (lo > s[0] + tol or s[-1] > hi + tol):
                raise ValueError(
                    f"tail slopes {self.tail_slopes} do not bracket the grid slopes "
                    f"[{s[0]:.6g}, {s[-1]:.6g}]"
                )

    @classmethod
    def from_function(cls, func: Callable, domain, n=None, tail_slopes=None) -> "GridConvexFn":
        dom = _as_domain(domain)
        if len(dom) == 1:
            n = DEFAULT_N_1D if n is None else int(n)
            x = cell_centers(*dom[0], n)
            return cls(dom, func(x), tail_slopes)
        n = DEFAULT_N_2D if n is None else n
        n1, n2 = (n, n) if np.isscalar(n) else n
        y1 = cell_centers(*dom[0], n1)
        y2 = cell_centers(*dom[1], n2)
        Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
        return cls(dom, func(Y1, Y2), tail_slopes)

    @property
    def dim(self) -> int:
        return len(self.domain)

    @property
    def grid_size(self):
        return self.values.shape[0] if self.dim == 1 else self.values.shape

    @property
    def interval(self) -> tuple:
        return self.domain[0]

    @property
    def steps(self) -> tuple:
        return tuple((b - a) / n for (a, b), n in zip(self.domain, self.values.shape))

    @property
    def step(self) -> float:
        return self.steps[0]

    @property
    def nodes(self) -> np.ndarray:
        a, b = self.domain[0]
        return cell_centers(a, b, self.values.shape[0])

    def axes(self) -> list:
        return [cell_centers(a, b, n) for (a, b), n in zip(self.domain, self.values.shape)]

    @property
    def value_scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.values))))

    @property
    def conv_tol(self) -> float:
        return CONV_RTOL * self.value_scale

    def slopes(self) -> np.ndarray:
        """Difference quotients between neighbouring samples (1-D)."""
        return np.diff(self.values) / self.step

    def second_differences(self, axis=0) -> np.ndarray:
        return np.diff(self.values, n=2, axis=axis)

    def is_convex(self) -> bool:
        tol = self.conv_tol
        v = self.values
        if self.dim == 1:
            return v.size < 3 or bool(np.min(np.diff(v, 2)) >= -tol)
        # axis and diagonal directions; a centred mixed difference is not
        # sign-definite for sampled convex kinks
        checks = [np.diff(v, 2, axis=0), np.diff(v, 2, axis=1)]
        if min(v.shape) >= 3:
            checks.append(v[2:, 2:] - 2 * v[1:-1, 1:-1] + v[:-2, :-2])
            checks.append(v[2:, :-2] - 2 * v[1:-1, 1:-1] + v[:-2, 2:])
        return all(c.size == 0 or np.min(c) >= -tol for c in checks)

    def require_convex(self) -> None:
        if not self.is_convex():
            if self.dim == 1:
                worst = float(np.min(np.diff(self.values, 2)))
                raise NonConvexInput(f"second difference {worst:.3e} below -{self.conv_tol:.1e}")
            raise NonConvexInput("discrete convexity fails beyond tolerance")

    def boundary_values(self) -> tuple:
        """Linear extrapolation of the samples to the two domain endpoints."""
        v = self.values
        if v.size == 1:
            return float(v[0]), float(v[0])
        return float(1.5 * v[0] - 0.5 * v[1]), float(1.5 * v[-1] - 0.5 * v[-2])

    def __call__(self, y):
        """Piecewise-linear evaluation (1-D).

        Inside the domain the samples are interpolated and linearly
        extrapolated to the endpoints; beyond it the tails apply, or ``inf``
        if the function has compact domain.
        """
        if self.dim != 1:
            raise NotImplementedError("pointwise evaluation is 1-D only")
        y = np.asarray(y, dtype=float)
        x, v = self.nodes, self.values
        a, b = self.interval
        if v.size == 1:
            out = np.full_like(y, v[0])
            s_lo = s_hi = 0.0
        else:
            out = np.interp(y, x, v)
            s = self.slopes()
            s_lo, s_hi = s[0], s[-1]
            left, right = y < x[0], y > x[-1]
            out = np.where(left, v[0] + s_lo * (y - x[0]), out)
            out = np.where(right, v[-1] + s_hi * (y - x[-1]), out)
        if self.tail_slopes is not None:
            ta, tb = self.tail_slopes
            ea, eb = v[0] + s_lo * (a - x[0]), v[-1] + s_hi * (b - x[-1])
            out = np.where(y < a, ea + ta * (y - a), out)
            out = np.where(y > b, eb + tb * (y - b), out)
        else:
            out = np.where((y < a) | (y > b), np.inf, out)
        return out if out.ndim else float(out)

    def replace_values(self, values, tail_slopes="keep") -> "GridConvexFn":
        tails = self.tail_slopes if tail_slopes == "keep" else tail_slopes
        return GridConvexFn(self.domain, values, tails)

    def to_record(self) -> dict:
        rec = {
            "dim": self.dim,
            "domain": [list(d) for d in self.domain],
            "grid_size": list(self.values.shape) if self.dim == 2 else int(self.values.shape[0]),
            "values": self.values.tolist(),
        }
        if self.tail_slopes is not None:
            rec["tail_slopes"] = list(self.tail_slopes)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "GridConvexFn":
        dom = rec["domain"]
        if rec.get("dim", 1) == 1 and np.ndim(dom) == 2:
            dom = dom[0]
        vals = np.asarray(rec["values"], dtype=float)
        expected = rec.get("grid_size")
        if expected is not None and list(np.atleast_1d(expected)) != list(vals.shape):
            raise ValueError(f"grid_size {expected} does not match values of shape {vals.shape}")
        tails = rec.get("tail_slopes")
        return cls(dom, vals, tuple(tails) if tails is not None else None)


@dataclass(frozen=True)
class PwaConvexFn:
    """Maximum of finitely many affine forms ``<a_i, y> + b_i``."""

    gradients: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        g = np.array(self.gradients, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        b = np.array(self.offsets, dtype=float).reshape(-1)
        if g.shape[0] != b.shape[0] or g.shape[0] == 0:
            raise ValueError("need matching, non-empty gradients and offsets")
        if g.shape[1] == 1:
            g, b = _prune_lines(g[:, 0], b)
        g.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "gradients", g)
        object.__setattr__(self, "offsets", b)

    @classmethod
    def from_breakpoints(cls, breakpoints, slopes, intercept=0.0) -> "PwaConvexFn":
        """1-D function with slope ``slopes[i]`` between consecutive breakpoints.

        ``intercept`` is the value at ``y = 0`` of the leftmost piece.
        """
        bp = np.asarray(breakpoints, dtype=float).reshape(-1)
        sl = np.asarray(slopes, dtype=float).reshape(-1)
        if sl.size != bp.size + 1:
            raise ValueError("need exactly one more slope than breakpoints")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(np.diff(sl) <= 0):
            raise ValueError("slopes must be strictly increasing")
        offs = np.empty_like(sl)
        offs[0] = intercept
        for i in range(1, sl.size):
            offs[i] = offs[i - 1] + (sl[i - 1] - sl[i]) * bp[i - 1]
        return cls(sl[:, None], offs)

    @classmethod
    def from_affine_forms(cls, forms) -> "PwaConvexFn":
        grads = [np.atleast_1d(np.asarray(a, dtype=float)) for a, _ in forms]
        return cls(np.vstack(grads), [float(b) for _, b in forms])

    @classmethod
    def kink(cls, normal, level) -> "PwaConvexFn":
        """``max(0, <normal, y> - level)``."""
        a = np.atleast_1d(np.asarray(normal, dtype=float))
        return cls(np.vstack([np.zeros_like(a), a]), [0.0, -float(level)])

    @classmethod
    def affine(cls, gradient, offset=0.0) -> "PwaConvexFn":
        return cls(np.atleast_2d(np.asarray(gradient, dtype=float)), [float(offset)])

    @property
    def dim(self) -> int:
        return self.gradients.shape[1]

    @property
    def n_forms(self) -> int:
        return self.offsets.shape[0]

    def __call__(self, *y):
        if len(y) == 1 and self.dim > 1:
            pts = np.asarray(y[0], dtype=float)
            comps = [pts[..., k] for k in range(self.dim)]
        else:
            comps = [np.asarray(c, dtype=float) for c in y]
        if len(comps) != self.dim:
            raise ValueError(f"expected {self.dim} coordinates")
        vals = self.offsets.reshape((-1,) + (1,) * comps[0].ndim).copy()
        vals = vals + sum(
            self.gradients[:, k].reshape((-1,) + (1,) * comps[0].ndim) * comps[k]
            for k in range(self.dim)
        )
        out = vals.max(axis=0)
        return out if out.ndim else float(out)

    def __add__(self, other):
        if isinstance(other, PwaConvexFn):
            g = (self.gradients[:, None, :] + other.gradients[None, :, :]).reshape(-1, self.dim)
            b = (self.offsets[:, None] + other.offsets[None, :]).reshape(-1)
            return PwaConvexFn(g, b)
        return PwaConvexFn(self.gradients, self.offsets + float(other))

    __radd__ = __add__

    def scaled(self, s: float) -> "PwaConvexFn":
        if s < 0:
            raise ValueError("negative multiples of a convex function are not convex")
        return PwaConvexFn(self.gradients * s, self.offsets * s)

    def add_affine(self, gradient, offset=0.0) -> "PwaConvexFn":
        a = np.atleast_1d(np.asarray(gradient, dtype=float))
        return PwaConvexFn(self.gradients + a[None, :], self.offsets + offset)

    @property
    def breakpoints(self) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("breakpoints are 1-D only")
        s, b = self.gradients[:, 0], self.offsets
        return (b[:-1] - b[1:]) / (s[1:] - s[:-1])

    @property
    def slopes(self) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("slopes are 1-D only")
        return self.gradients[:, 0].copy()

    def sample(self, domain, n=None) -> GridConvexFn:
        if self.dim == 1:
            return GridConvexFn.from_function(self, domain, n)
        return GridConvexFn.from_function(lambda a, b: self(a, b), domain, n)

    def to_record(self) -> dict:
        if self.dim == 1:
            return {
                "breakpoints": self.breakpoints.tolist(),
                "slopes": self.slopes.tolist(),
                "intercept": float(self.offsets[0]),
            }
        return {"affine_forms": [[g.tolist(), float(b)] for g, b in zip(self.gradients, self.offsets)]}

    @classmethod
    def from_record(cls, rec: dict) -> "PwaConvexFn":
        if "affine_forms" in rec:
            return cls.from_affine_forms(rec["affine_forms"])
        return cls.from_breakpoints(rec["breakpoints"], rec["slopes"], rec.get("intercept", 0.0))


def _prune_lines(slopes, offsets):
    """Keep only the lines attaining max(s*y + b) on an interval of positive length."""
    order = np.lexsort((offsets, slopes))
    s, b = slopes[order], offsets[order]
    keep_s, keep_b = [], []
    for si, bi in zip(s, b):
        if keep_s and keep_s[-1] == si:
            keep_s.pop()
            keep_b.pop()
        while len(keep_s) >= 2:
            s1, b1, s2, b2 = keep_s[-2], keep_b[-2], keep_s[-1], keep_b[-1]
            # the middle line is hidden once the new line overtakes the first
            # one no later than the middle line does
            if (b1 - bi) * (s2 - s1) <= (b1 - b2) * (si - s1):
                keep_s.pop()
                keep_b.pop()
            else:
                break
        keep_s.append(si)
        keep_b.append(bi)
    return np.array(keep_s)[:, None], np.array(keep_b)


@dataclass(frozen=True)
class SecondDerivDecomposition:
    """Lebesgue decomposition of the second-derivative measure of a 1-D grid function."""

    nodes: np.ndarray
    step: float
    regular_density: np.ndarray
    atoms: list = field(default_factory=list)
    total_mass: float = 0.0
    atom_threshold: float = 0.0

    @property
    def atom_mass(self) -> float:
        return float(sum(m for _, m in self.atoms))

    @property
    def regular_mass(self) -> float:
        return float(np.sum(self.regular_density) * self.step)


# ---------------------------------------------------------------------------
# convex envelope

def _lower_hull_values(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    if x.size <= 2:
        return f.copy()
    hull = []
    for i in range(x.size):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # drop k if it lies on or above the chord j -> i
            if (f[k] - f[j]) * (x[i] - x[j]) >= (f[i] - f[j]) * (x[k] - x[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(x, x[hull], f[hull])


def convex_envelope(f: GridConvexFn, max_sweeps: int = 200) -> GridConvexFn:
    """Largest convex minorant of the samples.

    Exact in 1-D (monotone-chain lower hull).  In 2-D the lower hull is taken
    along rows, columns and both diagonals repeatedly until nothing changes,
    which approximates the 2-D envelope from above.
    """
    v = np.array(f.values, dtype=float)
    if f.dim == 1:
        return f.replace_values(_lower_hull_values(f.nodes, v))
    n1, n2 = v.shape
    h1, h2 = f.steps
    idx1, idx2 = np.arange(n1), np.arange(n2)
    for _ in range(max_sweeps):
        before = v.copy()
        for i in range(n1):
            v[i] = _lower_hull_values(idx2 * h2, v[i])
        for j in range(n2):
            v[:, j] = _lower_hull_values(idx1 * h1, v[:, j])
        for flip in (False, True):
            w = v[:, ::-1] if flip else v
            for off in range(-(n1 - 1), n2):
                d = np.diagonal(w, offset=off)
                if d.size < 3:
                    continue
                env = _lower_hull_values(np.arange(d.size, dtype=float), d)
                rows = np.arange(d.size) + max(0, -off)
                cols = rows + off
                w[rows, cols] = env
            v = w[:, ::-1] if flip else w
        if np.max(np.abs(v - before)) <= 1e-14 * f.value_scale:
            break
    return f.replace_values(v)


# ---------------------------------------------------------------------------
# Legendre transform

def _parabola_coeffs(v: np.ndarray, h: float):
    b = np.zeros_like(v)
    c = np.zeros_like(v)
    b[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    c[1:-1] = np.maximum(v[2:] - 2 * v[1:-1] + v[:-2], 0.0) / (2 * h * h)
    return b, c


def _refinement(y, b, c, h):
    """sup over |d| <= h of (y - b) d - c d^2."""
    r = y - b
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(c > 0, r / (2 * c), np.sign(r) * h)
    d = np.clip(d, -h, h)
    return r * d - c * d * d


def _legendre_1d(f: GridConvexFn, n_out, domain_out, refine):
    x, v, h = f.nodes, np.asarray(f.values), f.step
    n = v.size
    s = np.maximum.accumulate(np.diff(v) / h) if n > 1 else np.zeros(0)
    if f.tail_slopes is not None:
        dom_out = f.tail_slopes
        out_tails = None
    else:
        if n == 1:
            raise DomainMismatch("a single sample on a compact domain has no slope range")
        dom_out = (float(s[0]), float(s[-1]))
        if dom_out[1] - dom_out[0] <= 1e-12 * max(1.0, abs(dom_out[0])):
            pad = max(1.0, abs(dom_out[0]))
            dom_out = (dom_out[0] - pad, dom_out[1] + pad)
        out_tails = f.interval
    if domain_out is not None:
        dom_out = tuple(float(t) for t in np.asarray(domain_out, dtype=float).reshape(-1)[:2])
    n_out = n if n_out is None else int(n_out)
    y = cell_centers(dom_out[0], dom_out[1], n_out)

    # candidate points: samples, plus the extrapolated domain endpoints for
    # compact domains (their slopes coincide with the outermost chords)
    if f.tail_slopes is None:
        ea, eb = f.boundary_values()
        a, b_ = f.interval
        X = np.concatenate(([a], x, [b_]))
        F = np.concatenate(([ea], v, [eb]))
        S = np.concatenate(([s[0]], s, [s[-1]]))
        shift = 1
    else:
        X, F, S, shift = x, v, s, 0

    # first candidate whose right slope reaches y; ties go to the smaller x
    k = np.searchsorted(S, y, side="left")
    out = X[k] * y - F[k]
    if f.tail_slopes is not None:
        lo, hi = f.tail_slopes
        out = np.where((y < lo - 1e-15) | (y > hi + 1e-15), np.inf, out)

    if refine and n >= 3:
        bq, cq = _parabola_coeffs(v, h)
        node = k - shift
        for off in (-1, 0, 1):
            i = node + off
            ok = (i >= 1) & (i <= n - 2)
            ii = np.clip(i, 1, n - 2)
            g = x[ii] * y - v[ii] + _refinement(y, bq[ii], cq[ii], h)
            out = np.where(ok & np.isfinite(out), np.maximum(out, g), out)
        # next to a kink the steep local parabola stays active beyond the three
        # candidates kept here; the hull lies between the plain and refined values
        if n_out >= 3 and np.all(np.isfinite(out)) and np.min(np.diff(out, 2)) < 0:
            out = _lower_hull_values(y, out)
    return GridConvexFn(dom_out, out, out_tails) if np.all(np.isfinite(out)) else (dom_out, out, out_tails)


def _legendre_2d(f: GridConvexFn, n_out, domain_out):
    x1, x2 = f.axes()
    v = np.asarray(f.values)
    h1, h2 = f.steps
    if domain_out is None:
        d1 = np.diff(v, axis=0) / h1
        d2 = np.diff(v, axis=1) / h2
        domain_out = ((float(d1.min()), float(d1.max())), (float(d2.min()), float(d2.max())))
    dom = _as_domain(domain_out)
    m1, m2 = (v.shape if n_out is None else ((n_out, n_out) if np.isscalar(n_out) else n_out))
    y1 = cell_centers(*dom[0], m1)
    y2 = cell_centers(*dom[1], m2)
    # separable maximisation: first over x2 for every x1, then over x1
    g = np.max(x2[None, None, :] * y2[None, :, None] - v[:, None, :], axis=2)  # (n1, m2)
    out = np.max(x1[:, None, None] * y1[None, :, None] + g[:, None, :], axis=0)  # (m1, m2)
    return GridConvexFn(dom, out)


def legendre(f: GridConvexFn, n_out=None, domain_out=None, refine: bool = True) -> GridConvexFn:
    """Legendre-Fenchel transform ``f*(y) = sup_x (x y - f(x))`` of grid samples.

    The output is sampled on a uniform cell-centred grid over the closure of
    the slope range: the tail slopes for functions on the real line, the
    outermost chord slopes otherwise (then the output carries the input
    domain endpoints as its tail slopes).

    In 1-D the maximiser is located by a sorted-slope search; with
    ``refine`` the value is then improved by maximising against the local
    parabola through the maximiser and its two neighbours, which removes the
    O(h^2) sampling bias of the plain discrete transform.
    """
    f.require_convex()
    if f.dim == 2:
        return _legendre_2d(f, n_out, domain_out)
    res = _legendre_1d(f, n_out, domain_out, refine)
    if isinstance(res, tuple):
        raise DomainMismatch("requested dual grid leaves the slope range of a function on R")
    return res


def biconjugate(f, dual_size=None, refine: bool = False, domain=None):
    """``f**``; equals the convex envelope of the samples.

    Grid input: two transforms, the first onto an oversampled dual grid.
    Without refinement every value is a lower bound for the envelope, off by
    at most :func:`biconjugate_tolerance`.  Piecewise-affine input on an
    interval ``domain`` is conjugated exactly through its vertices.
    """
    if isinstance(f, PwaConvexFn):
        if domain is None:
            raise ValueError("a piecewise-affine biconjugate needs its interval")
        return legendre_pwa_dual(legendre_pwa(f, domain))
    env = convex_envelope(f)
    if f.dim == 2:
        return legendre(legendre(env, refine=refine), n_out=f.values.shape, domain_out=f.domain)
    n = f.values.size
    if n == 1:
        return env
    if dual_size is None:
        dual_size = min(max(n, BICONJ_OVERSAMPLE * n), BICONJ_MAX_DUAL)
    dual = legendre(env, n_out=dual_size, refine=refine)
    back = legendre(dual, n_out=n, domain_out=f.interval, refine=refine)
    return GridConvexFn(f.domain, back.values, f.tail_slopes)


def biconjugate_tolerance(f: GridConvexFn, dual_size=None) -> float:
    """Worst-case gap between the convex envelope and the unrefined 1-D biconjugate.

    Each subdifferential of the envelope lies within half a dual step of a dual
    node, and the affine pieces of ``f*`` have slopes inside the domain.
    """
    n = f.values.size
    if dual_size is None:
        dual_size = min(max(n, BICONJ_OVERSAMPLE * n), BICONJ_MAX_DUAL)
    s = np.diff(convex_envelope(f).values) / f.step
    if f.tail_slopes is not None:
        lo, hi = f.tail_slopes
    else:
        lo, hi = (float(s[0]), float(s[-1])) if s.size else (0.0, 0.0)
    a, b = f.interval
    return 0.5 * (hi - lo) / dual_size * (b - a) + 4 * np.finfo(float).eps * f.value_scale


def legendre_pwa(f: PwaConvexFn, domain) -> PwaConvexFn:
    """Exact conjugate of a 1-D piecewise-affine ``f`` restricted to ``domain``.

    The supremum is attained at a vertex (an endpoint or a breakpoint), so
    ``f*(y) = max_k (x_k y - f(x_k))``, itself piecewise affine on the line.
    """
    if f.dim != 1:
        raise NotImplementedError("exact piecewise-affine conjugates are 1-D")
    a, b = (float(t) for t in np.asarray(domain, dtype=float).reshape(-1)[:2])
    bp = f.breakpoints if f.n_forms > 1 else np.zeros(0)
    xs = np.concatenate(([a], bp[(bp > a) & (bp < b)], [b]))
    return PwaConvexFn(xs[:, None], -np.asarray(f(xs)))


def legendre_pwa_dual(g: PwaConvexFn) -> PwaConvexFn:
    """Conjugate of ``max_k (x_k y - c_k)``: the lower hull of the points ``(x_k, c_k)``.

    Returned as a piecewise-affine function; it is meaningful on
    ``[min x_k, max x_k]`` (outside, the true conjugate is ``+inf``).
    """
    if g.dim != 1:
        raise NotImplementedError("exact piecewise-affine conjugates are 1-D")
    xs, cs = g.gradients[:, 0], -g.offsets
    order = np.argsort(xs)
    xs, cs = xs[order], cs[order]
    if xs.size == 1:
        return PwaConvexFn.affine([0.0], cs[0])
    hull = _lower_hull_values(xs, cs)
    slopes = np.diff(hull) / np.diff(xs)
    keep = np.concatenate(([True], np.diff(slopes) > 1e-15 * max(1.0, float(np.max(np.abs(slopes))))))
    sl = slopes[keep]
    bp = xs[1:-1][keep[1:]]
    intercept = hull[0] - sl[0] * xs[0]
    return PwaConvexFn.from_breakpoints(bp, sl, intercept)


# ---------------------------------------------------------------------------
# second derivative

def atom_threshold(step: float, median_density: float) -> float:
    return 10.0 * step * (median_density + 1.0)


def second_derivative_decompose(f: GridConvexFn, margin: int = 3) -> SecondDerivDecomposition:
    """Split the second-derivative measure into a density and atoms.

    The jump of the difference quotient across sample ``j`` is the mass of
    cell ``j``.  A cell carries an atom when its jump exceeds the larger of
    the jumps two cells away on either side by more than half the atom
    threshold; runs of such cells form one atom (a kink between two samples
    splits its mass over both).  The density inside an atom is interpolated
    from the neighbouring regular cells.  Cells within ``margin`` of the ends
    of a compact domain are always regular: a density like ``1/dist`` to the
    boundary is legitimately unbounded there.
    """
    if f.dim != 1:
        raise NotImplementedError("second_derivative_decompose is 1-D")
    f.require_convex()
    x, h, v = f.nodes, f.step, np.asarray(f.values)
    n = v.size
    if n < 3:
        return SecondDerivDecomposition(x, h, np.zeros(n), [], 0.0, 0.0)
    s = np.diff(v) / h
    jumps = np.zeros(n)
    jumps[1:-1] = np.maximum(np.diff(s), 0.0)
    jumps[0], jumps[-1] = jumps[1], jumps[-2]
    density = jumps / h
    thr = atom_threshold(h, float(np.median(density)))

    lo, hi = (2, n - 3) if f.tail_slopes is not None else (max(2, margin), n - 1 - max(2, margin))
    flagged = np.zeros(n, dtype=bool)
    if hi >= lo:
        j = np.arange(lo, hi + 1)
        ref = np.maximum(jumps[j - 2], jumps[j + 2])
        flagged[j] = jumps[j] - ref > thr / 2

    atoms = []
    regular = jumps.copy()
    j = 0
    while j < n:
        if not flagged[j]:
            j += 1
            continue
        k = j
        while k + 1 < n and flagged[k + 1]:
            k += 1
        left, right = j - 1, k + 1
        idx = np.arange(j, k + 1)
        interp = np.interp(x[idx], [x[left], x[right]], [jumps[left], jumps[right]])
        excess = jumps[idx] - interp
        mass = float(np.sum(excess))
        if mass > thr:
            regular[idx] = interp
            loc = float(np.sum(x[idx] * np.maximum(excess, 0)) / np.sum(np.maximum(excess, 0)))
            atoms.append((loc, mass))
        j = k + 1

    if f.tail_slopes is not None:
        total = f.tail_slopes[1] - f.tail_slopes[0]
    else:
        total = float(s[-1] - s[0] + jumps[0] + jumps[-1])
    return SecondDerivDecomposition(x, h, regular / h, atoms, float(total), thr)


def check_inverse_hessian_relation(phi: GridConvexFn, u: GridConvexFn, y_range=None) -> float:
    """Largest ``|phi''(u'(y)) u''(y) - 1|`` over the dual samples in ``y_range``."""
    y, hy, uv = u.nodes, u.step, np.asarray(u.values)
    lo, hi = y_range if y_range is not None else (y[2], y[-3])
    idx = np.arange(1, uv.size - 1)
    idx = idx[(y[idx] >= lo) & (y[idx] <= hi)]
    if idx.size == 0:
        raise ValueError("no dual samples in the requested range")
    upp = (uv[idx + 1] - 2 * uv[idx] + uv[idx - 1]) / hy**2
    if np.any(upp < 1e-12):
        bad = float(y[idx][np.argmax(upp < 1e-12)])
        raise DegenerateHessian(f"u'' vanishes near y = {bad:.6g}")
    up = (uv[idx + 1] - uv[idx - 1]) / (2 * hy)
    xs, hx, pv = phi.nodes, phi.step, np.asarray(phi.values)
    ppp = (pv[2:] - 2 * pv[1:-1] + pv[:-2]) / hx**2
    inside = (up >= xs[1]) & (up <= xs[-2])
    if not np.all(inside):
        raise DomainMismatch("u'(y) leaves the sampled window of phi")
    phi_pp = np.interp(up, xs[1:-1], ppp)
    return float(np.max(np.abs(phi_pp * upp - 1.0)))


# ---------------------------------------------------------------------------
# small utilities

def _on_common_grid(f, g):
    if isinstance(f, PwaConvexFn) and isinstance(g, PwaConvexFn):
        raise DomainMismatch("two piecewise-affine functions have no grid to compare on")
    if isinstance(f, PwaConvexFn):
        g, f = f, g
        swap = True
    else:
        swap = False
    if isinstance(g, PwaConvexFn):
        if f.dim == 1:
            return f.nodes, np.asarray(f.values), g(f.nodes)
        Y1, Y2 = np.meshgrid(*f.axes(), indexing="ij")
        return None, np.asarray(f.values), g(Y1, Y2)
    if f.dim != g.dim:
        raise DomainMismatch("functions of different dimension")
    if f.dim == 2:
        if f.domain != g.domain or f.values.shape != g.values.shape:
            raise DomainMismatch("2-D comparisons need identical grids")
        return None, np.asarray(f.values), np.asarray(g.values)
    (a1, b1), (a2, b2) = f.interval, g.interval
    lo, hi = max(a1, a2), min(b1, b2)
    if lo >= hi:
        raise DomainMismatch(f"disjoint domains {f.interval} and {g.interval}")
    fine = f if f.step <= g.step else g
    x = fine.nodes
    x = x[(x >= lo) & (x <= hi)]
    if x.size == 0:
        x = np.array([(lo + hi) / 2])
    fx, gx = f(x), g(x)
    return x, (gx if swap else fx), (fx if swap else gx)


def linf_distance(f, g) -> float:
    """Sup-norm of ``f - g`` on the common domain (finer grid, linear interpolation)."""
    _, a, b = _on_common_grid(f, g)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def add_affine(f, slope, intercept: float = 0.0):
    """``f + l`` for ``l(y) = <slope, y> + intercept``."""
    if isinstance(f, PwaConvexFn):
        return f.add_affine(slope, intercept)
    if f.dim == 1:
        sl = float(np.asarray(slope).reshape(-1)[0])
        tails = None if f.tail_slopes is None else (f.tail_slopes[0] + sl, f.tail_slopes[1] + sl)
        return GridConvexFn(f.domain, f.values + sl * f.nodes + intercept, tails)
    a = np.asarray(slope, dtype=float).reshape(-1)
    Y1, Y2 = np.meshgrid(*f.axes(), indexing="ij")
    return f.replace_values(f.values + a[0] * Y1 + a[1] * Y2 + intercept)


def is_affine(f, tol: Optional[float] = None, domain=None) -> bool:
    """Affinity test: maximal deviation from the chord (1-D) or best plane (2-D)."""
    if isinstance(f, PwaConvexFn):
        if f.dim == 1 and domain is not None:
            a, b = np.asarray(domain, dtype=float).reshape(-1)[:2]
            bp = f.breakpoints
            return not np.any((bp > a) & (bp < b))
        if domain is not None:
            from kenergy.polytope import as_polytope

            return len(as_polytope(domain).pieces(f)) <= 1
        return f.n_forms == 1
    v = np.asarray(f.values)
    tol = 1e-8 * f.value_scale if tol is None else tol
    if f.dim == 1:
        x = f.nodes
        if v.size <= 2:
            return True
        chord = v[0] + (v[-1] - v[0]) * (x - x[0]) / (x[-1] - x[0])
        return bool(np.max(np.abs(v - chord)) <= tol)
    Y1, Y2 = np.meshgrid(*f.axes(), indexing="ij")
    A = np.column_stack([Y1.ravel(), Y2.ravel(), np.ones(v.size)])
    coef, *_ = np.linalg.lstsq(A, v.ravel(), rcond=None)
    return bool(np.max(np.abs(A @ coef - v.ravel())) <= tol)


def sample_on(f, like: GridConvexFn) -> GridConvexFn:
    """Samples of ``f`` (grid or piecewise-affine) on the grid of ``like``."""
    if isinstance(f, PwaConvexFn):
        if like.dim == 1:
            return GridConvexFn(like.domain, f(like.nodes))
        Y1, Y2 = np.meshgrid(*like.axes(), indexing="ij")
        return GridConvexFn(like.domain, f(Y1, Y2))
    if f.domain == like.domain and f.values.shape == like.values.shape:
        return f
    if f.dim != 1:
        raise DomainMismatch("2-D grids must coincide")
    return GridConvexFn(like.domain, f(like.nodes))


def combine(f, g, t: float = 1.0, s: float = 1.0) -> GridConvexFn:
    """``s f + t g`` sampled on the grid of whichever argument is a grid."""
    base = f if isinstance(f, GridConvexFn) else g
    if not isinstance(base, GridConvexFn):
        raise DomainMismatch("need at least one grid function")
    fv = sample_on(f, base).values
    gv = sample_on(g, base).values
    return GridConvexFn(base.domain, s * fv + t * gv)


def phi0(x):
    """The Fubini-Study potential ``log(1 + e^x)`` in logarithmic coordinates."""
    return np.logaddexp(0.0, x)


def u0(y):
    """Legendre dual of :func:`phi0`: ``y log y + (1 - y) log(1 - y)`` on [0, 1]."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0)
        b = np.where(y < 1, (1 - y) * np.log(np.where(y < 1, 1 - y, 1.0)), 0.0)
    out = a + b
    return out if out.ndim else float(out)


def counterexample_direction() -> PwaConvexFn:
    """The kink ``v(y) = max(0, y - 1/2)`` on [0, 1]."""
    return PwaConvexFn.kink([1.0], 0.5)
