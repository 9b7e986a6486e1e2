"""Uniform K-stability margins, minimisation of the toric K-energy, and the
uniqueness certificate for a pair of minimisers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Optional

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from kenergy.convex_core import (
    GridConvexFn,
    PwaConvexFn,
    cell_centers,
    check_inverse_hessian_relation,
    convex_envelope,
    legendre,
    sample_on,
    second_derivative_decompose,
)
from kenergy.energy import NormalizationConvention, _convention, linear_part, mabuchi_total
from kenergy.errors import EmptyFamily, HypothesisFailed, NonConvergence
from kenergy.polytope import Polytope, _signed_area, as_polytope

NORM_ZERO = 1e-12
N_SEEDS = 5
MAX_LOG_STEP = 2.0


# ---------------------------------------------------------------------------
# relative norm

@dataclass(frozen=True)
class RelativeNorm:
    value: float
    minimizer_l: np.ndarray


def _candidate_points(u, P: Polytope):
    """Points where ``inf_P (u - l)`` is attained for every linear ``l``, with the values of ``u``."""
    if isinstance(u, PwaConvexFn):
        pts = [reg for i, reg in P.pieces(u)]
        pts = np.unique(np.round(np.vstack(pts), 15), axis=0)
        return pts, np.asarray(u(pts[:, 0]) if P.dim == 1 else u(pts))
    P.check_grid(u)
    if u.dim == 1:
        (a, b), (ea, eb) = u.interval, u.boundary_values()
        pts = np.concatenate(([a], u.nodes, [b]))[:, None]
        return pts, np.concatenate(([ea], u.values, [eb]))
    Y1, Y2 = np.meshgrid(*u.axes(), indexing="ij")
    return np.column_stack([Y1.ravel(), Y2.ravel()]), np.asarray(u.values).ravel()


def relative_norm(u, P="unit-interval", scale_inf_by_volume: bool = False) -> RelativeNorm:
    """``inf_l ( int_P (u - l) dy - inf_P (u - l) )`` over linear ``l(y) = <a, y>``.

    The quantity is convex in ``a``.  In 1-D it is minimised by bounded
    Brent/golden-section search over the slope range of ``u``; in 2-D by
    Nelder-Mead from five fixed seeds around the mean gradient.
    ``scale_inf_by_volume`` multiplies the ``inf`` term by ``Vol(P)``.
    """
    P = as_polytope(P)
    pts, vals = _candidate_points(u, P)
    integral = P.integrate_pwa(u) if isinstance(u, PwaConvexFn) else P.integrate_grid(u)
    moment = P.moment()
    k = P.volume if scale_inf_by_volume else 1.0

    def objective(a):
        a = np.atleast_1d(a)
        return integral - float(a @ moment) - k * float(np.min(vals - pts @ a))

    if P.dim == 1:
        slopes = np.diff(vals) / np.diff(pts[:, 0])
        lo, hi = float(np.min(slopes)) - 1.0, float(np.max(slopes)) + 1.0
        res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        best_a, best = np.array([res.x]), float(res.fun)
        # the objective is piecewise linear for piecewise-affine u; Brent can
        # stop on a plateau edge, so polish against the breakpoints nearby
        for cand in np.concatenate((slopes, [res.x])):
            val = objective(cand)
            if val < best:
                best, best_a = val, np.array([cand])
        return RelativeNorm(best, best_a)

    mean_grad = _mean_gradient(u, P)
    spread = max(1.0, float(np.max(np.abs(mean_grad))))
    seeds = [mean_grad] + [mean_grad + spread * np.array(d) for d in ((1, 0), (-1, 0), (0, 1), (0, -1))]
    best, best_a = np.inf, mean_grad
    for s in seeds[:N_SEEDS]:
        res = minimize(objective, s, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000})
        if res.fun < best:
            best, best_a = float(res.fun), np.asarray(res.x)
    return RelativeNorm(best, best_a)


def _mean_gradient(u, P: Polytope) -> np.ndarray:
    if isinstance(u, PwaConvexFn):
        acc = np.zeros(P.dim)
        for i, reg in P.pieces(u):
            acc += _signed_area(reg) * u.gradients[i]
        return acc / P.volume
    g1, g2 = np.gradient(np.asarray(u.values), *u.steps)
    return np.array([g1.mean(), g2.mean()])


# ---------------------------------------------------------------------------
# stability margin

@dataclass
class StabilityReport:
    delta_estimate: float
    witness: PwaConvexFn
    family_size: int
    convention: str
    ratios: list = field(default_factory=list)
    generators: list = field(default_factory=list)
    linear_parts: list = field(default_factory=list)
    norms: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "delta_estimate": self.delta_estimate,
            "witness": self.witness.to_record(),
            "family_size": self.family_size,
            "convention": self.convention,
        }


def _fractions_between(lo: float, hi: float, max_den: int) -> list:
    out = set()
    for q in range(1, max_den + 1):
        for p in range(int(np.floor(lo * q)) - 1, int(np.ceil(hi * q)) + 2):
            if lo < p / q < hi:
                out.add(Fraction(p, q))
    return sorted(out)


def default_generators(P="unit-interval", max_den: int = 8, n_random: int = 64, seed: int = 0) -> list:
    """Simple kinks ``max(0, <a, y> - b)`` with primitive ``a`` (entries in {-1, 0, 1})
    and rational ``b`` of denominator at most ``max_den`` cutting through P,
    followed by ``n_random`` seeded sums of two or three kinks with small
    positive integer weights."""
    P = as_polytope(P)
    if P.dim == 1:
        normals = [np.array([1.0]), np.array([-1.0])]
    else:
        normals = [np.array(a, dtype=float) for a in product((-1, 0, 1), repeat=2) if any(a)]
    kinks = []
    for a in normals:
        proj = P.vertices @ a
        for b in _fractions_between(float(proj.min()), float(proj.max()), max_den):
            kinks.append(PwaConvexFn.kink(a, float(b)))
    rng = np.random.default_rng(seed)
    sums = []
    for _ in range(n_random if kinks else 0):
        m = int(rng.integers(2, 4))
        idx = rng.choice(len(kinks), size=m, replace=False)
        w = rng.integers(1, 4, size=m)
        f = kinks[idx[0]].scaled(float(w[0]))
        for i, wi in zip(idx[1:], w[1:]):
            f = f + kinks[i].scaled(float(wi))
        sums.append(f)
    return kinks + sums


def stability_margin(P="unit-interval", conv="donaldson", generators=None, seed: int = 0,
                     scale_inf_by_volume: bool = False, workers: int = 1) -> StabilityReport:
    """Smallest ``L(u) / relative_norm(u)`` over a finite generator family.

    The result bounds the optimal uniform-stability constant from above; it
    is an estimate, not a proof of stability.  ``workers > 1`` evaluates the
    generators on a thread pool; results keep the family order.
    """
    P = as_polytope(P)
    c = _convention(conv, P)
    gens = default_generators(P, seed=seed) if generators is None else list(generators)

    def evaluate(g):
        return linear_part(g, P, c), relative_norm(g, P, scale_inf_by_volume).value

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(evaluate, gens))
    else:
        values = [evaluate(g) for g in gens]
    kept = [(lin / nrm, g, lin, nrm) for (lin, nrm), g in zip(values, gens) if nrm > NORM_ZERO]
    if not kept:
        raise EmptyFamily("no generator with non-zero relative norm")
    ratios, kept_gens, lins, norms = (list(col) for col in zip(*kept))
    i = int(np.argmin(ratios))
    return StabilityReport(float(ratios[i]), kept_gens[i], len(kept), c.name, ratios, kept_gens, lins, norms)


# ---------------------------------------------------------------------------
# minimisation of F in 1-D

@dataclass
class MinimizeResult:
    u: GridConvexFn
    objective_history: list
    grad_norm: float
    iterations: int


def _ramp_costs(n: int, h: float, c: NormalizationConvention) -> np.ndarray:
    """``L_h`` of the ramps ``max(0, i - j)``, j = 1 .. n-2, in closed form."""
    j = np.arange(1, n - 1, dtype=float)
    right = n - j - 0.5  # extrapolated value at y = 1
    total = (n - 1 - j) * (n - j) / 2
    return c.c_boundary * right - c.c_interior * h * total


def _cell_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n - 2, h)
    w[0] += h
    w[-1] += h
    return w


def _from_second_differences(D: np.ndarray, u_first: float = 0.0, u_second: float = 0.0) -> np.ndarray:
    slopes = (u_second - u_first) + np.concatenate(([0.0], np.cumsum(D)))
    return u_first + np.concatenate(([0.0], np.cumsum(slopes)))


def _normalize_mod_affine(y: np.ndarray, v: np.ndarray, pin_value: float) -> np.ndarray:
    slope = (v[-1] - v[0]) / (y[-1] - y[0])
    v = v - slope * y
    return v - np.interp(0.5 * (y[0] + y[-1]), y, v) + pin_value


def minimize_F(P="unit-interval", conv="donaldson", n: int = 1024, pin_value: float = 0.0,
               tol: float = 1e-8, max_iter: int = 10_000, init: Optional[GridConvexFn] = None,
               full_output: bool = False):
    """Minimise the discretised ``F(u) = L(u) - sum_cells h log u''`` on an interval.

    The unknowns are the interior second differences ``D_j > 0`` (so every
    iterate is convex); ``L`` vanishes on affine functions and is linear in
    ``D``, and the two boundary cells reuse the nearest interior ``D``.  The
    objective is therefore separable and strictly convex, and is minimised by
    damped Newton steps projected onto ``D > 0``.  Convergence is declared
    when ``max_j |dF/d log D_j| / h <= tol``.  The result is normalised to
    ``u(midpoint) = pin_value`` with equal endpoint samples.
    """
    P = as_polytope(P)
    if P.dim != 1:
        raise NotImplementedError("minimize_F is 1-D")
    c = _convention(conv, P)
    a, b = P.bounds[0]
    h = (b - a) / n
    y = cell_centers(a, b, n)
    cost = _ramp_costs(n, h, c)
    if np.any(cost <= 0):
        raise NonConvergence("the linear part is not positive on ramps; F is unbounded below")
    w = _cell_weights(n, h)

    def objective(D):
        return float(np.sum(cost * D) - np.sum(w * np.log(D / h**2)))

    if init is not None:
        D = np.maximum(np.diff(sample_on(init, GridConvexFn((a, b), np.zeros(n))).values, 2), 1e-300)
    else:
        D = np.full(n - 2, h**2)
    history = [objective(D)]
    z = np.log(D)
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        D = np.exp(z)
        grad = cost * D - w  # dF/dz
        grad_norm = float(np.max(np.abs(grad)) / h)
        if grad_norm <= tol:
            it -= 1
            break
        # separable: Newton in z = log D per cell, capped at MAX_LOG_STEP and
        # halved per cell until that cell's term decreases
        step = np.minimum(-grad / (cost * D), MAX_LOG_STEP)
        f_old = cost * D - w * z
        for _ in range(60):
            trial = z + step
            worse = cost * np.exp(trial) - w * trial > f_old
            if not np.any(worse):
                break
            step = np.where(worse, 0.5 * step, step)
        z = np.where(worse, z, trial)
        history.append(objective(np.exp(z)))
    else:
        raise NonConvergence(
            f"no convergence after {max_iter} iterations (gradient norm {grad_norm:.3e})",
            last_iterate=GridConvexFn((a, b), _normalize_mod_affine(y, _from_second_differences(np.exp(z)), pin_value)),
            grad_norm=grad_norm,
        )
    D = np.exp(z)
    u = GridConvexFn((a, b), _normalize_mod_affine(y, _from_second_differences(D), pin_value))
    if full_output:
        return MinimizeResult(u, history, grad_norm, it)
    return u


def newton_step(u: GridConvexFn, P="unit-interval", conv="donaldson") -> GridConvexFn:
    """One full Newton step of the discretised ``F`` from ``u`` (first two samples kept)."""
    P = as_polytope(P)
    c = _convention(conv, P)
    n, h = u.values.size, u.step
    D = np.diff(u.values, 2)
    cost, w = _ramp_costs(n, h, c), _cell_weights(n, h)
    D_new = np.maximum(D - (cost - w / D) / (w / D**2), 1e-300)
    return u.replace_values(_from_second_differences(D_new, u.values[0], u.values[1]))


def align_mod_affine(u: GridConvexFn, target, window=(0.05, 0.95)) -> tuple:
    """Least-squares affine correction of ``u`` towards ``target`` on ``window``.

    Returns ``(aligned, sup_error_on_window)``.
    """
    y = u.nodes
    t = target(y) if callable(target) and not isinstance(target, GridConvexFn) else sample_on(target, u).values
    m = (y >= window[0]) & (y <= window[1])
    A = np.column_stack([y[m], np.ones(m.sum())])
    coef, *_ = np.linalg.lstsq(A, t[m] - u.values[m], rcond=None)
    aligned = u.values + coef[0] * y + coef[1]
    return u.replace_values(aligned), float(np.max(np.abs(aligned[m] - t[m])))


def scale_minimizer(u: GridConvexFn, P="unit-interval", conv="donaldson", bounds=(0.05, 20.0)) -> float:
    """``argmin_s F(s u)``."""
    res = minimize_scalar(lambda s: mabuchi_total(u.replace_values(s * u.values), P, conv),
                          bounds=bounds, method="bounded", options={"xatol": 1e-10})
    return float(res.x)


# ---------------------------------------------------------------------------
# uniqueness certificate

@dataclass
class UniquenessCertificate:
    hessian_agreement: float
    difference_convex: bool
    L_of_difference: float
    affine_conclusion: bool
    affine_residual: float
    energy_spread: float
    stages: list = field(default_factory=list)
    failed_stage: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.failed_stage is None and self.affine_conclusion

    def to_record(self) -> dict:
        return {
            "hessian_agreement": self.hessian_agreement,
            "difference_convex": self.difference_convex,
            "L_of_difference": self.L_of_difference,
            "affine_conclusion": self.affine_conclusion,
            "affine_residual": self.affine_residual,
            "energy_spread": self.energy_spread,
            "stages": [{"stage": s, "passed": p, "residual": r} for s, p, r in self.stages],
            "failed_stage": self.failed_stage,
        }


def certify_unique(u0, u1, P="unit-interval", conv="donaldson", *, eps: float = 0.05,
                   tol_energy: float = 1e-6, tol_hessian: float = 1e-4, tol_L: float = 1e-6,
                   tol_affine: float = 1e-6, tol_inverse: float = 1e-2, n_t: int = 11,
                   strict: bool = False) -> UniquenessCertificate:
    """Run the chain "M constant => Hessians agree a.e. => v convex => L(v) = 0 => v affine".

    Stages: ``c11`` (regular Hessian of ``u0`` bounded on ``K_eps`` and
    consistent with ``legendre(u0)``), ``energy`` (``M(u_t)`` constant along
    the segment), ``hessian`` (relative L1 deviation of regular Hessians on
    ``K_eps``), ``convex`` (distance of ``v = u1 - u0`` to its convex
    envelope), ``linear`` (``L(v) = 0``).  Every stage is evaluated and
    reported; ``failed_stage`` names the first that broke, and with
    ``strict`` a :class:`HypothesisFailed` is raised there instead.
    """
    P = as_polytope(P)
    c = _convention(conv, P)
    base = u0 if isinstance(u0, GridConvexFn) else u1
    if not isinstance(base, GridConvexFn) or base.dim != 1:
        raise NotImplementedError("certify_unique works on 1-D grid functions")
    g0, g1 = sample_on(u0, base), sample_on(u1, base)
    y = base.nodes
    lo, hi = P.bounds[0]
    keps = (y >= lo + eps) & (y <= hi - eps)
    stages = []

    # (0) C^{1,1}_loc proxy for u0 on K_eps
    H0 = second_derivative_decompose(g0).regular_density
    H1 = second_derivative_decompose(g1).regular_density
    try:
        inv_res = check_inverse_hessian_relation(legendre(g0), g0, (lo + eps, hi - eps))
    except Exception as exc:  # degenerate or out-of-window: the hypothesis fails
        inv_res = float("inf")
        diag0 = str(exc)
    else:
        diag0 = ""
    ok0 = bool(np.all(np.isfinite(H0[keps])) and inv_res <= tol_inverse)
    stages.append(("c11", ok0, inv_res))

    # (i) energy constant along u_t
    ts = np.linspace(0.0, 1.0, n_t)
    energies = np.array([
        mabuchi_total(g0.replace_values((1 - t) * g0.values + t * g1.values), P, c) for t in ts
    ])
    spread = float(energies.max() - energies.min())
    stages.append(("energy", spread <= tol_energy, spread))

    # (ii) regular Hessians agree a.e. on K_eps
    rel = np.abs(H1[keps] - H0[keps]) / np.maximum(H0[keps], 1e-300)
    agreement = float(np.sum(rel) * base.step)
    stages.append(("hessian", agreement <= tol_hessian, agreement))

    # (iii) v = u1 - u0 convex
    v = GridConvexFn(base.domain, g1.values - g0.values)
    gap = float(np.max(v.values - convex_envelope(v).values))
    convex_ok = gap <= v.conv_tol
    stages.append(("convex", convex_ok, gap))

    # (iv) L(v) = 0
    Lv = float(linear_part(v, P, c))
    stages.append(("linear", abs(Lv) <= tol_L, abs(Lv)))

    # conclusion: v affine on K_eps
    yk, vk = y[keps], v.values[keps]
    chord = vk[0] + (vk[-1] - vk[0]) * (yk - yk[0]) / (yk[-1] - yk[0])
    aff_res = float(np.max(np.abs(vk - chord)))
    failed = next((s for s, ok, _ in stages if not ok), None)
    conclusion = failed is None and aff_res <= tol_affine * max(1.0, v.value_scale)
    cert = UniquenessCertificate(agreement, convex_ok, Lv, conclusion, aff_res, spread, stages, failed)
    if strict and failed is not None:
        res = dict((s, r) for s, _, r in stages)
        raise HypothesisFailed(failed, f"residual {res[failed]:.3e}",
                               {"certificate": cert.to_record(), "note": diag0})
    return cert
