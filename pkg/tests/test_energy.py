import numpy as np
import pytest
from scipy.stats import norm

from kenergy.convex_core import GridConvexFn, PwaConvexFn, counterexample_direction, legendre, sample_on
from kenergy.energy import (
    NormalizationConvention,
    entropy_dual,
    entropy_primal,
    linear_part,
    mabuchi,
    mabuchi_total,
    newtonian_energy,
    slope_estimate,
)
from kenergy.errors import MassDeficit, NonConvexDirection, NonConvexInput
from kenergy.geodesic import GeodesicSegment, ray

import oracles

P = "unit-interval"


@pytest.fixture(scope="module")
def u_grid():
    return GridConvexFn.from_function(oracles.u0, (0, 1), 4096)


@pytest.fixture(scope="module")
def v_grid(u_grid):
    return sample_on(counterexample_direction(), u_grid)


class TestConventions:
    def test_coefficients(self):
        d = NormalizationConvention.make("donaldson", P)
        p = NormalizationConvention.make("paper-lemma", P)
        assert (d.c_boundary, d.c_interior) == (1.0, 2.0)
        assert (p.c_boundary, p.c_interior) == (0.5, 1.0)
        sq = NormalizationConvention.make("donaldson", "unit-square")
        assert sq.c_interior == pytest.approx(4.0)
        with pytest.raises(ValueError):
            NormalizationConvention.make("other", P)


class TestLinearPart:
    def test_u0(self, u_grid):
        assert linear_part(u_grid, P, "paper-lemma") == pytest.approx(oracles.LINEAR_U0_LEMMA, abs=1e-3)
        assert linear_part(u_grid, P, "donaldson") == pytest.approx(2 * oracles.LINEAR_U0_LEMMA, abs=2e-3)

    def test_kink_exact(self, v_grid):
        assert linear_part(counterexample_direction(), P, "paper-lemma") == pytest.approx(0.125, abs=1e-15)
        assert linear_part(v_grid, P, "paper-lemma") == pytest.approx(0.125, abs=1e-9)

    @pytest.mark.parametrize("conv", ["donaldson", "paper-lemma"])
    def test_affine_vanishes(self, conv, u_grid):
        aff = u_grid.replace_values(3 * u_grid.nodes - 2)
        assert abs(linear_part(aff, P, conv)) <= 1e-12
        assert abs(linear_part(PwaConvexFn.affine([3.0], -2.0), P, conv)) <= 1e-12

    def test_nonnegative_on_kinks(self):
        for a in np.linspace(0.05, 0.95, 19):
            k = PwaConvexFn.kink([1.0], a)
            assert linear_part(k, P, "paper-lemma") == pytest.approx(oracles.kink_linear_part_lemma(a), abs=1e-12)

    def test_product_square(self):
        # boundary extrapolation of the infinite-slope profile costs O(1/n)
        errs = []
        for n in (128, 256):
            u = GridConvexFn.from_function(lambda a, b: oracles.u0(a) + oracles.u0(b), ((0, 1), (0, 1)), n)
            errs.append(abs(linear_part(u, "unit-square", "donaldson") - 2.0))
        assert errs[1] <= 4 / 256
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)

    def test_continuity_under_mollification(self, u_grid):
        # u0 + kink, with the kink smoothed at radius r
        y = u_grid.nodes
        target = linear_part(u_grid.replace_values(u_grid.values + np.maximum(0, y - 0.5)), P, "paper-lemma")
        gaps = []
        for r in (0.1, 0.03, 0.01, 0.003):
            z = (y - 0.5) / r
            smooth = r * (z * norm.cdf(z) + norm.pdf(z))
            gaps.append(abs(linear_part(u_grid.replace_values(u_grid.values + smooth), P, "paper-lemma") - target))
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] <= 1e-5


class TestEntropy:
    def test_u0(self, u_grid):
        assert entropy_dual(u_grid, P) == pytest.approx(oracles.ENTROPY_U0, abs=1e-3)

    @pytest.mark.parametrize("t", [0.0, 0.3, 1.0])
    def test_kink_invisible(self, u_grid, v_grid, t):
        ut = u_grid.replace_values(u_grid.values + t * v_grid.values)
        assert entropy_dual(ut, P) == pytest.approx(entropy_dual(u_grid, P), abs=1e-8)

    def test_pwa_is_infinite(self):
        assert np.isinf(entropy_dual(counterexample_direction()))

    def test_degenerate_is_infinite(self):
        flat = GridConvexFn.from_function(lambda y: np.maximum(0, y - 0.5) ** 2, (0, 1), 512)
        assert np.isinf(entropy_dual(flat, P))

    def test_non_convex_rejected(self):
        with pytest.raises(NonConvexInput):
            entropy_dual(GridConvexFn.from_function(np.sin, (0, 1), 64).replace_values(-np.linspace(0, 1, 64) ** 2))

    def test_product_square(self):
        u = GridConvexFn.from_function(lambda a, b: oracles.u0(a) + oracles.u0(b), ((0, 1), (0, 1)), 256)
        assert entropy_dual(u, "unit-square") == pytest.approx(-4.0, abs=1e-2)

    def test_primal_phi0(self):
        phi = GridConvexFn.from_function(oracles.phi0, (-40, 40), 2**16, tail_slopes=(0, 1))
        assert entropy_primal(phi) == pytest.approx(-2.0, abs=1e-3)

    def test_primal_with_flat_piece(self):
        phi = GridConvexFn.from_function(lambda x: oracles.phi_t(0.5, x), (-40, 40), 2**16, tail_slopes=(0, 1))
        assert entropy_primal(phi) == pytest.approx(-2.0, abs=1e-3)

    def test_primal_atoms_infinite(self):
        phi = GridConvexFn.from_function(lambda x: np.maximum(0, x), (-1, 1), 100, tail_slopes=(0, 1))
        assert np.isinf(entropy_primal(phi))

    def test_primal_window_dependent(self):
        # uniform density 1: rho log rho = 0 wherever covered
        phi = GridConvexFn.from_function(lambda x: x * x / 2, (-3, 3), 600)
        assert entropy_primal(phi) == pytest.approx(0.0, abs=1e-9)


class TestNewtonian:
    def test_phi0(self):
        phi = GridConvexFn.from_function(oracles.phi0, (-40, 40), 2**14, tail_slopes=(0, 1))
        assert newtonian_energy(phi) == pytest.approx(oracles.NEWTONIAN_U0, abs=1e-4)

    def test_uniform(self):
        phi = GridConvexFn.from_function(oracles.conjugate_of_half_square_on_unit_interval, (-2, 3), 5000, tail_slopes=(0, 1))
        assert newtonian_energy(phi) == pytest.approx(oracles.NEWTONIAN_QUADRATIC, abs=1e-5)

    def test_single_atom(self):
        phi = GridConvexFn.from_function(lambda x: np.maximum(0, x), (-1, 1), 101, tail_slopes=(0, 1))
        assert newtonian_energy(phi) == pytest.approx(0.0, abs=1e-12)

    def test_mass_deficit(self):
        phi = GridConvexFn.from_function(lambda x: x * x / 2, (-1, 1), 100)
        with pytest.raises(MassDeficit):
            newtonian_energy(phi)


class TestMabuchi:
    def test_u0(self, u_grid):
        rep = mabuchi(u_grid, P, "paper-lemma")
        assert rep.total == pytest.approx(oracles.M_U0_LEMMA, abs=1e-3)
        assert rep.finite
        assert rep.newtonian_residual <= 1e-3
        assert mabuchi_total(u_grid, P, "donaldson") == pytest.approx(oracles.M_U0_DONALDSON, abs=1e-3)

    def test_along_counterexample(self, u_grid, v_grid):
        ts = np.linspace(0, 1, 11)
        M = np.array([mabuchi_total(u_grid.replace_values(u_grid.values + t * v_grid.values), P, "paper-lemma") for t in ts])
        assert np.max(np.abs(np.diff(M, 2))) <= 1e-6
        np.testing.assert_allclose(M - M[0], ts / 8, atol=1e-4)

    def test_primal_report_with_kink(self, u_grid, v_grid):
        # the dual of a kinked u has a flat piece; the primal side must still go through
        rep = mabuchi(u_grid.replace_values(u_grid.values + v_grid.values), P, "paper-lemma")
        assert rep.entropy_primal == pytest.approx(rep.entropy_dual, abs=1e-2)
        assert rep.newtonian_residual <= 1e-3

    def test_record_marks_infinity(self):
        rec = mabuchi(GridConvexFn.from_function(lambda y: np.maximum(0, y - 0.5) ** 2, (0, 1), 256), P).to_record()
        assert rec["total"] == "inf"
        assert rec["finite"] is False


class TestSlope:
    def test_counterexample_ray(self, u_grid, v_grid):
        res = slope_estimate(ray(u_grid, v_grid), P, "paper-lemma", (100.0,))
        M0 = mabuchi_total(u_grid, P, "paper-lemma")
        assert res.estimates[0] == pytest.approx(0.125 + M0 / 100, abs=1e-9)
        assert abs(res.estimates[0] - 0.125) <= 0.016
        assert res.limit_prediction == pytest.approx(0.125)

    def test_smooth_ray(self, u_grid):
        v = GridConvexFn.from_function(lambda y: y * y / 2, (0, 1), 4096)
        res = slope_estimate(ray(u_grid, v), P, "paper-lemma", (10.0, 100.0, 1000.0))
        assert abs(res.estimates[-1] - 1 / 12) <= 0.02
        assert res.sandwich_ok
        for t, e in zip(res.times, res.energies):
            ent = e - t * linear_part(v, P, "paper-lemma") - linear_part(u_grid, P, "paper-lemma")
            assert ent == pytest.approx(oracles.entropy_along_smooth_ray(t), abs=2e-3)

    def test_affine_ray(self, u_grid):
        aff = u_grid.replace_values(0.4 * u_grid.nodes + 1)
        for conv in ("donaldson", "paper-lemma"):
            res = slope_estimate(ray(u_grid, aff), P, conv, (10.0, 1000.0))
            assert res.limit_prediction == pytest.approx(0.0, abs=1e-12)

    def test_non_convex_direction(self, u_grid):
        seg = GeodesicSegment(u_grid, u_grid.replace_values(-0.01 * u_grid.nodes**2), (0.0, 1.0))
        with pytest.raises(NonConvexDirection):
            slope_estimate(seg, P)


def test_entropy_duality_small_grid():
    # coarse run; the 1e-3 statement is exercised at larger N in the acceptance suite
    u = GridConvexFn.from_function(oracles.u0, (0, 1), 4096)
    phi = legendre(u)
    assert abs(entropy_primal(phi) - entropy_dual(u)) <= 1e-2
