import json

import numpy as np
import pytest

from kenergy.convex_core import (
    GridConvexFn,
    PwaConvexFn,
    add_affine,
    biconjugate,
    biconjugate_tolerance,
    check_inverse_hessian_relation,
    convex_envelope,
    counterexample_direction,
    is_affine,
    legendre,
    legendre_pwa,
    linf_distance,
    sample_on,
    second_derivative_decompose,
)
from kenergy.errors import DegenerateHessian, DomainMismatch, NonConvexInput

import oracles


@pytest.fixture(scope="module")
def phi_grid():
    return GridConvexFn.from_function(oracles.phi0, (-30, 30), 4096, tail_slopes=(0, 1))


@pytest.fixture(scope="module")
def u_grid():
    return GridConvexFn.from_function(oracles.u0, (0, 1), 4096)


class TestGridConvexFn:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            GridConvexFn((0, 1), [])
        with pytest.raises(ValueError):
            GridConvexFn((0, 1), [0.0, np.nan])
        with pytest.raises(ValueError):
            GridConvexFn((1, 0), [0.0, 1.0])
        with pytest.raises(ValueError):
            GridConvexFn((0, 1), np.zeros((3, 3)))

    def test_tail_slopes_must_bracket(self):
        with pytest.raises(ValueError):
            GridConvexFn.from_function(lambda x: x * x, (-1, 1), 16, tail_slopes=(0, 1))

    def test_convexity(self):
        assert GridConvexFn.from_function(np.abs, (-1, 1), 33).is_convex()
        bad = GridConvexFn.from_function(np.sin, (0, 3), 33)
        assert not bad.is_convex()
        with pytest.raises(NonConvexInput):
            bad.require_convex()

    def test_2d_convexity_uses_diagonals(self):
        # convex along both axes but concave along a diagonal
        f = GridConvexFn.from_function(lambda a, b: -a * b * 4 + 0.1 * (a * a + b * b), ((0, 1), (0, 1)), 16)
        assert not f.is_convex()
        assert GridConvexFn.from_function(lambda a, b: np.maximum(0, a + b - 1), ((0, 1), (0, 1)), 16).is_convex()

    def test_record_round_trip(self, phi_grid):
        rec = json.loads(json.dumps(phi_grid.to_record()))
        back = GridConvexFn.from_record(rec)
        assert back.domain == phi_grid.domain
        assert back.tail_slopes == (0.0, 1.0)
        np.testing.assert_array_equal(back.values, phi_grid.values)

    def test_evaluation_uses_tails(self, phi_grid):
        assert phi_grid(-100.0) == pytest.approx(phi_grid(-30.0), abs=1e-12)
        assert phi_grid(100.0) - phi_grid(30.0) == pytest.approx(70.0, rel=1e-9)
        u = GridConvexFn.from_function(oracles.u0, (0, 1), 64)
        assert np.isinf(u(1.5))


class TestPwa:
    def test_from_breakpoints_and_record(self):
        f = PwaConvexFn.from_breakpoints([0.25, 0.5], [-1, 0, 2], intercept=1.0)
        np.testing.assert_allclose(f.breakpoints, [0.25, 0.5])
        assert f(0.0) == pytest.approx(1.0)
        assert f(0.25) == pytest.approx(0.75)
        assert f(1.0) == pytest.approx(0.75 + 2 * 0.5)
        g = PwaConvexFn.from_record(json.loads(json.dumps(f.to_record())))
        np.testing.assert_allclose(g.gradients, f.gradients)
        np.testing.assert_allclose(g.offsets, f.offsets)

    def test_redundant_forms_are_pruned(self):
        f = PwaConvexFn.from_affine_forms([(0.0, 0.0), (1.0, -0.5), (0.5, -10.0), (1.0, -0.7)])
        assert f.n_forms == 2
        np.testing.assert_allclose(f.breakpoints, [0.5])

    def test_sum_and_scale(self):
        k = counterexample_direction()
        s = k + k.scaled(2.0)
        assert s(1.0) == pytest.approx(1.5)
        with pytest.raises(ValueError):
            k.scaled(-1.0)

    def test_2d_kink(self):
        k = PwaConvexFn.kink([1.0, 1.0], 1.0)
        assert k(np.array([[0.5, 0.5], [1.0, 1.0]])).tolist() == [0.0, 1.0]


class TestEnvelope:
    def test_convex_unchanged(self, u_grid):
        np.testing.assert_array_equal(convex_envelope(u_grid).values, u_grid.values)

    def test_double_well_against_chord_oracle(self):
        f = GridConvexFn.from_function(lambda y: np.minimum(y * y, (y - 1) ** 2), (-1, 2), 60)
        env = convex_envelope(f)
        ref = oracles.chord_envelope(f.nodes, f.values)
        np.testing.assert_allclose(env.values, ref, atol=1e-12)
        # outside the well the function is its own envelope
        out = (f.nodes < 0) | (f.nodes > 1)
        np.testing.assert_allclose(env.values[out], f.values[out], atol=1e-12)

    def test_single_point(self):
        f = GridConvexFn((0, 1), [3.0])
        assert convex_envelope(f).values.tolist() == [3.0]


class TestLegendre:
    def test_phi0_gives_u0(self, phi_grid):
        u = legendre(phi_grid)
        inner = (u.nodes >= 0.01) & (u.nodes <= 0.99)
        assert np.max(np.abs(u.values[inner] - oracles.u0(u.nodes[inner]))) <= 1e-6

    def test_against_brute_force(self):
        f = GridConvexFn.from_function(lambda t: np.exp(t) + 0.3 * t * t, (-2, 2), 400)
        out = legendre(f, refine=False)
        ref = oracles.brute_conjugate(
            np.concatenate(([-2.0], f.nodes, [2.0])),
            np.concatenate(([f.boundary_values()[0]], f.values, [f.boundary_values()[1]])),
            out.nodes,
        )
        np.testing.assert_allclose(out.values, ref, atol=1e-12)

    def test_zero_on_interval(self):
        u = GridConvexFn((0, 1), np.zeros(64))
        phi = legendre(u, domain_out=(-3, 3), n_out=60)
        np.testing.assert_allclose(phi.values, np.maximum(0, phi.nodes), atol=1e-12)

    def test_half_square(self):
        u = GridConvexFn.from_function(lambda y: y * y / 2, (0, 1), 2048)
        phi = legendre(u, domain_out=(-2, 3), n_out=1000)
        np.testing.assert_allclose(
            phi.values, oracles.conjugate_of_half_square_on_unit_interval(phi.nodes), atol=1e-6
        )

    def test_translation(self, u_grid):
        phi = legendre(u_grid)
        shifted = legendre(add_affine(u_grid, 0.0, 0.7), n_out=phi.values.size, domain_out=phi.interval)
        np.testing.assert_allclose(shifted.values, phi.values - 0.7, atol=1e-12)

    def test_refined_dual_of_kink_is_convex(self, u_grid):
        w = u_grid.replace_values(u_grid.values + sample_on(counterexample_direction(), u_grid).values)
        plain = legendre(w, refine=False)
        phi = legendre(w)
        assert phi.is_convex()
        assert np.all(phi.values >= plain.values - 1e-12)
        assert np.max(phi.values - plain.values) <= 10 * w.step

    def test_non_convex_input_rejected(self):
        with pytest.raises(NonConvexInput):
            legendre(GridConvexFn.from_function(np.sin, (0, 3), 32))

    def test_domain_outside_tails_rejected(self, phi_grid):
        with pytest.raises(DomainMismatch):
            legendre(phi_grid, domain_out=(-0.5, 1.5))

    def test_2d_quadratic_is_self_dual(self):
        f = GridConvexFn.from_function(lambda a, b: (a * a + b * b) / 2, ((-1, 1), (-1, 1)), 80)
        g = legendre(f, domain_out=((-0.5, 0.5), (-0.5, 0.5)), n_out=20)
        Y1, Y2 = np.meshgrid(*g.axes(), indexing="ij")
        np.testing.assert_allclose(g.values, (Y1**2 + Y2**2) / 2, atol=2 * f.step**2)


class TestBiconjugate:
    def test_phi0(self, phi_grid):
        back = biconjugate(phi_grid)
        assert np.max(np.abs(back.values - phi_grid.values)) <= 1e-6

    def test_kink_exact_at_breakpoints(self):
        v = counterexample_direction()
        back = biconjugate(v, domain=(0, 1))
        pts = np.array([0.0, 0.5, 1.0])
        assert back(pts).tolist() == v(pts).tolist()
        np.testing.assert_array_equal(back.breakpoints, [0.5])

    def test_sampled_kink(self):
        v = counterexample_direction().sample((0, 1), 64)
        back = biconjugate(v)
        gap = v.values - back.values
        assert np.all(gap >= -1e-15)
        assert np.max(gap) <= biconjugate_tolerance(v)

    def test_non_convex_gives_envelope(self):
        f = GridConvexFn.from_function(lambda y: np.minimum(y * y, (y - 1) ** 2), (-1, 2), 90)
        back = biconjugate(f)
        env = convex_envelope(f)
        assert np.max(np.abs(back.values - env.values)) <= 2 * biconjugate_tolerance(f)

    def test_pwa_needs_domain(self):
        with pytest.raises(ValueError):
            biconjugate(counterexample_direction())

    def test_exact_pwa_conjugate(self):
        f = PwaConvexFn.from_breakpoints([0.2, 0.7], [-1, 0.5, 3], 2.0)
        fs = legendre_pwa(f, (0, 1))
        ys = np.linspace(-4, 5, 91)
        ref = oracles.brute_conjugate(np.linspace(0, 1, 100001), f(np.linspace(0, 1, 100001)), ys)
        np.testing.assert_allclose(fs(ys), ref, atol=1e-12)


class TestDecomposition:
    def test_phi0_density(self, phi_grid):
        dec = second_derivative_decompose(phi_grid)
        assert dec.atoms == []
        ex = np.exp(dec.nodes)
        np.testing.assert_allclose(dec.regular_density[1:-1], (ex / (1 + ex) ** 2)[1:-1], atol=1e-5)
        assert abs(dec.total_mass - 1) <= 1e-6
        assert abs(dec.regular_mass - 1) <= 1e-6

    def test_kink_atom(self, u_grid):
        ut = u_grid.replace_values(u_grid.values + 0.5 * sample_on(counterexample_direction(), u_grid).values)
        dec = second_derivative_decompose(ut)
        assert len(dec.atoms) == 1
        loc, mass = dec.atoms[0]
        assert abs(loc - 0.5) <= 2 * u_grid.step
        assert abs(mass - 0.5) <= 2 * u_grid.step
        y = dec.nodes
        inner = (y > 0.05) & (y < 0.95)
        np.testing.assert_allclose(dec.regular_density[inner], 1 / (y[inner] * (1 - y[inner])), rtol=1e-3)

    def test_affine(self):
        dec = second_derivative_decompose(GridConvexFn.from_function(lambda y: 2 * y - 1, (0, 1), 64))
        assert dec.atoms == []
        assert np.max(np.abs(dec.regular_density)) <= 1e-9


class TestInverseHessian:
    def test_phi0_u0(self, phi_grid, u_grid):
        assert check_inverse_hessian_relation(phi_grid, u_grid, (0.05, 0.95)) <= 1e-3

    def test_quadratics(self):
        phi = GridConvexFn.from_function(lambda x: x * x / 2, (-2, 2), 400)
        u = GridConvexFn.from_function(lambda y: y * y / 2, (-1, 1), 200)
        assert check_inverse_hessian_relation(phi, u) <= 1e-8

    def test_degenerate(self):
        phi = GridConvexFn.from_function(lambda x: x * x / 2, (-2, 2), 400)
        flat = GridConvexFn.from_function(lambda y: np.maximum(0, y) ** 3, (-1, 1), 200)
        with pytest.raises(DegenerateHessian):
            check_inverse_hessian_relation(phi, flat)


class TestUtilities:
    def test_is_affine(self):
        v = counterexample_direction()
        assert not is_affine(v)
        assert not is_affine(v, domain=(0, 1))
        assert is_affine(v, domain=(0, 0.5))
        assert is_affine(GridConvexFn.from_function(lambda y: 3 * y + 1, (0, 1), 50))
        assert not is_affine(v.sample((0, 1), 50))

    def test_linf_distance_mixed(self, u_grid):
        v = counterexample_direction()
        assert linf_distance(u_grid, u_grid) == 0.0
        d = linf_distance(v, GridConvexFn((0, 1), np.zeros(100)))
        assert d == pytest.approx(0.495)
