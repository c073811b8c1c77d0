import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from fpstab.coefficients import CoefficientField, constant_diffusion
from fpstab.errors import InvalidCoefficientsError, StepSizeError
from fpstab.fpe import (FpeProblem, apriori_bound, divergence_form_convert, lq_apriori_check,
                        negative_divergence_sup, solve, solve_divergence_form)
from fpstab.measures import BoxGrid, GridDensity, l1_distance

GRID = BoxGrid((-6.0,), (6.0,), (1200,))


def field(drift, sigma=1.0, dim=1, autonomous=True):
    return CoefficientField(drift, constant_diffusion(sigma, dim), dim, dim, autonomous=autonomous)


def gaussian(grid, var, mean=0.0):
    return GridDensity.from_function(grid, lambda x: stats.norm.pdf(x, mean, math.sqrt(var)))


def test_no_dynamics_is_stationary():
    init = gaussian(GRID, 0.5)
    sol = solve(FpeProblem(field(lambda t, x: np.zeros_like(x), 0.0), init, 0.0, 1.0))
    for frame in sol.frames:
        np.testing.assert_array_equal(frame.values, init.values)


def test_heat_kernel():
    sol = solve(FpeProblem(field(lambda t, x: np.zeros_like(x)), gaussian(GRID, 0.1), 1.0, 0.5))
    assert l1_distance(sol.frames[-1], gaussian(GRID, 0.6)) < 0.01


def test_contraction_along_characteristics():
    sol = solve(FpeProblem(field(lambda t, x: -x, 0.0), gaussian(GRID, 1.0), 0.0, 1.0))
    assert l1_distance(sol.frames[-1], gaussian(GRID, math.exp(-2))) < 0.02


def test_translation_moves_centre_of_mass():
    grid = BoxGrid((-2.0,), (4.0,), (600,))
    bump = GridDensity.from_function(grid, lambda x: np.maximum(0.0, 0.25 - x ** 2))
    sol = solve(FpeProblem(field(lambda t, x: np.full_like(x, 1.5), 0.0), bump, 0.0, 1.0))
    x = grid.axes()[0]
    centre = np.sum(x * sol.frames[-1].values) * grid.cell_volume
    assert abs(centre - 1.5) <= 2 * grid.spacing[0]


@pytest.mark.parametrize("kappa", [0.0, 0.3, 1.0])
def test_mass_and_positivity(kappa):
    grid = BoxGrid((-3.0,), (3.0,), (240,))
    fld = field(lambda t, x: np.sin(2 * x) - 0.5 * x, 0.8)
    sol = solve(FpeProblem(fld, gaussian(grid, 0.3, 0.5), kappa, 1.0))
    for frame in sol.frames:
        assert frame.mass() + frame.leakage == pytest.approx(1.0, abs=1e-9)
    assert sol.info["min_before_clip"] >= -1e-14
    assert sol.info["clipped_mass"] <= 1e-12


def test_absorbing_boundary_books_leakage():
    grid = BoxGrid((-2.0,), (2.0,), (200,))
    sol = solve(FpeProblem(field(lambda t, x: np.full_like(x, 3.0), 0.2), gaussian(grid, 0.1), 1.0, 1.0,
                           boundary="absorbing"))
    final = sol.frames[-1]
    assert final.leakage > 0.5
    assert final.mass() + final.leakage == pytest.approx(1.0, abs=1e-9)


def test_absorbing_boundary_two_dimensions():
    grid = BoxGrid((-2.0, -2.0), (2.0, 2.0), (40, 40))
    init = GridDensity.from_function(grid, lambda x, y: np.exp(-(x * x + y * y) / 0.2))
    fld = field(lambda t, x: np.tile([3.0, -1.0], (len(x), 1)), 0.3, dim=2)
    sol = solve(FpeProblem(fld, init, 1.0, 1.0, boundary="absorbing"))
    for frame in sol.frames:
        assert frame.mass() + frame.leakage == pytest.approx(1.0, abs=1e-9)
    assert sol.frames[-1].leakage > 0.5


def test_two_dimensional_heat():
    grid = BoxGrid((-4.0, -4.0), (4.0, 4.0), (80, 80))

    def gauss2(var):
        return GridDensity.from_function(grid, lambda x, y: np.exp(-(x * x + y * y) / (2 * var)))

    fld = field(lambda t, x: np.zeros_like(x), 1.0, dim=2)
    sol = solve(FpeProblem(fld, gauss2(0.2), 1.0, 0.5))
    assert l1_distance(sol.frames[-1], gauss2(0.7)) < 0.02
    assert sol.frames[-1].mass() == pytest.approx(1.0, abs=1e-9)


def test_step_restriction():
    grid = BoxGrid((-1.0,), (1.0,), (100,))
    prob = FpeProblem(field(lambda t, x: np.zeros_like(x)), gaussian(grid, 0.1), 1.0, 1.0)
    with pytest.raises(StepSizeError) as info:
        solve(prob, steps=10)
    assert info.value.suggested > 0
    assert info.value.suggested <= 0.9 * grid.spacing[0] ** 2


def test_indefinite_diffusion_rejected():
    class Indefinite(CoefficientField):
        def a(self, t, x):
            out = np.zeros((np.asarray(x).reshape(-1, 1).shape[0], 1, 1))
            out[:] = -1.0
            return out

    fld = Indefinite(lambda t, x: np.zeros_like(x), constant_diffusion(1.0))
    with pytest.raises(InvalidCoefficientsError):
        solve(FpeProblem(fld, gaussian(BoxGrid((-1.0,), (1.0,), (50,)), 0.1), 1.0, 0.1))


class TestDivergenceForm:
    def test_constant_sigma_unchanged(self):
        fld = field(lambda t, x: np.sin(x), 0.7)
        conv = divergence_form_convert(fld)
        x = np.linspace(-2, 2, 9)[:, None]
        np.testing.assert_allclose(conv.b(0.0, x), fld.b(0.0, x), atol=1e-12)

    def test_linear_sigma(self):
        fld = CoefficientField(lambda t, x: -x, lambda t, x: x[:, :, None], 1, 1)
        x = np.linspace(-2, 2, 9)[:, None]
        np.testing.assert_allclose(divergence_form_convert(fld).b(0.0, x), -x + x, atol=1e-8)

    def test_two_discretisations_agree(self):
        sig = lambda t, x: (1.0 + 0.3 * np.sin(x))[:, :, None]
        fld = CoefficientField(lambda t, x: -x, sig, 1, 1)
        init = gaussian(GRID, 0.3, 0.5)
        flux = solve_divergence_form(FpeProblem(fld, init, 1.0, 0.5))
        nondiv = solve(FpeProblem(divergence_form_convert(fld), init, 1.0, 0.5))
        assert l1_distance(flux.frames[-1], nondiv.frames[-1]) < 0.01


class TestApriori:
    @pytest.mark.parametrize("kappa", [0.0, 0.1, 1.0])
    def test_divergence_free(self, kappa):
        grid = BoxGrid((-4.0,), (4.0,), (400,))
        fld = field(lambda t, x: np.full_like(x, 0.5))
        sol = solve(FpeProblem(fld, gaussian(grid, 0.2), kappa, 1.0))
        rep = lq_apriori_check(sol, 2.0, fld)
        assert rep.bound == pytest.approx(apriori_bound(sol.frames[0], 2.0, neg_div_integral=0.0))
        assert rep.passed

    def test_contracting_drift(self):
        grid = BoxGrid((-5.0,), (5.0,), (1000,))
        fld = field(lambda t, x: -x)
        init = gaussian(grid, 1.0)
        assert negative_divergence_sup(fld, grid, 0.0) == pytest.approx(1.0)
        expected = math.sqrt(np.sum(init.values ** 2) * grid.cell_volume) * math.exp(0.5)
        assert apriori_bound(init, 2.0, fld, 1.0) == pytest.approx(expected, rel=1e-9)
        sol = solve(FpeProblem(fld, init, 0.0, 1.0))
        assert lq_apriori_check(sol, 2.0, fld).passed

    def test_bound_independent_of_kappa(self):
        grid = BoxGrid((-5.0,), (5.0,), (500,))
        fld = field(lambda t, x: -x)
        init = gaussian(grid, 1.0)
        reports = [lq_apriori_check(solve(FpeProblem(fld, init, k, 1.0)), 2.0, fld) for k in (0.0, 0.1, 1.0)]
        assert len({r.bound for r in reports}) == 1
        assert all(r.passed for r in reports)

    @given(st.floats(1.0, 8.0))
    def test_exponent_shape(self, q):
        grid = BoxGrid((-1.0,), (1.0,), (10,))
        init = GridDensity(grid, np.full(10, 0.5))
        base = apriori_bound(init, q, neg_div_integral=0.0)
        assert apriori_bound(init, q, neg_div_integral=2.0) == pytest.approx(base * math.exp(2 * (1 - 1 / q)))
