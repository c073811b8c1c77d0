import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from fpstab.coefficients import identity_modulus
from fpstab.errors import InvalidMeasureError, SizeCapError
from fpstab.measures import ParticleCloud
from fpstab.transport import (CostSpec, brute_force_cost, cost_matrix, distance_relations,
                              enumerate_vertices, eval_cost, quantile_wasserstein_1d, solve_entropic,
                              solve_exact, wasserstein, write_plan_csv)


def lp_oracle(a, b, c):
    """Transport optimum from a generic LP solver."""
    n, m = c.shape
    rows = np.kron(np.eye(n), np.ones(m))
    cols = np.kron(np.ones(n), np.eye(m))
    res = linprog(c.ravel(), A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs")
    return res.fun


def random_measure(rng, n, d):
    w = rng.random(n) + 0.05
    return ParticleCloud(rng.normal(size=(n, d)), w / w.sum())


measures = st.integers(1, 6).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-5, 5), min_size=n, max_size=n),
    st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)))


def cloud_of(pair):
    pts, w = pair
    return ParticleCloud(np.asarray(pts), np.asarray(w) / np.sum(w))


class TestEvalCost:
    @pytest.mark.parametrize("spec,x,y,expected", [
        (CostSpec("log-squared", 0.3), [1.0], [1.0], 0.0),
        (CostSpec("log-squared", 2.0), [0.0], [2.0], math.log(2)),
        (CostSpec("log-squared", 1.0), [0.0, 0.0], [0.6, 0.8], math.log(2)),
        (CostSpec("log-linear", 1.0), [0.0], [1.0], math.log(2)),
        (CostSpec("power", p=2), [0.0], [3.0], 9.0),
        (CostSpec("power", p=1), [0.0, 0.0], [3.0, 4.0], 5.0),
    ])
    def test_examples(self, spec, x, y, expected):
        assert eval_cost(spec, x, y) == pytest.approx(expected, abs=1e-14)

    def test_osgood_identity_reproduces_log_squared(self):
        spec = CostSpec("osgood", 0.5, modulus=identity_modulus())
        for r in (0.01, 0.3, 2.0):
            assert eval_cost(spec, [0.0], [r]) == pytest.approx(math.log1p(r * r / 0.25), rel=1e-6)

    @given(st.sampled_from(["log-squared", "log-linear", "power"]), st.floats(0.01, 10),
           st.lists(st.floats(-10, 10), min_size=2, max_size=2), st.lists(st.floats(-10, 10), min_size=2, max_size=2))
    def test_symmetric_and_zero_on_diagonal(self, kind, delta, x, y):
        spec = CostSpec(kind, delta, 1.5)
        assert eval_cost(spec, x, y) == eval_cost(spec, y, x)
        assert eval_cost(spec, x, x) == 0.0
        if x != y:
            assert eval_cost(spec, x, y) > 0

    @pytest.mark.parametrize("kwargs", [{"kind": "cube"}, {"delta": 0.0}, {"kind": "power", "p": 0.5},
                                        {"kind": "osgood"}])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValueError):
            CostSpec(**kwargs)


class TestSolveExact:
    def test_identical_measures(self):
        mu = ParticleCloud([[0.0], [1.0], [3.0]], [0.2, 0.5, 0.3])
        plan = solve_exact(mu, mu, CostSpec("log-squared", 0.7))
        assert plan.cost == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(plan.matrix, np.diag(mu.weights), atol=1e-15)

    def test_two_by_two(self):
        mu = ParticleCloud([[0.0], [1.0]])
        nu = ParticleCloud([[0.0], [2.0]])
        spec = CostSpec("log-squared", 1.0)
        # vertices: identity matching and the swap
        vertices = [0.5 * math.log(2), 0.5 * math.log(5) + 0.5 * math.log(2)]
        plan = solve_exact(mu, nu, spec)
        assert plan.cost == pytest.approx(min(vertices), abs=1e-14)
        assert plan.matrix[0, 0] == pytest.approx(0.5) and plan.matrix[1, 1] == pytest.approx(0.5)

    @pytest.mark.parametrize("a", [0.5, 2.0, -3.0])
    def test_single_atoms(self, a):
        plan = solve_exact(ParticleCloud([[0.0]]), ParticleCloud([[a]]), CostSpec("power", p=2))
        assert plan.cost == pytest.approx(a * a)
        assert wasserstein(ParticleCloud([[0.0]]), ParticleCloud([[a]]), 2) == pytest.approx(abs(a))

    def test_unequal_mass(self):
        with pytest.raises(InvalidMeasureError):
            solve_exact(ParticleCloud([[0.0]]), ParticleCloud([[1.0], [2.0]], [0.5, 0.4]), CostSpec())

    def test_size_cap(self):
        mu = ParticleCloud(np.arange(20.0))
        with pytest.raises(SizeCapError):
            solve_exact(mu, mu, CostSpec(), size_cap=100)

    @pytest.mark.parametrize("n,m,d", [(3, 5, 1), (6, 4, 2), (8, 8, 2), (10, 7, 1)])
    def test_matches_lp_oracle(self, rng, n, m, d):
        mu, nu = random_measure(rng, n, d), random_measure(rng, m, d)
        spec = CostSpec("log-squared", 0.5)
        plan = solve_exact(mu, nu, spec)
        c = cost_matrix(spec, mu.points, nu.points)
        assert plan.cost == pytest.approx(lp_oracle(mu.weights, nu.weights, c), abs=1e-9)
        assert plan.marginal_error() <= 1e-9
        assert plan.gap <= 1e-9

    @given(measures, measures, st.sampled_from([0.1, 1.0, 10.0]))
    def test_vertex_enumeration_agrees(self, first, second, delta):
        mu, nu = cloud_of(first), cloud_of(second)
        if mu.size > 4 or nu.size > 4:
            mu = ParticleCloud(mu.points[:4], mu.weights[:4] / mu.weights[:4].sum())
            nu = ParticleCloud(nu.points[:4], nu.weights[:4] / nu.weights[:4].sum())
        spec = CostSpec("log-squared", delta)
        c = cost_matrix(spec, mu.points, nu.points)
        assert solve_exact(mu, nu, spec).cost == pytest.approx(brute_force_cost(mu.weights, nu.weights, c), abs=1e-10)

    @given(measures, measures)
    def test_marginals_feasible(self, first, second):
        plan = solve_exact(cloud_of(first), cloud_of(second), CostSpec("log-linear", 1.0))
        assert plan.marginal_error() <= 1e-9
        assert plan.matrix.min() >= 0


def test_enumerate_vertices_counts_birkhoff():
    # vertices of the 3x3 Birkhoff polytope are the six permutations
    a = np.full(3, 1 / 3)
    assert len(enumerate_vertices(a, a)) == 6


class TestEntropic:
    def test_identical_two_atoms(self):
        mu = ParticleCloud([[0.0], [1.0]])
        assert solve_entropic(mu, mu, CostSpec("log-squared", 1.0), 1e-3).cost <= 1e-4

    def test_epsilon_sweep(self):
        mu = ParticleCloud([[0.0], [1.0]])
        nu = ParticleCloud([[0.0], [2.0]])
        spec = CostSpec("log-squared", 1.0)
        exact = solve_exact(mu, nu, spec).cost
        values = [solve_entropic(mu, nu, spec, eps).cost for eps in (1e-1, 1e-2, 1e-3)]
        assert values[0] >= values[1] >= values[2] >= exact - 1e-9
        assert values[2] == pytest.approx(exact, rel=0.01)

    def test_quantile_oracle_p1(self, rng):
        mu = ParticleCloud(rng.normal(size=200))
        nu = ParticleCloud(rng.normal(0.5, 1.3, size=200))
        # loose stopping tolerance; the rounding step restores exact marginals
        plan = solve_entropic(mu, nu, CostSpec("power", p=1), 1e-3, tol=1e-4)
        assert plan.cost == pytest.approx(quantile_wasserstein_1d(mu, nu, 1), abs=1e-3)
        assert plan.marginal_error() <= 1e-6

    @given(measures, measures)
    def test_upper_bounds_exact(self, first, second):
        mu, nu = cloud_of(first), cloud_of(second)
        spec = CostSpec("log-squared", 1.0)
        assert solve_entropic(mu, nu, spec, 1e-2).cost >= solve_exact(mu, nu, spec).cost - 1e-9

    def test_rejects_nonpositive_epsilon(self):
        mu = ParticleCloud([[0.0]])
        with pytest.raises(ValueError):
            solve_entropic(mu, mu, CostSpec(), 0.0)


class TestRelations:
    def test_identical(self):
        mu = ParticleCloud([[0.0], [2.0]])
        rel = distance_relations(mu, mu, 1.0)
        assert rel.d_linear == rel.d_squared == 0.0 and rel.passed

    def test_diracs(self):
        rel = distance_relations(ParticleCloud([[0.0]]), ParticleCloud([[1.0]]), 1.0)
        assert rel.d_linear == pytest.approx(math.log(2)) and rel.d_squared == pytest.approx(math.log(2))
        assert rel.rhs1 == pytest.approx(2 * math.log(2))
        assert rel.rhs2 == pytest.approx(1 + math.log(2))
        assert rel.passed

    @pytest.mark.parametrize("delta", [0.1, 1.0, 10.0])
    def test_random_pairs(self, rng, delta):
        for _ in range(50):
            d = int(rng.integers(1, 3))
            assert distance_relations(random_measure(rng, 5, d), random_measure(rng, 5, d), delta).passed

    @given(measures, measures, st.floats(0.01, 100))
    def test_property(self, first, second, delta):
        assert distance_relations(cloud_of(first), cloud_of(second), delta).passed

    @given(measures, st.floats(0.05, 5))
    def test_indiscernibles(self, first, delta):
        mu = cloud_of(first)
        spec = CostSpec("log-squared", delta)
        assert solve_exact(mu, mu, spec).cost == pytest.approx(0.0, abs=1e-12)
        moved = ParticleCloud(mu.points + 0.1, mu.weights)
        assert solve_exact(mu, moved, spec).cost > 0


class TestWasserstein:
    @pytest.mark.parametrize("p", [1.0, 2.0, 3.5])
    def test_diracs(self, p):
        assert wasserstein(ParticleCloud([[0.0]]), ParticleCloud([[1.7]]), p) == pytest.approx(1.7)

    def test_permuted(self):
        assert wasserstein(ParticleCloud([[0.0], [1.0]]), ParticleCloud([[1.0], [0.0]]), 2) == 0.0

    def test_shifted_pairs(self):
        assert wasserstein(ParticleCloud([[0.0], [2.0]]), ParticleCloud([[1.0], [3.0]]), 2) == pytest.approx(1.0)

    def test_quantile_matches_lp(self, rng):
        for _ in range(10):
            mu, nu = random_measure(rng, 7, 1), random_measure(rng, 5, 1)
            c = cost_matrix(CostSpec("power", p=2), mu.points, nu.points)
            assert quantile_wasserstein_1d(mu, nu, 2) ** 2 == pytest.approx(lp_oracle(mu.weights, nu.weights, c), abs=1e-9)


def test_plan_csv(tmp_path):
    mu = ParticleCloud([[0.0], [1.0]])
    plan = solve_exact(mu, ParticleCloud([[0.0], [2.0]]), CostSpec())
    write_plan_csv(tmp_path / "plan.csv", plan)
    rows = np.loadtxt(tmp_path / "plan.csv", delimiter=",", skiprows=1)
    assert rows[:, 2].sum() == pytest.approx(1.0)
    assert (tmp_path / "plan.json").exists()
