import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from fpstab.errors import InvalidExponentError, InvalidMeasureError, TransformDomainError
from fpstab.measures import (BoxGrid, GridDensity, ParticleCloud, density_from_cloud, l1_distance,
                             log_moment, lr_norm, pushforward, read_cloud_csv, read_density_csv,
                             summarize, write_cloud_csv, write_density_csv)


class TestBoxGrid:
    def test_cell_volume(self):
        g = BoxGrid((0.0, -1.0), (2.0, 1.0), (4, 8))
        assert g.cell_volume == pytest.approx(0.5 * 0.25)
        assert g.dim == 2

    @pytest.mark.parametrize("lower,upper,counts", [
        ((0.0,), (1.0,), (1,)),
        ((1.0,), (1.0,), (4,)),
        ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (2, 2, 2)),
    ])
    def test_rejects_bad_boxes(self, lower, upper, counts):
        with pytest.raises(ValueError):
            BoxGrid(lower, upper, counts)


class TestLrNorm:
    @pytest.mark.parametrize("lower,upper,n", [((0.0,), (3.0,), (30,)), ((-1.0, 0.0), (1.0, 2.0), (10, 12))])
    def test_constant_density(self, lower, upper, n):
        vol = float(np.prod(np.subtract(upper, lower)))
        grid = BoxGrid(lower, upper, n)
        dens = GridDensity(grid, np.full(grid.shape, 1.0 / vol))
        assert lr_norm(dens, 1) == pytest.approx(1.0, abs=1e-12)
        assert lr_norm(dens, np.inf) == pytest.approx(1.0 / vol, abs=1e-12)

    def test_hat_function(self):
        oracle = math.sqrt(integrate.quad(lambda x: (1 - abs(x - 1)) ** 2, 0, 2, points=[1])[0])
        assert oracle == pytest.approx(math.sqrt(2 / 3), abs=1e-12)
        grid = BoxGrid((0.0,), (2.0,), (4000,))
        dens = GridDensity.from_function(grid, lambda x: 1 - np.abs(x - 1), normalize=False)
        assert lr_norm(dens, 2) == pytest.approx(oracle, abs=1e-6)

    def test_rejects_small_exponent(self):
        grid = BoxGrid((0.0,), (1.0,), (4,))
        with pytest.raises(InvalidExponentError):
            lr_norm(GridDensity(grid, np.ones(4)), 0.5)

    @given(st.lists(st.floats(0.0, 10.0), min_size=8, max_size=8), st.floats(1.0, 6.0), st.floats(0.0, 6.0))
    def test_monotone_in_exponent_on_unit_box(self, raw, r1, extra):
        vals = np.asarray(raw) + 1e-3
        grid = BoxGrid((0.0,), (1.0,), (8,))
        dens = GridDensity(grid, vals / (vals.sum() * grid.cell_volume))
        assert lr_norm(dens, r1) <= lr_norm(dens, r1 + extra) * (1 + 1e-12)


class TestLogMoment:
    @pytest.mark.parametrize("points,weights,expected", [
        ([[0.0]], [1.0], 0.0),
        ([[1.0]], [1.0], math.log(2)),
        ([[0.6, 0.8]], [1.0], math.log(2)),
        ([[-1.0], [0.0], [1.0]], None, 2 / 3 * math.log(2)),
    ])
    def test_examples(self, points, weights, expected):
        assert log_moment(ParticleCloud(points, weights)) == pytest.approx(expected, abs=1e-12)

    def test_summary_flags_plog(self):
        s = summarize(ParticleCloud([[1.0], [2.0]]))
        assert s.in_plog and s.log_moment == pytest.approx(0.5 * (math.log(2) + math.log(5)))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(-20, 20))
    def test_translation_consistency(self, pts, c):
        cloud = ParticleCloud(np.asarray(pts))
        moved = pushforward(cloud, lambda x: x + c)
        direct = float(np.mean(np.log1p((np.asarray(pts) + c) ** 2)))
        assert log_moment(moved) == pytest.approx(direct, rel=1e-12, abs=1e-12)


class TestPushforward:
    def test_identity(self):
        cloud = ParticleCloud([[0.1], [2.0]], [0.3, 0.7])
        out = pushforward(cloud, lambda x: x)
        np.testing.assert_array_equal(out.points, cloud.points)
        np.testing.assert_array_equal(out.weights, cloud.weights)

    def test_translation(self):
        cloud = ParticleCloud([[0.0, 1.0], [2.0, -1.0]], [0.25, 0.75])
        out = pushforward(cloud, lambda x: x + np.array([1.0, -2.0]))
        np.testing.assert_allclose(out.points, [[1.0, -1.0], [3.0, -3.0]])
        np.testing.assert_array_equal(out.weights, cloud.weights)

    def test_tanh_map(self):
        out = pushforward(ParticleCloud([[-1.0], [1.0]]), lambda x: x + 0.5 * np.tanh(x))
        expected = 1 + 0.5 * math.tanh(1)
        np.testing.assert_allclose(out.points[:, 0], [-expected, expected], atol=1e-12)
        assert expected == pytest.approx(1.3808, abs=1e-4)

    def test_non_finite_raises(self):
        with pytest.raises(TransformDomainError), np.errstate(divide="ignore"):
            pushforward(ParticleCloud([[0.0], [1.0]]), lambda x: 1.0 / x)

    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=12))
    def test_weight_preserved(self, raw):
        w = np.asarray(raw) / np.sum(raw)
        cloud = ParticleCloud(np.arange(len(w), dtype=float), w)
        out = pushforward(cloud, np.sin)
        assert out.weights.sum() == cloud.weights.sum()


class TestDensityFromCloud:
    def test_single_particle(self):
        grid = BoxGrid((0.0,), (1.0,), (10,))
        dens = density_from_cloud(ParticleCloud([[0.35]]), grid)
        expected = np.zeros(10)
        expected[3] = 1 / grid.cell_volume
        np.testing.assert_allclose(dens.values, expected)
        assert dens.leakage == 0.0

    def test_uniform_cloud(self):
        grid = BoxGrid((0.0,), (1.0,), (10,))
        dens = density_from_cloud(ParticleCloud(grid.points()), grid)
        np.testing.assert_allclose(dens.values, 1.0)

    def test_gaussian_histogram(self):
        rng = np.random.default_rng(7)
        grid = BoxGrid((-6.0,), (6.0,), (120,))
        dens = density_from_cloud(ParticleCloud(rng.standard_normal(100_000)), grid)
        exact = GridDensity(grid, stats.norm.pdf(grid.points()[:, 0]))
        assert l1_distance(dens, exact) < 0.02

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=40))
    def test_mass_accounting(self, pts):
        grid = BoxGrid((-1.0,), (1.0,), (8,))
        dens = density_from_cloud(ParticleCloud(np.asarray(pts)), grid)
        assert dens.mass() + dens.leakage == pytest.approx(1.0, abs=1e-9)


class TestValidation:
    def test_negative_density(self):
        with pytest.raises(InvalidMeasureError):
            GridDensity(BoxGrid((0.0,), (1.0,), (2,)), [-1.0, 3.0])

    @pytest.mark.parametrize("weights", [[0.5, 0.6], [1.5, -0.5], [1.0]])
    def test_bad_weights(self, weights):
        with pytest.raises(InvalidMeasureError):
            ParticleCloud([[0.0], [1.0]], weights)


def test_csv_roundtrip(tmp_path):
    grid = BoxGrid((0.0, 0.0), (1.0, 2.0), (3, 4))
    dens = GridDensity.from_function(grid, lambda x, y: 1 + x * y, time=0.5)
    write_density_csv(tmp_path / "d.csv", dens)
    back = read_density_csv(tmp_path / "d.csv")
    np.testing.assert_allclose(back.values, dens.values, rtol=1e-15)
    assert back.grid == grid and back.time == 0.5
    cloud = ParticleCloud([[0.0, 1.0], [2.0, 3.0]], [0.25, 0.75], time=1.0)
    write_cloud_csv(tmp_path / "c.csv", cloud)
    back = read_cloud_csv(tmp_path / "c.csv")
    np.testing.assert_allclose(back.points, cloud.points)
    np.testing.assert_allclose(back.weights, cloud.weights)
