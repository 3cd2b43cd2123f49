from parabolic_msa import grid
from parabolic_msa.exceptions import DimensionError, PreconditionError
import dataclasses
import numpy as np
import pytest


class TestUniformAxis:
    @pytest.fixture
    def axis(self):
        return grid.uniform_axis(n_intervals=4, cordinates=(0, 1))

    def test_cell_width(self, axis):
        assert axis.cell_width == 0.25

    def test_cell_cordinates(self, axis):
        expected = np.array([0, 0.25, 0.5, 0.75, 1])
        np.testing.assert_array_equal(x=axis.cell_cordinates, y=expected)

    def test_trapezoid_weights(self, axis):
        expected = np.array([0.125, 0.25, 0.25, 0.25, 0.125])
        np.testing.assert_array_equal(x=axis.weights, y=expected)

    @pytest.mark.parametrize(
        "n_intervals, cordinates",
        [(0, (0, 1)), (2.5, (0, 1)), (4, (1, 0)), (4, (1, 1))],
    )
    def test_invalid_axis(self, n_intervals, cordinates):
        with pytest.raises(PreconditionError):
            grid.uniform_axis(n_intervals, cordinates)


class TestGrid:
    @pytest.fixture
    def g(self):
        return grid.Grid(nx=4, ny=3, nt=5, Lx=2.0, Ly=1.5, T=0.5)

    def test_shapes(self, g):
        assert g.slice_shape == (5, 4)
        assert g.field_shape == (6, 5, 4)
        assert g.n_boundary == 14
        assert g.boundary_field_shape == (6, 14)
        assert g.points.shape == (2, 5, 4)

    def test_spacing(self, g):
        assert g.hx == pytest.approx(0.5)
        assert g.hy == pytest.approx(0.5)
        assert g.dt == pytest.approx(0.1)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"nx": 0, "ny": 3, "nt": 5},
            {"nx": 4, "ny": -1, "nt": 5},
            {"nx": 4, "ny": 3, "nt": 5, "T": 0.0},
            {"nx": 4, "ny": 3, "nt": 5, "Lx": -1.0},
        ],
    )
    def test_invalid_grid(self, kwargs):
        with pytest.raises(PreconditionError):
            grid.Grid(**kwargs)

    def test_grid_is_frozen(self, g):
        with pytest.raises(dataclasses.FrozenInstanceError):
            g.nx = 8

    def test_points_are_read_only(self, g):
        with pytest.raises(ValueError):
            g.points[0, 0, 0] = 1.0

    def test_spatial_weights_sum_to_area(self, g):
        assert np.sum(g.spatial_weights) == pytest.approx(3.0)

    def test_boundary_weights_sum_to_perimeter(self, g):
        assert np.sum(g.boundary_weights) == pytest.approx(7.0)

    def test_corner_weights(self, g):
        corners = [0, g.nx, g.nx + g.ny, 2 * g.nx + g.ny]
        np.testing.assert_allclose(g.boundary_weights[corners], (g.hx + g.hy) / 2)

    def test_edge_weights_cover_boundary(self, g):
        np.testing.assert_allclose(g.edge_weights(grid.EDGES), g.boundary_weights)

    @pytest.mark.parametrize(
        "edge, length", [("south", 2.0), ("east", 1.5), ("north", 2.0), ("west", 1.5)]
    )
    def test_single_edge_weights(self, g, edge, length):
        assert np.sum(g.edge_weights([edge])) == pytest.approx(length)

    def test_unknown_edge(self, g):
        with pytest.raises(PreconditionError):
            g.edge_weights(["top"])

    def test_boundary_traversal(self, g):
        i, j = g.boundary_index
        assert (i[0], j[0]) == (0, 0)
        assert (i[g.nx], j[g.nx]) == (g.nx, 0)
        assert (i[g.nx + g.ny], j[g.nx + g.ny]) == (g.nx, g.ny)
        assert (i[2 * g.nx + g.ny], j[2 * g.nx + g.ny]) == (0, g.ny)

    def test_arclength(self, g):
        assert g.arclength[0] == 0.0
        assert g.arclength[g.nx] == pytest.approx(g.Lx)
        assert g.arclength[-1] == pytest.approx(2 * (g.Lx + g.Ly) - g.hy)

    def test_edge_nodes_include_both_corners(self, g):
        np.testing.assert_array_equal(g.edge_nodes("west"), np.array([11, 12, 13, 0]))

    def test_trace_matches_boundary_points(self, g):
        np.testing.assert_array_equal(g.trace(g.points[0]), g.boundary_points[0])
        np.testing.assert_array_equal(g.trace(g.points[1]), g.boundary_points[1])

    def test_trace_of_field(self, g):
        assert g.trace(g.zeros_field()).shape == g.boundary_field_shape

    def test_trace_wrong_shape(self, g):
        with pytest.raises(DimensionError):
            g.trace(np.zeros((3, 3)))

    @pytest.mark.parametrize("rule", ["trapezoid", "step"])
    def test_time_weights_sum_to_horizon(self, g, rule):
        assert np.sum(g.time_weights(rule)) == pytest.approx(g.T)

    def test_step_rule_drops_final_level(self, g):
        assert g.time_weights("step")[-1] == 0.0

    def test_unknown_time_rule(self, g):
        with pytest.raises(PreconditionError):
            g.time_weights("simpson")

    def test_check_field_shape(self, g):
        with pytest.raises(DimensionError):
            g.check_field(np.zeros(g.slice_shape))

    def test_check_field_finite(self, g):
        values = g.zeros_field()
        values[1, 1, 1] = np.nan
        g.check_field(values)
        with pytest.raises(PreconditionError):
            g.check_field(values, finite=True)

    def test_constant_fields(self, g):
        np.testing.assert_array_equal(g.constant_field(2.0), np.full(g.field_shape, 2.0))
        np.testing.assert_array_equal(
            g.constant_boundary_field(-1.0), np.full(g.boundary_field_shape, -1.0)
        )


class TestQuadrature:
    @pytest.fixture
    def unit(self):
        return grid.Grid(nx=10, ny=10, nt=5)

    def test_unit_cylinder_measure(self, unit):
        ones = unit.constant_field(1.0)
        assert grid.inner_product_omega_t(ones, ones, unit) == pytest.approx(1.0, abs=1e-12)

    def test_zero_annihilates(self, unit):
        ones = unit.constant_field(1.0)
        assert grid.inner_product_omega_t(unit.zeros_field(), ones, unit) == 0.0

    def test_x_squared(self):
        g = grid.Grid(nx=100, ny=100, nt=25)
        x = np.broadcast_to(g.points[0], g.field_shape)
        assert grid.inner_product_omega_t(x, x, g) == pytest.approx(1 / 3, abs=1e-4)

    def test_lateral_measure(self, unit):
        ones = unit.constant_boundary_field(1.0)
        assert grid.inner_product_sigma_t(ones, ones, unit) == pytest.approx(4.0, abs=1e-12)

    def test_single_edge_integral(self):
        g = grid.Grid(nx=100, ny=100, nt=4)
        s = np.where(np.arange(g.n_boundary) <= g.nx, g.arclength, 0.0)
        values = np.broadcast_to(s, g.boundary_field_shape)
        actual = grid.inner_product_sigma_t(values, values, g, edges=["south"])
        assert actual == pytest.approx(1 / 3, abs=1e-4)

    def test_two_edges(self, unit):
        ones = unit.constant_boundary_field(1.0)
        actual = grid.inner_product_sigma_t(ones, ones, unit, edges=["south", "north"])
        assert actual == pytest.approx(2.0)

    def test_final_norm_of_constant(self, unit):
        assert grid.norm_l2_omega_final(np.ones(unit.slice_shape), unit) == pytest.approx(1.0)

    def test_final_norm_of_zero(self, unit):
        assert grid.norm_l2_omega_final(np.zeros(unit.slice_shape), unit) == 0.0

    def test_final_norm_of_sine_mode(self):
        g = grid.Grid(nx=100, ny=100, nt=1)
        x, y = g.points
        mode = np.sin(np.pi * x) * np.sin(np.pi * y)
        assert grid.norm_l2_omega_final(mode, g) == pytest.approx(0.5, abs=1e-3)

    def test_linear_in_time(self, unit):
        t = np.broadcast_to(unit.times[:, None, None], unit.field_shape)
        assert grid.integral_omega_t(t, unit) == pytest.approx(0.5)
        # left Riemann sum of t
        assert grid.integral_omega_t(t, unit, "step") == pytest.approx(0.4)

    def test_norms_match_inner_products(self, unit):
        rng = np.random.default_rng(3)
        a = rng.standard_normal(unit.field_shape)
        b = rng.standard_normal(unit.boundary_field_shape)
        assert grid.norm_sq_omega_t(a, unit, "step") == pytest.approx(
            grid.inner_product_omega_t(a, a, unit, "step")
        )
        assert grid.norm_sq_sigma_t(b, unit) == pytest.approx(
            grid.inner_product_sigma_t(b, b, unit)
        )
        assert grid.integral_sigma_t(b * b, unit) == pytest.approx(
            grid.norm_sq_sigma_t(b, unit)
        )

    def test_spatial_integral_shape_check(self, unit):
        with pytest.raises(DimensionError):
            grid.spatial_integral(unit.zeros_field(), unit)


if __name__ == "__main__":
    pytest.main()
