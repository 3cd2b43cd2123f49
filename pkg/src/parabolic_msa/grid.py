import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional

import numpy as np
import numpy.typing as npt

from parabolic_msa.exceptions import DimensionError, PreconditionError

# create logging configuration
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# Create a console handler
console_handler = logging.StreamHandler()
console_handler.setLevel(logging.INFO)

# Set the formatter for the console handler
formatter = logging.Formatter(
    "%(name)s:%(levelname)s:%(funcName)s:%(message)s",
)
console_handler.setFormatter(formatter)

# Add the console handler to the logger
logger.addHandler(console_handler)

Array = npt.NDArray[np.float64]
# (nt+1, nx+1, ny+1) on the space-time nodes
Field = Array
# (nt+1, 2(nx+ny)) on the lateral boundary nodes
BoundaryField = Array

EDGES = ("south", "east", "north", "west")
TIME_RULES = ("trapezoid", "step")


def _read_only(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class uniform_axis:
    """
    A 1d uniformly discretized axis with nodes on both end points.

    Attributes:
        cell_width: distance between neighbouring nodes
        cell_cordinates: node positions, n_intervals + 1 of them
        weights: composite trapezoid weights for the nodes
    """

    def __init__(self, n_intervals: int, cordinates: tuple[float, float]) -> None:
        """
        Args:
            n_intervals: int = number of intervals to discretize the axis into
            cordinates: tuple(float, float) = min and max of the axis
        """
        if int(n_intervals) != n_intervals or n_intervals < 1:
            raise PreconditionError(
                f"axis needs a positive integer interval count, got {n_intervals}"
            )
        if not cordinates[1] > cordinates[0]:
            raise PreconditionError(f"axis end points out of order: {cordinates}")
        self.n_intervals = int(n_intervals)
        self.cordinates = cordinates
        self.cell_width = (cordinates[1] - cordinates[0]) / self.n_intervals
        self.cell_cordinates = np.linspace(
            cordinates[0], cordinates[1], self.n_intervals + 1
        )
        self.weights = np.full(self.n_intervals + 1, self.cell_width)
        self.weights[[0, -1]] = self.cell_width / 2


@dataclass(frozen=True)
class Grid:
    """
    Rectangular space-time grid on [0, Lx] x [0, Ly] x [0, T].

    nx, ny and nt count intervals, so a spatial slice has shape
    (nx + 1, ny + 1) and a field has shape (nt + 1, nx + 1, ny + 1).

    Boundary nodes are stored counter-clockwise starting at the origin:
    south edge west to east, east edge south to north, north edge east to
    west, west edge north to south. Every corner is stored once, as the
    first node of the edge it starts.
    """

    nx: int
    ny: int
    nt: int
    Lx: float = 1.0
    Ly: float = 1.0
    T: float = 1.0

    def __post_init__(self) -> None:
        for name in ("nx", "ny", "nt"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise PreconditionError(f"{name} must be a positive integer, got {value}")
        for name in ("Lx", "Ly", "T"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive, got {getattr(self, name)}")

    @cached_property
    def x_axis(self) -> uniform_axis:
        return uniform_axis(self.nx, (0.0, self.Lx))

    @cached_property
    def y_axis(self) -> uniform_axis:
        return uniform_axis(self.ny, (0.0, self.Ly))

    @cached_property
    def t_axis(self) -> uniform_axis:
        return uniform_axis(self.nt, (0.0, self.T))

    @property
    def hx(self) -> float:
        return self.x_axis.cell_width

    @property
    def hy(self) -> float:
        return self.y_axis.cell_width

    @property
    def dt(self) -> float:
        return self.t_axis.cell_width

    @property
    def slice_shape(self) -> tuple[int, int]:
        return (self.nx + 1, self.ny + 1)

    @property
    def field_shape(self) -> tuple[int, int, int]:
        return (self.nt + 1, self.nx + 1, self.ny + 1)

    @property
    def n_boundary(self) -> int:
        return 2 * (self.nx + self.ny)

    @property
    def boundary_field_shape(self) -> tuple[int, int]:
        return (self.nt + 1, self.n_boundary)

    @cached_property
    def times(self) -> Array:
        return _read_only(self.t_axis.cell_cordinates.copy())

    @cached_property
    def points(self) -> Array:
        """Node coordinates, shape (2, nx + 1, ny + 1)."""
        xx, yy = np.meshgrid(
            self.x_axis.cell_cordinates, self.y_axis.cell_cordinates, indexing="ij"
        )
        return _read_only(np.stack([xx, yy]))

    @cached_property
    def spatial_weights(self) -> Array:
        """Product trapezoid weights of the spatial nodes."""
        return _read_only(np.outer(self.x_axis.weights, self.y_axis.weights))

    def time_weights(self, rule: str = "trapezoid") -> Array:
        """
        Quadrature weights of the time levels.

        trapezoid: dt / 2 at both ends, dt elsewhere.
        step: dt on levels 0 .. nt - 1 and zero on the final level, the rule
        induced by the time stepping (each level drives one step).
        """
        if rule == "trapezoid":
            return self.t_axis.weights.copy()
        if rule == "step":
            weights = np.full(self.nt + 1, self.dt)
            weights[-1] = 0.0
            return weights
        raise PreconditionError(f"unknown time rule {rule!r}, expected one of {TIME_RULES}")

    @cached_property
    def _edge_ranges(self) -> dict[str, tuple[int, int]]:
        nx, ny = self.nx, self.ny
        return {
            "south": (0, nx),
            "east": (nx, ny),
            "north": (nx + ny, nx),
            "west": (2 * nx + ny, ny),
        }

    @cached_property
    def boundary_index(self) -> tuple[npt.NDArray[np.int_], npt.NDArray[np.int_]]:
        """(i, j) node indices of the boundary nodes in traversal order."""
        nx, ny = self.nx, self.ny
        i = np.concatenate(
            [
                np.arange(0, nx),
                np.full(ny, nx),
                np.arange(nx, 0, -1),
                np.zeros(ny, dtype=int),
            ]
        )
        j = np.concatenate(
            [
                np.zeros(nx, dtype=int),
                np.arange(0, ny),
                np.full(nx, ny),
                np.arange(ny, 0, -1),
            ]
        )
        return _read_only(i), _read_only(j)

    @cached_property
    def boundary_points(self) -> Array:
        """Boundary node coordinates, shape (2, 2(nx + ny))."""
        i, j = self.boundary_index
        return _read_only(
            np.stack([self.x_axis.cell_cordinates[i], self.y_axis.cell_cordinates[j]])
        )

    @cached_property
    def arclength(self) -> Array:
        """Arclength coordinate s of each boundary node, starting at the origin."""
        steps = np.concatenate(
            [
                np.full(self.nx, self.hx),
                np.full(self.ny, self.hy),
                np.full(self.nx, self.hx),
                np.full(self.ny, self.hy),
            ]
        )
        return _read_only(np.concatenate([[0.0], np.cumsum(steps)[:-1]]))

    @cached_property
    def boundary_weights(self) -> Array:
        """Arclength trapezoid weights; corners get (hx + hy) / 2."""
        weights = np.concatenate(
            [
                np.full(self.nx, self.hx),
                np.full(self.ny, self.hy),
                np.full(self.nx, self.hx),
                np.full(self.ny, self.hy),
            ]
        )
        corners = [start for start, _ in self._edge_ranges.values()]
        weights[corners] = (self.hx + self.hy) / 2
        return _read_only(weights)

    def edge_weights(self, edges: Iterable[str]) -> Array:
        """
        Boundary weights restricted to the given edges.

        Each edge is integrated with its own trapezoid rule, end points
        included, so a corner shared by two selected edges collects both
        halves. Summed over all four edges this equals boundary_weights.
        """
        weights = np.zeros(self.n_boundary)
        for edge in edges:
            if edge not in self._edge_ranges:
                raise PreconditionError(f"unknown edge {edge!r}, expected one of {EDGES}")
            start, length = self._edge_ranges[edge]
            h = self.hx if edge in ("south", "north") else self.hy
            index = np.arange(start, start + length + 1) % self.n_boundary
            edge_weight = np.full(length + 1, h)
            edge_weight[[0, -1]] = h / 2
            np.add.at(weights, index, edge_weight)
        return weights

    def edge_nodes(self, edge: str) -> npt.NDArray[np.int_]:
        """Positions in the boundary array of the nodes of one edge, corners included."""
        if edge not in self._edge_ranges:
            raise PreconditionError(f"unknown edge {edge!r}, expected one of {EDGES}")
        start, length = self._edge_ranges[edge]
        return np.arange(start, start + length + 1) % self.n_boundary

    def trace(self, values: Array) -> Array:
        """Restrict a slice (nx+1, ny+1) or a field (..., nx+1, ny+1) to the boundary."""
        if values.shape[-2:] != self.slice_shape:
            raise DimensionError(
                f"cannot take the trace of shape {values.shape}, "
                f"trailing axes must be {self.slice_shape}"
            )
        i, j = self.boundary_index
        return values[..., i, j]

    def zeros_field(self) -> Field:
        return np.zeros(self.field_shape)

    def zeros_boundary_field(self) -> BoundaryField:
        return np.zeros(self.boundary_field_shape)

    def constant_field(self, value: float) -> Field:
        return np.full(self.field_shape, float(value))

    def constant_boundary_field(self, value: float) -> BoundaryField:
        return np.full(self.boundary_field_shape, float(value))

    def check_field(self, values: Array, name: str = "field", finite: bool = False) -> None:
        _check(values, self.field_shape, name, finite)

    def check_boundary_field(
        self, values: Array, name: str = "boundary field", finite: bool = False
    ) -> None:
        _check(values, self.boundary_field_shape, name, finite)

    def check_slice(self, values: Array, name: str = "slice", finite: bool = False) -> None:
        _check(values, self.slice_shape, name, finite)


def _check(values: Array, shape: tuple[int, ...], name: str, finite: bool) -> None:
    if np.shape(values) != shape:
        raise DimensionError(f"{name} has shape {np.shape(values)}, expected {shape}")
    if finite and not np.all(np.isfinite(values)):
        raise PreconditionError(f"{name} contains non-finite entries")


def inner_product_omega_t(a: Field, b: Field, g: Grid, rule: str = "trapezoid") -> float:
    """Quadrature of a * b over the space-time cylinder."""
    g.check_field(a, "a")
    g.check_field(b, "b")
    product = a * b
    return float(np.einsum("n,ij,nij->", g.time_weights(rule), g.spatial_weights, product))


def inner_product_sigma_t(
    a: BoundaryField,
    b: BoundaryField,
    g: Grid,
    rule: str = "trapezoid",
    edges: Optional[Iterable[str]] = None,
) -> float:
    """
    Quadrature of a * b over the lateral boundary times (0, T).

    With edges given, only those edges are integrated, each with its own
    trapezoid rule.
    """
    g.check_boundary_field(a, "a")
    g.check_boundary_field(b, "b")
    weights = g.boundary_weights if edges is None else g.edge_weights(edges)
    product = a * b
    return float(np.einsum("n,k,nk->", g.time_weights(rule), weights, product))


def spatial_integral(a: Array, g: Grid) -> float:
    """Quadrature of a slice over the spatial domain."""
    g.check_slice(a)
    return float(np.sum(g.spatial_weights * a))


def norm_l2_omega_final(a: Array, g: Grid) -> float:
    """L2 norm over the spatial domain of a single slice, e.g. y(., T) - y_d."""
    g.check_slice(a)
    return float(np.sqrt(np.sum(g.spatial_weights * a * a)))


def norm_sq_omega_t(a: Field, g: Grid, rule: str = "trapezoid") -> float:
    return inner_product_omega_t(a, a, g, rule)


def norm_sq_sigma_t(a: BoundaryField, g: Grid, rule: str = "trapezoid") -> float:
    return inner_product_sigma_t(a, a, g, rule)


def integral_omega_t(a: Field, g: Grid, rule: str = "trapezoid") -> float:
    """Quadrature of a field over the space-time cylinder."""
    g.check_field(a)
    return float(np.einsum("n,ij,nij->", g.time_weights(rule), g.spatial_weights, a))


def integral_sigma_t(a: BoundaryField, g: Grid, rule: str = "trapezoid") -> float:
    """Quadrature of a boundary field over the lateral boundary."""
    g.check_boundary_field(a)
    return float(np.einsum("n,k,nk->", g.time_weights(rule), g.boundary_weights, a))
