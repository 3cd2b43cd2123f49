import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse.linalg

from parabolic_msa.exceptions import (
    DimensionError,
    LinearSolveError,
    PreconditionError,
    StateBlowUpError,
)
from parabolic_msa.grid import Array, BoundaryField, Field, Grid
from parabolic_msa.problem import DiffusionCoefficients, ProblemDefinition

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

ADJOINT_REACTIONS = ("explicit", "implicit")


@dataclass(frozen=True)
class SteppingConfig:
    """
    Time-stepping choices shared by the state and adjoint solvers.

    adjoint_reaction: "explicit" marches the exact transpose of the state
    scheme (reaction and sources taken at the known level), "implicit"
    treats f_y p together with the diffusion.
    """

    cg_rtol: float = 1e-10
    blow_up_threshold: float = 1e12
    adjoint_reaction: str = "explicit"

    def __post_init__(self) -> None:
        if not 0 < self.cg_rtol < 1:
            raise PreconditionError(f"cg_rtol must lie in (0, 1), got {self.cg_rtol}")
        if not self.blow_up_threshold > 0:
            raise PreconditionError("blow_up_threshold must be positive")
        if self.adjoint_reaction not in ADJOINT_REACTIONS:
            raise PreconditionError(
                f"adjoint_reaction must be one of {ADJOINT_REACTIONS}, "
                f"got {self.adjoint_reaction!r}"
            )


class EllipticOperator:
    """
    Conservative discretization of A with the natural conormal closure.

    S is the stiffness of the discrete energy: a11 on x-edges and a22 on
    y-edges, both weighted by the dual edge length, plus a cell-centred
    cross term when a12 is present (nine-point stencil). With W the nodal
    trapezoid weights, A_h y = W^-1 S y - B(g) where B lifts the conormal
    flux g with the boundary weights. For a = I this is the five-point
    Laplacian with second-order ghost nodes on the edges.
    """

    def __init__(self, diffusion: DiffusionCoefficients, g: Grid):
        self.g = g
        x = g.x_axis.cell_cordinates
        y = g.y_axis.cell_cordinates
        x_mid = (x[:-1] + x[1:]) / 2
        y_mid = (y[:-1] + y[1:]) / 2

        a11, _, _ = diffusion.evaluate(np.stack(np.meshgrid(x_mid, y, indexing="ij")))
        _, a22, _ = diffusion.evaluate(np.stack(np.meshgrid(x, y_mid, indexing="ij")))
        self.x_coupling = a11 * g.y_axis.weights[None, :] / g.hx
        self.y_coupling = a22 * g.x_axis.weights[:, None] / g.hy

        if diffusion.a12 is None:
            self.a12_cell: Optional[Array] = None
        else:
            _, _, a12 = diffusion.evaluate(
                np.stack(np.meshgrid(x_mid, y_mid, indexing="ij"))
            )
            self.a12_cell = a12

        self.weights = g.spatial_weights
        self.stiffness_diagonal = self._stiffness_diagonal()

    def stiffness(self, y: Array) -> Array:
        """S y, matrix free."""
        out = np.zeros_like(y)
        dx = y[1:, :] - y[:-1, :]
        flux = self.x_coupling * dx
        out[:-1, :] -= flux
        out[1:, :] += flux

        dy = y[:, 1:] - y[:, :-1]
        flux = self.y_coupling * dy
        out[:, :-1] -= flux
        out[:, 1:] += flux

        if self.a12_cell is not None:
            hx, hy = self.g.hx, self.g.hy
            gx = (dx[:, :-1] + dx[:, 1:]) / (2 * hx)
            gy = (dy[:-1, :] + dy[1:, :]) / (2 * hy)
            cross_x = self.a12_cell * gy * hy / 2
            cross_y = self.a12_cell * gx * hx / 2
            out[:-1, :-1] += -cross_x - cross_y
            out[1:, :-1] += cross_x - cross_y
            out[:-1, 1:] += -cross_x + cross_y
            out[1:, 1:] += cross_x + cross_y
        return out

    def _stiffness_diagonal(self) -> Array:
        diagonal = np.zeros(self.g.slice_shape)
        diagonal[:-1, :] += self.x_coupling
        diagonal[1:, :] += self.x_coupling
        diagonal[:, :-1] += self.y_coupling
        diagonal[:, 1:] += self.y_coupling
        if self.a12_cell is not None:
            half = self.a12_cell / 2
            diagonal[:-1, :-1] += half
            diagonal[1:, :-1] -= half
            diagonal[:-1, 1:] -= half
            diagonal[1:, 1:] += half
        return diagonal

    def boundary_load(self, flux: Optional[Array]) -> Array:
        """Scatter boundary weights * flux onto the boundary nodes of a slice."""
        load = np.zeros(self.g.slice_shape)
        if flux is None:
            return load
        i, j = self.g.boundary_index
        load[i, j] = self.g.boundary_weights * flux
        return load

    def apply(self, y: Array, conormal_flux: Optional[Array] = None) -> Array:
        return (self.stiffness(y) - self.boundary_load(conormal_flux)) / self.weights


@lru_cache(maxsize=16)
def elliptic_operator(diffusion: DiffusionCoefficients, g: Grid) -> EllipticOperator:
    return EllipticOperator(diffusion, g)


def apply_elliptic(
    a: DiffusionCoefficients,
    y_slice: Array,
    g: Grid,
    conormal_flux: Optional[Array] = None,
) -> Array:
    """
    A_h applied to a spatial slice.

    conormal_flux holds the prescribed a grad(y) . n on the boundary nodes,
    in traversal order; None means zero flux.
    """
    g.check_slice(y_slice, "slice")
    if conormal_flux is not None and np.shape(conormal_flux) != (g.n_boundary,):
        raise DimensionError(
            f"conormal flux has shape {np.shape(conormal_flux)}, expected ({g.n_boundary},)"
        )
    return elliptic_operator(a, g).apply(y_slice, conormal_flux)


class ImplicitStep(object):
    """An object to take an implicit step with the conjugate gradient method."""

    def __init__(self, rtol: float = 1e-10):
        self.rtol = rtol
        self.iterations = 0

    def step(
        self,
        k: float,
        operator: EllipticOperator,
        phi: Array,
        flux: Optional[Array] = None,
        shift: Optional[Array] = None,
        x0: Optional[Array] = None,
    ) -> Array:
        """Solve the form (I + k shift + k A_h) y = phi with conormal flux.

        The system is multiplied by W so that it is symmetric:
        (W (1 + k shift) + k S) y = W phi + k B_w flux
        """
        shape = operator.g.slice_shape
        mass = operator.weights if shift is None else operator.weights * (1 + k * shift)
        diagonal = (mass + k * operator.stiffness_diagonal).ravel()
        if np.any(diagonal <= 0):
            raise LinearSolveError("implicit step matrix is not positive definite")

        def matvec(vector):
            field = np.reshape(vector, shape)
            return (mass * field + k * operator.stiffness(field)).ravel()

        n = diagonal.size
        a = scipy.sparse.linalg.LinearOperator((n, n), matvec=matvec, dtype=float)
        jacobi = scipy.sparse.linalg.LinearOperator(
            (n, n), matvec=lambda r: r / diagonal, dtype=float
        )
        b = (operator.weights * phi + k * operator.boundary_load(flux)).ravel()

        count = [0]

        def callback(_):
            count[0] += 1

        solution, info = scipy.sparse.linalg.cg(
            a,
            b,
            x0=None if x0 is None else x0.ravel(),
            rtol=self.rtol,
            atol=0.0,
            M=jacobi,
            callback=callback,
        )
        if info != 0:
            raise LinearSolveError(
                f"conjugate gradient stopped with info={info} after {count[0]} iterations"
            )
        self.iterations += count[0]
        return np.reshape(solution, shape)


@dataclass
class StateSolution:
    y: Field
    boundary_trace: BoundaryField


@dataclass
class AdjointSolution:
    p: Field
    boundary_trace: BoundaryField


def _check_level(values: Array, level: int, threshold: float) -> None:
    if not np.all(np.isfinite(values)):
        raise StateBlowUpError(level, float("inf"))
    max_abs = float(np.max(np.abs(values)))
    if max_abs > threshold:
        raise StateBlowUpError(level, max_abs)


def solve_state(
    problem: ProblemDefinition,
    u: Field,
    v: BoundaryField,
    g: Grid,
    config: Optional[SteppingConfig] = None,
) -> StateSolution:
    """
    March the state equation forward with IMEX backward Euler.

    (I + dt A_h) y^{n+1} = y^n - dt f(x, t_n, y^n, u^n), conormal flux -v^n.
    Level n of the controls drives the step from t_n to t_{n+1}, so the
    final control level does not influence the state.
    """
    config = config or SteppingConfig()
    g.check_field(u, "u", finite=True)
    g.check_boundary_field(v, "v", finite=True)

    operator = elliptic_operator(problem.diffusion, g)
    stepper = ImplicitStep(rtol=config.cg_rtol)
    points, times, dt = g.points, g.times, g.dt

    y = g.zeros_field()
    y[0] = problem.initial_state(points)
    for n in range(g.nt):
        reaction = np.broadcast_to(problem.f(points, times[n], y[n], u[n]), g.slice_shape)
        rhs = y[n] - dt * reaction
        _check_level(rhs, n + 1, config.blow_up_threshold)
        y[n + 1] = stepper.step(dt, operator, rhs, flux=-v[n], x0=y[n])
        _check_level(y[n + 1], n + 1, config.blow_up_threshold)

    logger.debug(f"state solve used {stepper.iterations} CG iterations over {g.nt} steps")
    return StateSolution(y=y, boundary_trace=g.trace(y))


def solve_adjoint(
    problem: ProblemDefinition,
    state: StateSolution,
    u: Field,
    v: BoundaryField,
    g: Grid,
    config: Optional[SteppingConfig] = None,
) -> AdjointSolution:
    """
    March the adjoint equation backward from p^N = L_y(x, y^N).

    The explicit variant is the transpose of the state scheme:
        (I + dt A_h) p^{N-1} = p^N
        (I + dt A_h) p^n = (1 - dt f_y^{n+1}) p^{n+1} + dt F_y^{n+1}
    with conormal flux G_y^{n+1}, data evaluated at level n + 1. Paired
    with the step time rule it gives the exact gradient of the discrete
    cost. The implicit variant solves
        (I + dt A_h + dt f_y^n) p^n = p^{n+1} + dt F_y^n
    with conormal flux G_y^n.
    """
    config = config or SteppingConfig()
    g.check_field(state.y, "state")
    g.check_field(u, "u")
    g.check_boundary_field(v, "v")

    operator = elliptic_operator(problem.diffusion, g)
    stepper = ImplicitStep(rtol=config.cg_rtol)
    points, s, times, dt = g.points, g.arclength, g.times, g.dt
    y, y_trace = state.y, state.boundary_trace
    N = g.nt

    def data(n: int) -> tuple[Array, Array, Array]:
        f_y = np.broadcast_to(problem.f_y(points, times[n], y[n], u[n]), g.slice_shape)
        F_y = np.broadcast_to(problem.F_y(points, times[n], y[n], u[n]), g.slice_shape)
        G_y = np.broadcast_to(problem.G_y(s, times[n], y_trace[n], v[n]), (g.n_boundary,))
        return f_y, F_y, G_y

    p = g.zeros_field()
    p[N] = np.broadcast_to(problem.L_y(points, y[N]), g.slice_shape)
    _check_level(p[N], N, np.inf)

    if config.adjoint_reaction == "explicit":
        p[N - 1] = stepper.step(dt, operator, p[N], x0=p[N])
        for n in range(N - 2, -1, -1):
            f_y, F_y, G_y = data(n + 1)
            rhs = (1 - dt * f_y) * p[n + 1] + dt * F_y
            p[n] = stepper.step(dt, operator, rhs, flux=G_y, x0=p[n + 1])
            _check_level(p[n], n, np.inf)
    else:
        for n in range(N - 1, -1, -1):
            f_y, F_y, G_y = data(n)
            rhs = p[n + 1] + dt * F_y
            p[n] = stepper.step(dt, operator, rhs, flux=G_y, shift=f_y, x0=p[n + 1])
            _check_level(p[n], n, np.inf)

    logger.debug(f"adjoint solve used {stepper.iterations} CG iterations over {N} steps")
    return AdjointSolution(p=p, boundary_trace=g.trace(p))


def uniform_bound_check(p: AdjointSolution) -> float:
    """Largest nodal |p| over the whole trajectory."""
    return float(np.max(np.abs(p.p)))
