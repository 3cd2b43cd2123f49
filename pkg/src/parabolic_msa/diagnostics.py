import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from parabolic_msa.exceptions import PreconditionError
from parabolic_msa.grid import (
    EDGES,
    BoundaryField,
    Field,
    Grid,
    inner_product_omega_t,
    inner_product_sigma_t,
    integral_omega_t,
    integral_sigma_t,
    norm_l2_omega_final,
    norm_sq_omega_t,
    norm_sq_sigma_t,
)
from parabolic_msa.hamiltonian import h_omega, h_sigma
from parabolic_msa.msa import eval_cost
from parabolic_msa.pde_solvers import (
    AdjointSolution,
    StateSolution,
    SteppingConfig,
    solve_adjoint,
    solve_state,
)
from parabolic_msa.problem import ProblemDefinition, builtin_heat_test

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

Controls = tuple[Field, BoundaryField]
AMPLITUDES = (1e-1, 1e-2, 1e-3)
# gradient checks compare against finite differences of the cost, so the
# linear solves must be tighter than the difference quotient resolves
GRADIENT_STEPPING = SteppingConfig(cg_rtol=1e-12)


@dataclass(frozen=True)
class BoundCheckReport:
    lhs: float
    rhs_without_constant: float
    fitted_constant: float
    samples: int = 1


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return max(0.0, lhs / rhs)
    return 0.0


def check_state_stability(
    problem: ProblemDefinition,
    base: Controls,
    perturbed: Controls,
    g: Grid,
    config: Optional[SteppingConfig] = None,
    base_state: Optional[StateSolution] = None,
) -> BoundCheckReport:
    """
    Compare the state change caused by a control change with its source.

    lhs = |dy|^2 over the cylinder plus |dy|^2 over the lateral boundary.
    rhs = |dv|^2 on the boundary plus |f(y, u_phi) - f(y, u_theta)|^2, with
    y the base state. Control norms use the step time rule because the final
    control level never reaches the state.
    """
    u_theta, v_theta = base
    u_phi, v_phi = perturbed
    theta = base_state or solve_state(problem, u_theta, v_theta, g, config)
    phi = solve_state(problem, u_phi, v_phi, g, config)

    dy = phi.y - theta.y
    lhs = norm_sq_omega_t(dy, g) + norm_sq_sigma_t(g.trace(dy), g)

    x, t = g.points, g.times[:, None, None]
    df = np.broadcast_to(
        problem.f(x, t, theta.y, u_phi) - problem.f(x, t, theta.y, u_theta), g.field_shape
    )
    rhs = norm_sq_sigma_t(v_phi - v_theta, g, "step") + norm_sq_omega_t(df, g, "step")
    return BoundCheckReport(lhs=lhs, rhs_without_constant=rhs, fitted_constant=_ratio(lhs, rhs))


@dataclass
class _Reference:
    state: StateSolution
    adjoint: AdjointSolution
    cost: float


def _reference(
    problem: ProblemDefinition, controls: Controls, g: Grid, config: Optional[SteppingConfig]
) -> _Reference:
    u, v = controls
    state = solve_state(problem, u, v, g, config)
    adjoint = solve_adjoint(problem, state, u, v, g, config)
    return _Reference(state, adjoint, eval_cost(problem, state, u, v, g))


def hamiltonian_gap(
    problem: ProblemDefinition,
    theta: Controls,
    phi: Controls,
    reference: _Reference,
    g: Grid,
) -> float:
    """Integrated H(y, p, phi) - H(y, p, theta) with y, p of the theta controls."""
    u_theta, v_theta = theta
    u_phi, v_phi = phi
    x, s = g.points, g.arclength
    t = g.times
    y, p = reference.state.y, reference.adjoint.p
    y_trace, p_trace = reference.state.boundary_trace, reference.adjoint.boundary_trace
    distributed = np.broadcast_to(
        h_omega(problem, x, t[:, None, None], y, u_phi, p)
        - h_omega(problem, x, t[:, None, None], y, u_theta, p),
        g.field_shape,
    )
    boundary = np.broadcast_to(
        h_sigma(problem, s, t[:, None], y_trace, v_phi, p_trace)
        - h_sigma(problem, s, t[:, None], y_trace, v_theta, p_trace),
        g.boundary_field_shape,
    )
    return integral_omega_t(distributed, g, "step") + integral_sigma_t(boundary, g, "step")


def check_cost_gap(
    problem: ProblemDefinition,
    theta: Controls,
    phi: Controls,
    g: Grid,
    config: Optional[SteppingConfig] = None,
    reference: Optional[_Reference] = None,
) -> BoundCheckReport:
    """
    Remainder of the cost change after the Hamiltonian gap.

    lhs = J(phi) - J(theta) - gap, with the gap integrated along the state
    and adjoint of theta; rhs = |u_phi - u_theta|^2 + |v_phi - v_theta|^2.
    """
    reference = reference or _reference(problem, theta, g, config)
    u_phi, v_phi = phi
    state_phi = solve_state(problem, u_phi, v_phi, g, config)
    cost_phi = eval_cost(problem, state_phi, u_phi, v_phi, g)
    gap = hamiltonian_gap(problem, theta, phi, reference, g)
    lhs = cost_phi - reference.cost - gap
    rhs = norm_sq_omega_t(u_phi - theta[0], g, "step") + norm_sq_sigma_t(
        v_phi - theta[1], g, "step"
    )
    return BoundCheckReport(lhs=lhs, rhs_without_constant=rhs, fitted_constant=_ratio(lhs, rhs))


def smooth_field(g: Grid, rng: np.random.Generator, n_modes: int = 3) -> Field:
    """Low-frequency cosine combination on the cylinder, scaled to max |.| = 1."""
    x, y = g.points
    t = g.times[:, None, None]
    field = np.zeros(g.field_shape)
    for kx in range(n_modes):
        for ky in range(n_modes):
            for kt in range(n_modes):
                c = rng.standard_normal()
                field += (
                    c
                    * np.cos(kx * np.pi * x / g.Lx)
                    * np.cos(ky * np.pi * y / g.Ly)
                    * np.cos(kt * np.pi * t / g.T)
                )
    return field / np.max(np.abs(field))


def smooth_boundary_field(g: Grid, rng: np.random.Generator, n_modes: int = 3) -> BoundaryField:
    """Low-frequency periodic combination along the boundary, scaled to max |.| = 1."""
    perimeter = 2 * (g.Lx + g.Ly)
    s = g.arclength[None, :]
    t = g.times[:, None]
    field = np.zeros(g.boundary_field_shape)
    for m in range(n_modes):
        for kt in range(n_modes):
            a, b = rng.standard_normal(2)
            angle = 2 * np.pi * m * s / perimeter
            field += (a * np.cos(angle) + b * np.sin(angle)) * np.cos(kt * np.pi * t / g.T)
    return field / np.max(np.abs(field))


def boundary_edge_report(v: BoundaryField, g: Grid, rule: str = "step") -> pd.DataFrame:
    """
    Boundary control edge by edge: space-time integral, squared norm and
    peak magnitude. Corner nodes count towards both of their edges.
    """
    g.check_boundary_field(v, "v", finite=True)
    ones = np.ones(g.boundary_field_shape)
    rows = []
    for edge in EDGES:
        nodes = g.edge_nodes(edge)
        rows.append(
            {
                "edge": edge,
                "nodes": nodes.size,
                "integral": inner_product_sigma_t(v, ones, g, rule, edges=[edge]),
                "norm_sq": inner_product_sigma_t(v, v, g, rule, edges=[edge]),
                "max_abs": float(np.max(np.abs(v[:, nodes]))),
            }
        )
    return pd.DataFrame(rows)


@dataclass
class StudyReport:
    """Bound checks over seeded perturbations at several amplitudes."""

    frame: pd.DataFrame
    seed: int

    @property
    def per_amplitude(self) -> pd.DataFrame:
        grouped = self.frame.groupby("amplitude")["ratio"]
        return pd.DataFrame(
            {"max_ratio": grouped.max(), "median_ratio": grouped.median()}
        ).reset_index()

    @property
    def fitted_constant(self) -> float:
        return float(self.frame["ratio"].max())

    @property
    def amplitude_spread(self) -> float:
        """Largest over smallest per-amplitude fitted constant."""
        maxima = self.per_amplitude["max_ratio"].to_numpy()
        if np.all(maxima == 0):
            return 1.0
        if np.any(maxima == 0):
            return math.inf
        return float(np.max(maxima) / np.min(maxima))

    @property
    def max_over_median(self) -> float:
        median = float(self.frame["ratio"].median())
        if median == 0:
            return 0.0 if self.fitted_constant == 0 else math.inf
        return self.fitted_constant / median

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.frame[["lhs", "rhs", "ratio"]].to_numpy())))

    def amplitude_stable(self, factor: float = 3.0) -> bool:
        return self.finite and self.amplitude_spread <= factor


def _study(
    kind: str,
    problem: ProblemDefinition,
    base: Controls,
    g: Grid,
    amplitudes: Sequence[float],
    samples: int,
    seed: int,
    config: Optional[SteppingConfig],
) -> StudyReport:
    if samples < 1:
        raise PreconditionError(f"samples must be at least 1, got {samples}")
    rng = np.random.default_rng(seed)
    u, v = base
    base_state: Optional[StateSolution] = None
    reference: Optional[_Reference] = None
    if kind == "stability":
        base_state = solve_state(problem, u, v, g, config)
    else:
        reference = _reference(problem, base, g, config)

    rows = []
    for amplitude in amplitudes:
        for sample in range(samples):
            du, dv = smooth_field(g, rng), smooth_boundary_field(g, rng)
            perturbed = (u + amplitude * du, v + amplitude * dv)
            if kind == "stability":
                report = check_state_stability(
                    problem, base, perturbed, g, config, base_state=base_state
                )
            else:
                report = check_cost_gap(problem, base, perturbed, g, config, reference=reference)
            rows.append(
                {
                    "amplitude": amplitude,
                    "sample": sample,
                    "lhs": report.lhs,
                    "rhs": report.rhs_without_constant,
                    "ratio": report.fitted_constant,
                }
            )
    study = StudyReport(frame=pd.DataFrame(rows), seed=seed)
    logger.info(
        f"{kind} study: fitted constant {study.fitted_constant:.4g}, "
        f"amplitude spread {study.amplitude_spread:.3f}"
    )
    return study


def stability_study(
    problem: ProblemDefinition,
    base: Controls,
    g: Grid,
    amplitudes: Sequence[float] = AMPLITUDES,
    samples: int = 50,
    seed: int = 0,
    config: Optional[SteppingConfig] = None,
) -> StudyReport:
    return _study("stability", problem, base, g, amplitudes, samples, seed, config)


def cost_gap_study(
    problem: ProblemDefinition,
    base: Controls,
    g: Grid,
    amplitudes: Sequence[float] = AMPLITUDES,
    samples: int = 50,
    seed: int = 0,
    config: Optional[SteppingConfig] = None,
) -> StudyReport:
    return _study("costgap", problem, base, g, amplitudes, samples, seed, config)


def adjoint_directional_derivative(
    problem: ProblemDefinition,
    state: StateSolution,
    adjoint: AdjointSolution,
    u: Field,
    v: BoundaryField,
    du: Field,
    dv: BoundaryField,
    g: Grid,
) -> float:
    """dJ(u, v)[du, dv] from the adjoint: <F_u - p f_u, du> + <G_v - p, dv>."""
    x, s = g.points, g.arclength
    t = g.times
    y, p = state.y, adjoint.p
    distributed = np.broadcast_to(
        problem.F_u_or_fd(x, t[:, None, None], y, u)
        - p * problem.f_u_or_fd(x, t[:, None, None], y, u),
        g.field_shape,
    )
    boundary = np.broadcast_to(
        problem.G_v_or_fd(s, t[:, None], state.boundary_trace, v) - adjoint.boundary_trace,
        g.boundary_field_shape,
    )
    return inner_product_omega_t(distributed, du, g, "step") + inner_product_sigma_t(
        boundary, dv, g, "step"
    )


@dataclass
class GradientCheckReport:
    frame: pd.DataFrame
    seed: int
    fd_step: float

    @property
    def max_relative_error(self) -> float:
        return float(self.frame["relative_error"].max())


def gradient_check(
    problem: ProblemDefinition,
    u: Field,
    v: BoundaryField,
    g: Grid,
    n_directions: int = 5,
    seed: int = 0,
    fd_step: float = 1e-4,
    config: SteppingConfig = GRADIENT_STEPPING,
) -> GradientCheckReport:
    """
    Compare adjoint directional derivatives with central differences of the
    discrete cost, for seeded smooth directions in u alone and in v alone.
    """
    if n_directions < 1:
        raise PreconditionError(f"n_directions must be at least 1, got {n_directions}")
    rng = np.random.default_rng(seed)
    state = solve_state(problem, u, v, g, config)
    adjoint = solve_adjoint(problem, state, u, v, g, config)

    def cost(u_eval, v_eval):
        state_eval = solve_state(problem, u_eval, v_eval, g, config)
        return eval_cost(problem, state_eval, u_eval, v_eval, g)

    rows = []
    for direction in range(n_directions):
        du, dv = smooth_field(g, rng), smooth_boundary_field(g, rng)
        for kind, du_k, dv_k in (("u", du, np.zeros_like(dv)), ("v", np.zeros_like(du), dv)):
            adjoint_side = adjoint_directional_derivative(
                problem, state, adjoint, u, v, du_k, dv_k, g
            )
            finite_difference = (
                cost(u + fd_step * du_k, v + fd_step * dv_k)
                - cost(u - fd_step * du_k, v - fd_step * dv_k)
            ) / (2 * fd_step)
            scale = max(abs(adjoint_side), abs(finite_difference))
            error = abs(adjoint_side - finite_difference) / scale if scale > 0 else 0.0
            rows.append(
                {
                    "direction": direction,
                    "control": kind,
                    "adjoint": adjoint_side,
                    "finite_difference": finite_difference,
                    "relative_error": error,
                }
            )
    report = GradientCheckReport(frame=pd.DataFrame(rows), seed=seed, fd_step=fd_step)
    logger.info(f"gradient check: max relative error {report.max_relative_error:.3e}")
    return report


def _observed_orders(errors: Sequence[float]) -> list[float]:
    orders = [math.nan]
    for coarse, fine in zip(errors[:-1], errors[1:]):
        orders.append(math.log2(coarse / fine) if fine > 0 and coarse > 0 else math.nan)
    return orders


def _discrete_decay(h_x: float, h_y: float) -> float:
    """Eigenvalue of the discrete Neumann operator for the cos(pi x) cos(pi y) mode."""
    return (2 - 2 * math.cos(math.pi * h_x)) / h_x**2 + (2 - 2 * math.cos(math.pi * h_y)) / h_y**2


@dataclass
class ConvergenceReport:
    """
    Refinement study of pure Neumann heat flow from cos(pi x) cos(pi y).

    The temporal rows refine dt at fixed nx and measure the error against
    the exact solution of the spatially discrete system; the spatial rows
    refine h at fixed dt against the exact solution of the time-discrete
    system. Both also list the error against the continuous solution.
    """

    temporal: pd.DataFrame
    spatial: pd.DataFrame
    initial_error: float

    @property
    def temporal_order(self) -> float:
        return float(self.temporal["order"].iloc[1:].min())

    @property
    def spatial_order(self) -> float:
        return float(self.spatial["order"].iloc[1:].min())

    def within(self, spatial=(1.9, 2.1), temporal=(0.9, 1.1)) -> bool:
        return (
            spatial[0] <= self.spatial_order <= spatial[1]
            and temporal[0] <= self.temporal_order <= temporal[1]
        )


def convergence_study(
    levels: int,
    T: float = 0.1,
    base_nx: int = 8,
    base_nt: int = 20,
    time_nx: int = 16,
    config: Optional[SteppingConfig] = None,
) -> ConvergenceReport:
    if levels < 2:
        raise PreconditionError(f"a convergence study needs at least 2 levels, got {levels}")
    problem = builtin_heat_test()
    exact_rate = 2 * math.pi**2

    def run(nx: int, nt: int) -> tuple[Grid, StateSolution]:
        g = Grid(nx=nx, ny=nx, nt=nt, T=T)
        state = solve_state(problem, g.zeros_field(), g.zeros_boundary_field(), g, config)
        return g, state

    mode_rows = []
    initial_error = 0.0
    for level in range(levels):
        nt = base_nt * 2**level
        g, state = run(time_nx, nt)
        mode = problem.initial_state(g.points)
        semi_discrete = math.exp(-_discrete_decay(g.hx, g.hy) * T) * mode
        exact = math.exp(-exact_rate * T) * mode
        initial_error = max(initial_error, norm_l2_omega_final(state.y[0] - mode, g))
        mode_rows.append(
            {
                "nx": time_nx,
                "nt": nt,
                "dt": g.dt,
                "error": norm_l2_omega_final(state.y[-1] - semi_discrete, g),
                "true_error": norm_l2_omega_final(state.y[-1] - exact, g),
            }
        )
    temporal = pd.DataFrame(mode_rows)
    temporal["order"] = _observed_orders(temporal["error"].tolist())

    space_rows = []
    for level in range(levels):
        nx = base_nx * 2**level
        g, state = run(nx, base_nt)
        mode = problem.initial_state(g.points)
        time_discrete = (1 + g.dt * exact_rate) ** (-g.nt) * mode
        exact = math.exp(-exact_rate * T) * mode
        initial_error = max(initial_error, norm_l2_omega_final(state.y[0] - mode, g))
        space_rows.append(
            {
                "nx": nx,
                "nt": base_nt,
                "h": g.hx,
                "error": norm_l2_omega_final(state.y[-1] - time_discrete, g),
                "true_error": norm_l2_omega_final(state.y[-1] - exact, g),
            }
        )
    spatial = pd.DataFrame(space_rows)
    spatial["order"] = _observed_orders(spatial["error"].tolist())

    report = ConvergenceReport(temporal=temporal, spatial=spatial, initial_error=initial_error)
    logger.info(
        f"convergence: spatial order {report.spatial_order:.3f}, "
        f"temporal order {report.temporal_order:.3f}"
    )
    return report
