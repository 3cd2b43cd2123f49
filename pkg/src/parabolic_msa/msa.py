import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd

from parabolic_msa.exceptions import (
    CostEvaluationError,
    PreconditionError,
    StateBlowUpError,
)
from parabolic_msa.grid import (
    BoundaryField,
    Field,
    Grid,
    integral_omega_t,
    integral_sigma_t,
    norm_sq_omega_t,
    norm_sq_sigma_t,
    spatial_integral,
)
from parabolic_msa.hamiltonian import (
    AugmentationParams,
    MinimizerConfig,
    PointwiseMinimizer,
    enforce_anchor_descent,
    h_omega_aug,
    h_sigma_aug,
    minimize_quadratic_closed_form,
)
from parabolic_msa.pde_solvers import (
    AdjointSolution,
    StateSolution,
    SteppingConfig,
    solve_adjoint,
    solve_state,
    uniform_bound_check,
)
from parabolic_msa.problem import ProblemDefinition

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

TERMINATIONS = ("epsilon", "max_iters", "blow_up")


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-4
    max_iters: int = 10000
    minimizer: MinimizerConfig = field(default_factory=MinimizerConfig)
    stepping: SteppingConfig = field(default_factory=SteppingConfig)
    check_anchor_descent: bool = True
    strict_anchor_descent: bool = False


@dataclass(frozen=True)
class IterationRecord:
    """
    One outer iteration. Record 0 describes the initial controls; record i
    compares iterate i with iterate i - 1.
    """

    index: int
    cost: float
    delta_cost: float
    du_norm_sq: float
    dv_norm_sq: float
    max_state: float
    max_adjoint: float
    inner_iterations: int = 0
    unconverged_nodes: int = 0
    anchor_resets: int = 0


@dataclass
class RunResult:
    controls: tuple[Field, BoundaryField]
    state: StateSolution
    adjoint: AdjointSolution
    history: list[IterationRecord]
    terminated_by: str

    @property
    def initial_cost(self) -> float:
        return self.history[0].cost

    @property
    def final_cost(self) -> float:
        return self.history[-1].cost

    @property
    def iterations(self) -> int:
        return len(self.history) - 1

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(record) for record in self.history])


IterationCallback = Callable[[IterationRecord, Field, BoundaryField, StateSolution], None]


def _finite(values: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        level = int(np.argwhere(~np.isfinite(values))[0][0])
        raise CostEvaluationError(f"{name} integrand is not finite at time level {level}")
    return values


def eval_cost(
    problem: ProblemDefinition,
    state: StateSolution,
    u: Field,
    v: BoundaryField,
    g: Grid,
    rule: str = "step",
) -> float:
    """
    Discrete cost: F over the cylinder, G over the lateral boundary, L at T.

    The default "step" time rule weights the levels that drive a time step,
    which makes the explicit adjoint the exact gradient of this cost.
    """
    g.check_field(u, "u")
    g.check_boundary_field(v, "v")
    x, s = g.points, g.arclength
    t = g.times
    running = np.broadcast_to(
        problem.F(x, t[:, None, None], state.y, u), g.field_shape
    )
    boundary = np.broadcast_to(
        problem.G(s, t[:, None], state.boundary_trace, v), g.boundary_field_shape
    )
    terminal = np.broadcast_to(problem.L(x, state.y[-1]), g.slice_shape)
    _finite(running, "F")
    _finite(boundary, "G")
    if not np.all(np.isfinite(terminal)):
        raise CostEvaluationError("L integrand is not finite at the final time")
    cost = (
        integral_omega_t(running, g, rule)
        + integral_sigma_t(boundary, g, rule)
        + spatial_integral(terminal, g)
    )
    if not math.isfinite(cost):
        raise CostEvaluationError(f"cost is not finite: {cost}")
    return cost


@dataclass
class _UpdateStats:
    inner_iterations: int = 0
    unconverged_nodes: int = 0
    anchor_resets: int = 0


def _update_controls(
    problem: ProblemDefinition,
    g: Grid,
    state: StateSolution,
    adjoint: AdjointSolution,
    u: Field,
    v: BoundaryField,
    rho: float,
    cfg: SolverConfig,
    minimizer: PointwiseMinimizer,
) -> tuple[Field, BoundaryField, _UpdateStats]:
    """Minimize the augmented Hamiltonians node by node, anchored at (u, v)."""
    stats = _UpdateStats()
    x, s, t = g.points, g.arclength, g.times
    quadratic = problem.quadratic if cfg.minimizer.use_closed_form else None

    u_aug = AugmentationParams(rho, u)
    y, p = state.y, adjoint.p

    def u_objective(w):
        return h_omega_aug(problem, x, t[:, None, None], y, w, p, u_aug)

    if problem.u_box.is_singleton:
        u_new = np.full(g.field_shape, problem.u_box.lower)
    elif quadratic is not None and quadratic.alpha is not None:
        u_new = minimize_quadratic_closed_form(quadratic.alpha, p, u_aug, problem.u_box, 1.0)
    else:
        u_new = minimizer.minimize(u_objective, problem.u_box, start=u, anchor=u)
        stats.inner_iterations += minimizer.iterations
        stats.unconverged_nodes += minimizer.unconverged

    v_aug = AugmentationParams(rho, v)
    y_trace, p_trace = state.boundary_trace, adjoint.boundary_trace

    def v_objective(w):
        return h_sigma_aug(problem, s, t[:, None], y_trace, w, p_trace, v_aug)

    if problem.v_box.is_singleton:
        v_new = np.full(g.boundary_field_shape, problem.v_box.lower)
    elif quadratic is not None and quadratic.beta is not None:
        v_new = minimize_quadratic_closed_form(quadratic.beta, p_trace, v_aug, problem.v_box, -1.0)
    else:
        v_new = minimizer.minimize(v_objective, problem.v_box, start=v, anchor=v)
        stats.inner_iterations += minimizer.iterations
        stats.unconverged_nodes += minimizer.unconverged

    # the anchor is a reference point only when it is penalised
    if cfg.check_anchor_descent and rho > 0:
        strict = cfg.strict_anchor_descent
        u_new, resets_u = enforce_anchor_descent(u_objective, u_new, u, strict)
        v_new, resets_v = enforce_anchor_descent(v_objective, v_new, v, strict)
        stats.anchor_resets = resets_u + resets_v
    return u_new, v_new, stats


def _run(
    problem: ProblemDefinition,
    u0: Field,
    v0: BoundaryField,
    rho: float,
    cfg: SolverConfig,
    g: Grid,
    on_iteration: Optional[IterationCallback],
) -> RunResult:
    if not rho >= 0:
        raise PreconditionError(f"rho must be non-negative, got {rho}")
    g.check_field(u0, "u0", finite=True)
    g.check_boundary_field(v0, "v0", finite=True)

    u, v = np.array(u0, dtype=float), np.array(v0, dtype=float)
    state = solve_state(problem, u, v, g, cfg.stepping)
    cost = eval_cost(problem, state, u, v, g)
    adjoint = solve_adjoint(problem, state, u, v, g, cfg.stepping)
    history = [
        IterationRecord(
            index=0,
            cost=cost,
            delta_cost=0.0,
            du_norm_sq=0.0,
            dv_norm_sq=0.0,
            max_state=float(np.max(np.abs(state.y))),
            max_adjoint=uniform_bound_check(adjoint),
        )
    ]
    logger.info(f"{problem.name}: rho={rho}, initial J={cost:.10g}")

    minimizer = PointwiseMinimizer(cfg.minimizer)
    terminated_by = "max_iters"
    for i in range(1, cfg.max_iters + 1):
        u_new, v_new, stats = _update_controls(
            problem, g, state, adjoint, u, v, rho, cfg, minimizer
        )
        try:
            new_state = solve_state(problem, u_new, v_new, g, cfg.stepping)
            new_cost = eval_cost(problem, new_state, u_new, v_new, g)
            new_adjoint = solve_adjoint(problem, new_state, u_new, v_new, g, cfg.stepping)
        except (StateBlowUpError, CostEvaluationError) as error:
            logger.warning(f"iteration {i}: {error}; keeping iterate {i - 1}")
            terminated_by = "blow_up"
            break

        record = IterationRecord(
            index=i,
            cost=new_cost,
            delta_cost=new_cost - cost,
            du_norm_sq=norm_sq_omega_t(u_new - u, g, "step"),
            dv_norm_sq=norm_sq_sigma_t(v_new - v, g, "step"),
            max_state=float(np.max(np.abs(new_state.y))),
            max_adjoint=uniform_bound_check(new_adjoint),
            inner_iterations=stats.inner_iterations,
            unconverged_nodes=stats.unconverged_nodes,
            anchor_resets=stats.anchor_resets,
        )
        history.append(record)
        u, v, state, adjoint, cost = u_new, v_new, new_state, new_adjoint, new_cost
        logger.info(
            f"iter {i}: J={record.cost:.10g} dJ={record.delta_cost:.3e} "
            f"du={record.du_norm_sq:.3e} dv={record.dv_norm_sq:.3e} "
            f"max|y|={record.max_state:.4g} max|p|={record.max_adjoint:.4g}"
        )
        if on_iteration is not None:
            on_iteration(record, u, v, state)
        if abs(record.delta_cost) < cfg.epsilon:
            terminated_by = "epsilon"
            break

    logger.info(
        f"{problem.name}: terminated by {terminated_by} after {len(history) - 1} iterations"
    )
    return RunResult(
        controls=(u, v),
        state=state,
        adjoint=adjoint,
        history=history,
        terminated_by=terminated_by,
    )


def run_basic_msa(
    problem: ProblemDefinition,
    u0: Field,
    v0: BoundaryField,
    cfg: SolverConfig,
    g: Grid,
    on_iteration: Optional[IterationCallback] = None,
) -> RunResult:
    """Successive approximations: state, adjoint, minimize H, repeat."""
    return _run(problem, u0, v0, 0.0, cfg, g, on_iteration)


def run_augmented_msa(
    problem: ProblemDefinition,
    u0: Field,
    v0: BoundaryField,
    rho: float,
    cfg: SolverConfig,
    g: Grid,
    on_iteration: Optional[IterationCallback] = None,
) -> RunResult:
    """Successive approximations with the Hamiltonians penalised by rho (anchor - control)^2."""
    return _run(problem, u0, v0, rho, cfg, g, on_iteration)


@dataclass
class DescentCertificate:
    """
    Per-iteration check of J_{i} - J_{i-1} <= (C - rho)(du_i + dv_i).

    rows has one row per update with the slack of that inequality.
    The tail is the last quarter of the updates.
    """

    rho: float
    c_tilde: float
    fitted_c_tilde: float
    rows: pd.DataFrame
    total_increment: float
    tail_increment: float
    tail_ratio: float
    tail_fraction: float
    summability_bound: float

    @property
    def all_hold(self) -> bool:
        return bool(self.rows["holds"].all())

    @property
    def cauchy_flattening(self) -> bool:
        return self.tail_ratio < self.tail_fraction

    @property
    def summability_holds(self) -> bool:
        return self.total_increment <= 1.1 * self.summability_bound


def descent_certificate(
    history: list[IterationRecord],
    rho: float,
    c_tilde_estimate: Optional[float] = None,
    tail_fraction: float = 0.1,
) -> DescentCertificate:
    """
    Check the descent inequality along an AMSA history.

    Without an estimate, C is fitted as the largest dJ / increment + rho over
    the updates. The squared increments are summable with
    sum <= (J_0 - min J) / (rho - C) whenever C < rho; otherwise the bound
    is infinite.
    """
    updates = [record for record in history if record.index > 0]
    delta = np.array([record.delta_cost for record in updates], dtype=float)
    increment = np.array(
        [record.du_norm_sq + record.dv_norm_sq for record in updates], dtype=float
    )
    moved = increment > 0
    fitted = float(np.max(delta[moved] / increment[moved] + rho)) if np.any(moved) else math.nan
    c_tilde = c_tilde_estimate if c_tilde_estimate is not None else fitted
    factor = 0.0 if math.isnan(c_tilde) else c_tilde - rho

    slack = delta - factor * increment
    costs = np.array([record.cost for record in updates], dtype=float)
    tolerance = 1e-12 * np.maximum(1.0, np.maximum(np.abs(delta), np.abs(costs)))
    rows = pd.DataFrame(
        {
            "iter": [record.index for record in updates],
            "delta_cost": delta,
            "increment": increment,
            "slack": slack,
            "holds": slack <= tolerance,
            "running_increment": np.cumsum(increment),
        }
    )

    total = float(np.sum(increment))
    tail_length = len(updates) // 4
    tail = float(np.sum(increment[len(updates) - tail_length:])) if tail_length else 0.0
    tail_ratio = tail / total if total > 0 else 0.0

    if not math.isnan(c_tilde) and c_tilde < rho and history:
        best = min(record.cost for record in history)
        bound = (history[0].cost - best) / (rho - c_tilde)
    else:
        bound = math.inf

    certificate = DescentCertificate(
        rho=rho,
        c_tilde=c_tilde,
        fitted_c_tilde=fitted,
        rows=rows,
        total_increment=total,
        tail_increment=tail,
        tail_ratio=tail_ratio,
        tail_fraction=tail_fraction,
        summability_bound=bound,
    )
    logger.info(
        f"descent certificate: C={c_tilde:.4g}, rho={rho}, all hold={certificate.all_hold}, "
        f"tail ratio={tail_ratio:.3e}"
    )
    return certificate
