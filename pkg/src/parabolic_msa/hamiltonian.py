import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from parabolic_msa.exceptions import (
    InvalidCurvatureError,
    MinimizerError,
    PreconditionError,
)
from parabolic_msa.grid import Array
from parabolic_msa.problem import Box, ProblemDefinition

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

Value = Union[float, Array]
Objective = Callable[[Array], Array]


@dataclass(frozen=True)
class MinimizerConfig:
    """
    Schedule of the pointwise projected gradient descent.

    The learning rate starts at initial_lr and is multiplied by decay every
    decay_every iterations.

    With adaptive set, the schedule is only a base rate: each node carries
    its own step multiplier that doubles after an accepted step and halves
    after a rejected one. With adaptive unset every step is the plain
    projected step u - lr * grad H, taken whether or not it descends.
    """

    initial_lr: float = 1e-3
    decay: float = 0.9
    decay_every: int = 100
    max_inner_iters: int = 2000
    grad_tol: float = 1e-6
    use_closed_form: bool = True
    adaptive: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.decay < 1:
            raise PreconditionError(f"decay must lie in (0, 1), got {self.decay}")
        if not self.initial_lr > 0:
            raise PreconditionError(f"initial_lr must be positive, got {self.initial_lr}")
        if self.max_inner_iters < 1:
            raise PreconditionError("max_inner_iters must be at least 1")
        if self.decay_every < 1:
            raise PreconditionError("decay_every must be at least 1")
        if not self.grad_tol > 0:
            raise PreconditionError("grad_tol must be positive")


@dataclass(frozen=True)
class AugmentationParams:
    """Penalty rho (anchor - control)^2 tying a control to its previous value."""

    rho: float
    anchor: Value

    def __post_init__(self) -> None:
        if not self.rho >= 0:
            raise PreconditionError(f"rho must be non-negative, got {self.rho}")


def h_omega(problem: ProblemDefinition, x, t, y, u, p) -> Array:
    """Distributed Hamiltonian F - p f."""
    return np.asarray(problem.F(x, t, y, u)) - np.asarray(p) * np.asarray(problem.f(x, t, y, u))


def h_sigma(problem: ProblemDefinition, s, t, y, v, p) -> Array:
    """Boundary Hamiltonian G - p v."""
    return np.asarray(problem.G(s, t, y, v)) - np.asarray(p) * np.asarray(v)


def h_omega_aug(problem: ProblemDefinition, x, t, y, u, p, aug: AugmentationParams) -> Array:
    return h_omega(problem, x, t, y, u, p) + aug.rho * (np.asarray(aug.anchor) - u) ** 2


def h_sigma_aug(problem: ProblemDefinition, s, t, y, v, p, aug: AugmentationParams) -> Array:
    return h_sigma(problem, s, t, y, v, p) + aug.rho * (np.asarray(aug.anchor) - v) ** 2


def minimize_quadratic_closed_form(
    alpha: float,
    p: Value,
    aug: AugmentationParams,
    box: Box,
    coupling: float = 1.0,
) -> Value:
    """
    Exact minimizer of (alpha / 2) w^2 + coupling p w + rho (anchor - w)^2 over box.

    coupling = 1 fits the distributed Hamiltonian with f = f0 - u, and
    coupling = -1 the boundary Hamiltonian with G = (beta / 2) v^2 + G0.
    """
    curvature = alpha + 2 * aug.rho
    if not curvature > 0:
        raise InvalidCurvatureError(
            f"closed form needs alpha + 2 rho > 0, got alpha={alpha}, rho={aug.rho}"
        )
    stationary = (2 * aug.rho * np.asarray(aug.anchor) - coupling * np.asarray(p)) / curvature
    projected = box.project(np.asarray(stationary, dtype=float))
    if np.ndim(projected) == 0:
        return float(projected)
    return projected


def _gradient(objective: Objective, u: Array) -> Array:
    step = 1e-6 * (1 + np.abs(u))
    return (objective(u + step) - objective(u - step)) / (2 * step)


def _evaluate(objective: Objective, u: Array) -> Array:
    values = np.broadcast_to(np.asarray(objective(u), dtype=float), u.shape)
    if not np.all(np.isfinite(values)):
        bad = np.flatnonzero(~np.isfinite(values))[0]
        raise MinimizerError(
            f"objective is not finite at control value {u.ravel()[bad]:.6g}"
        )
    return values


class PointwiseMinimizer(object):
    """
    Projected gradient descent run independently at every node.

    The objective is vectorised: it maps an array of control values to the
    array of objective values node by node. Statistics of the last call are
    kept on the instance.
    """

    def __init__(self, cfg: Optional[MinimizerConfig] = None):
        self.cfg = cfg or MinimizerConfig()
        self.iterations = 0
        self.unconverged = 0

    def _descend(
        self, objective: Objective, box: Box, start: Array
    ) -> tuple[Array, Array, int, Array]:
        cfg = self.cfg
        u = box.project(np.array(start, dtype=float))
        value = _evaluate(objective, u)
        gradient = _gradient(objective, u)
        multiplier = np.ones_like(u)
        active = np.abs(u - box.project(u - gradient)) > cfg.grad_tol
        lr = cfg.initial_lr
        iteration = 0
        while np.any(active) and iteration < cfg.max_inner_iters:
            iteration += 1
            trial = np.where(active, box.project(u - lr * multiplier * gradient), u)
            trial_value = _evaluate(objective, trial)
            if cfg.adaptive:
                accepted = active & (trial_value <= value)
            else:
                accepted = active
            u = np.where(accepted, trial, u)
            value = np.where(accepted, trial_value, value)
            if cfg.adaptive:
                multiplier = np.where(
                    accepted, multiplier * 2, np.where(active, multiplier / 2, multiplier)
                )
            if np.any(accepted):
                gradient = np.where(accepted, _gradient(objective, u), gradient)
            # a vanishing multiplier means no descent is left at this resolution
            stalled = multiplier * lr < 1e-300
            active = (np.abs(u - box.project(u - gradient)) > cfg.grad_tol) & ~stalled
            if iteration % cfg.decay_every == 0:
                lr *= cfg.decay
        return u, value, iteration, active

    def minimize(
        self,
        objective: Objective,
        box: Box,
        start: Value,
        anchor: Optional[Value] = None,
    ) -> Value:
        """
        Minimize objective over box at every node.

        For a bounded box the descent is also started from both box ends;
        the lowest objective wins, ties go to the candidate nearest the
        anchor (or the start when no anchor is given).
        """
        scalar = np.ndim(start) == 0 and (anchor is None or np.ndim(anchor) == 0)
        start_array = np.atleast_1d(np.asarray(start, dtype=float))
        reference = start_array if anchor is None else np.asarray(anchor, dtype=float)
        reference = np.broadcast_to(reference, start_array.shape)

        if box.is_singleton:
            self.iterations, self.unconverged = 0, 0
            result = np.full(start_array.shape, box.lower)
            return float(result[0]) if scalar else result

        starts = [start_array]
        if box.is_bounded:
            starts += [np.full(start_array.shape, box.lower), np.full(start_array.shape, box.upper)]

        best_u, best_value, iterations, unconverged = None, None, 0, None
        for candidate_start in starts:
            u, value, used, active = self._descend(objective, box, candidate_start)
            iterations += used
            if best_u is None:
                best_u, best_value, unconverged = u, value, active
                continue
            tie = np.abs(value - best_value) <= 1e-12 * (1 + np.abs(best_value))
            closer = np.abs(u - reference) < np.abs(best_u - reference)
            better = (value < best_value) & ~tie | (tie & closer)
            best_u = np.where(better, u, best_u)
            best_value = np.where(better, value, best_value)
            unconverged = np.where(better, active, unconverged)

        self.iterations = iterations
        self.unconverged = int(np.count_nonzero(unconverged))
        if self.unconverged:
            logger.warning(
                f"{self.unconverged} nodes did not reach grad_tol={self.cfg.grad_tol} "
                f"within {self.cfg.max_inner_iters} iterations"
            )
        return float(best_u[0]) if scalar else best_u


def minimize_pointwise(
    objective: Objective,
    box: Box,
    cfg: Optional[MinimizerConfig] = None,
    start: Value = 0.0,
    anchor: Optional[Value] = None,
) -> Value:
    return PointwiseMinimizer(cfg).minimize(objective, box, start, anchor)


def enforce_anchor_descent(
    objective: Objective, candidate: Array, anchor: Array, strict: bool = False
) -> tuple[Array, int]:
    """
    Keep a candidate only where the augmented objective does not exceed its
    value at the anchor; reset the other nodes to the anchor.

    Returns the repaired controls and the number of reset nodes. In strict
    mode a violation raises MinimizerError instead of being repaired.
    """
    at_candidate = np.asarray(objective(candidate), dtype=float)
    at_anchor = np.asarray(objective(anchor), dtype=float)
    violated = at_candidate > at_anchor + 1e-12 * (1 + np.abs(at_anchor))
    resets = int(np.count_nonzero(violated))
    if resets and strict:
        worst = float(np.max(np.where(violated, at_candidate - at_anchor, -np.inf)))
        raise MinimizerError(
            f"minimizer raised the augmented Hamiltonian above its anchor value at "
            f"{resets} nodes (worst excess {worst:.3g})"
        )
    if resets:
        logger.warning(f"anchor descent failed at {resets} nodes, keeping the anchor there")
        return np.where(violated, anchor, candidate), resets
    return candidate, 0
