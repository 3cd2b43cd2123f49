import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt
import pandas as pd

from parabolic_msa.exceptions import InvalidProblemError

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

# f(x, t, y, u) and F(x, t, y, u); x has shape (2, ...) with x[0], x[1] the
# coordinates, every argument broadcasts against the others.
ScalarFn4 = Callable[[Array, Array, Array, Array], Array]
# G(s, t, y, v) with s the boundary arclength
ScalarFn3 = Callable[[Array, Array, Array, Array], Array]
# L(x, y)
ScalarFn2 = Callable[[Array, Array], Array]
SpatialFn = Callable[[Array], Array]


def _zeros(*args) -> Array:
    return np.zeros(np.broadcast(*args).shape)


def _full(value: float, *args) -> Array:
    return np.full(np.broadcast(*args).shape, float(value))


@dataclass(frozen=True)
class Box:
    """Admissible interval [lower, upper] for a control value."""

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self) -> None:
        if math.isnan(self.lower) or math.isnan(self.upper) or self.lower > self.upper:
            raise InvalidProblemError(f"empty control box [{self.lower}, {self.upper}]")

    @property
    def is_bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    @property
    def is_singleton(self) -> bool:
        return self.lower == self.upper

    def project(self, value):
        """Clamp value into the box; identity for an unbounded box."""
        if isinstance(value, np.ndarray):
            return np.clip(value, self.lower, self.upper)
        return float(min(max(value, self.lower), self.upper))

    def sample(self, n: int, span: float = 2.0) -> Array:
        """n evenly spaced values, replacing infinite ends by a finite span."""
        lower = self.lower if math.isfinite(self.lower) else min(-span, self.upper - 2 * span)
        upper = self.upper if math.isfinite(self.upper) else max(span, lower + 2 * span)
        return np.linspace(lower, upper, n)


def project_control(value, box: Box):
    return box.project(value)


@dataclass(frozen=True)
class DiffusionCoefficients:
    """
    Symmetric coefficients of A y = -sum_ij d_j(a_ij d_i y).

    a_12 = a_21 is stored once, so symmetry holds by construction. Without
    a12 the cross term is zero and the stencil reduces to five points.
    """

    a11: SpatialFn
    a22: SpatialFn
    a12: Optional[SpatialFn] = None
    K: float = 1.0

    def __post_init__(self) -> None:
        if not self.K > 0:
            raise InvalidProblemError(f"ellipticity constant must be positive, got {self.K}")

    @classmethod
    def identity(cls) -> "DiffusionCoefficients":
        return cls.constant(1.0, 1.0)

    @classmethod
    def constant(
        cls, a11: float, a22: float, a12: float = 0.0, K: Optional[float] = None
    ) -> "DiffusionCoefficients":
        if K is None:
            # smallest eigenvalue of the constant matrix
            K = (a11 + a22) / 2 - math.sqrt(((a11 - a22) / 2) ** 2 + a12**2)
        return cls(
            a11=lambda x: _full(a11, x[0]),
            a22=lambda x: _full(a22, x[0]),
            a12=None if a12 == 0 else (lambda x: _full(a12, x[0])),
            K=K,
        )

    def evaluate(self, points: Array) -> tuple[Array, Array, Array]:
        a11 = np.broadcast_to(self.a11(points), points.shape[1:]).astype(float)
        a22 = np.broadcast_to(self.a22(points), points.shape[1:]).astype(float)
        if self.a12 is None:
            a12 = np.zeros(points.shape[1:])
        else:
            a12 = np.broadcast_to(self.a12(points), points.shape[1:]).astype(float)
        return a11, a22, a12

    def check_ellipticity(self, points: Array, n_directions: int = 16) -> None:
        """Check xi^T a xi >= K |xi|^2 for unit directions xi at the given points."""
        a11, a22, a12 = self.evaluate(points)
        if not (np.all(np.isfinite(a11)) and np.all(np.isfinite(a22)) and np.all(np.isfinite(a12))):
            raise InvalidProblemError("diffusion coefficients are not finite")
        angles = np.linspace(0.0, np.pi, n_directions, endpoint=False)
        for theta in angles:
            c, s = math.cos(theta), math.sin(theta)
            quadratic_form = a11 * c * c + 2 * a12 * c * s + a22 * s * s
            worst = float(np.min(quadratic_form))
            if worst < self.K * (1 - 1e-12):
                raise InvalidProblemError(
                    f"diffusion is not uniformly elliptic with K={self.K}: "
                    f"xi^T a xi = {worst:.6g} for xi = ({c:.3f}, {s:.3f})"
                )


@dataclass(frozen=True)
class QuadraticControl:
    """
    Declares control structure that admits a closed-form Hamiltonian minimizer.

    alpha: F = (alpha / 2) u^2 + F0(x, t, y) and f = f0(x, t, y) - u
    beta: G = (beta / 2) v^2 + G0(s, t, y)
    Either may be None, in which case that control uses the iterative minimizer.
    """

    alpha: Optional[float] = None
    beta: Optional[float] = None


@dataclass(frozen=True)
class ProblemDefinition:
    """
    A concrete instance of the control problem.

    The callbacks are vectorised: they receive numpy arrays that broadcast
    against each other and return arrays of the broadcast shape.
    """

    name: str
    f: ScalarFn4
    f_y: ScalarFn4
    F: ScalarFn4
    F_y: ScalarFn4
    G: ScalarFn3
    G_y: ScalarFn3
    L: ScalarFn2
    L_y: ScalarFn2
    y0: SpatialFn
    diffusion: DiffusionCoefficients = field(default_factory=DiffusionCoefficients.identity)
    u_box: Box = field(default_factory=Box)
    v_box: Box = field(default_factory=Box)
    f_u: Optional[ScalarFn4] = None
    F_u: Optional[ScalarFn4] = None
    G_v: Optional[ScalarFn3] = None
    f_yy: Optional[ScalarFn4] = None
    F_yy: Optional[ScalarFn4] = None
    G_yy: Optional[ScalarFn3] = None
    L_yy: Optional[ScalarFn2] = None
    quadratic: Optional[QuadraticControl] = None

    def __post_init__(self) -> None:
        lattice = SamplingLattice(n_space=3, n_time=2, n_states=3, n_controls=3)
        for sample in _callback_samples(self, lattice):
            _evaluate(sample.name, sample.fn, sample.args, sample.labels)
        points = lattice.spatial_points()
        y0 = np.asarray(self.y0(points), dtype=float)
        if not np.all(np.isfinite(y0)):
            raise InvalidProblemError(f"{self.name}: initial state y0 is not finite")
        self.diffusion.check_ellipticity(points)

    def initial_state(self, points: Array) -> Array:
        return np.broadcast_to(self.y0(points), points.shape[1:]).astype(float)

    def f_u_or_fd(self, x, t, y, u) -> Array:
        if self.f_u is not None:
            return np.asarray(self.f_u(x, t, y, u), dtype=float)
        return _central_difference(lambda w: self.f(x, t, y, w), u)

    def F_u_or_fd(self, x, t, y, u) -> Array:
        if self.F_u is not None:
            return np.asarray(self.F_u(x, t, y, u), dtype=float)
        return _central_difference(lambda w: self.F(x, t, y, w), u)

    def G_v_or_fd(self, s, t, y, v) -> Array:
        if self.G_v is not None:
            return np.asarray(self.G_v(s, t, y, v), dtype=float)
        return _central_difference(lambda w: self.G(s, t, y, w), v)


def _central_difference(fn: Callable[[Array], Array], at: Array) -> Array:
    at = np.asarray(at, dtype=float)
    step = 1e-6 * (1 + np.abs(at))
    return (np.asarray(fn(at + step)) - np.asarray(fn(at - step))) / (2 * step)


@dataclass(frozen=True)
class SamplingLattice:
    """Points at which problem callbacks are sampled."""

    n_space: int = 5
    n_time: int = 3
    n_states: int = 5
    n_controls: int = 5
    Lx: float = 1.0
    Ly: float = 1.0
    T: float = 1.0
    state_span: float = 2.0

    def spatial_points(self) -> Array:
        xx, yy = np.meshgrid(
            np.linspace(0, self.Lx, self.n_space),
            np.linspace(0, self.Ly, self.n_space),
            indexing="ij",
        )
        return np.stack([xx.ravel(), yy.ravel()])

    def times(self) -> Array:
        return np.linspace(0, self.T, self.n_time)

    def states(self) -> Array:
        return np.linspace(-self.state_span, self.state_span, self.n_states)

    def arclengths(self) -> Array:
        return np.linspace(0, 2 * (self.Lx + self.Ly), self.n_space * 2, endpoint=False)


@dataclass
class _Sample:
    name: str
    fn: Callable
    args: tuple
    labels: tuple[str, ...]
    derivative: Optional[Callable] = None
    second_derivative: Optional[Callable] = None


def _callback_samples(problem: ProblemDefinition, lattice: SamplingLattice) -> list[_Sample]:
    """Flattened argument tuples covering the lattice, one entry per callback."""
    points = lattice.spatial_points()
    times, states = lattice.times(), lattice.states()
    u_values = problem.u_box.sample(lattice.n_controls)
    v_values = problem.v_box.sample(lattice.n_controls)

    p, t, y, u = np.meshgrid(np.arange(points.shape[1]), times, states, u_values, indexing="ij")
    x = points[:, p.ravel()]
    interior = (x, t.ravel(), y.ravel(), u.ravel())

    s, tb, yb, v = np.meshgrid(lattice.arclengths(), times, states, v_values, indexing="ij")
    boundary = (s.ravel(), tb.ravel(), yb.ravel(), v.ravel())

    pl, yl = np.meshgrid(np.arange(points.shape[1]), states, indexing="ij")
    terminal = (points[:, pl.ravel()], yl.ravel())

    return [
        _Sample("f", problem.f, interior, ("x", "t", "y", "u"), problem.f_y, problem.f_yy),
        _Sample("F", problem.F, interior, ("x", "t", "y", "u"), problem.F_y, problem.F_yy),
        _Sample("G", problem.G, boundary, ("s", "t", "y", "v"), problem.G_y, problem.G_yy),
        _Sample("L", problem.L, terminal, ("x", "y"), problem.L_y, problem.L_yy),
    ]


def _evaluate(name: str, fn: Callable, args: tuple, labels: tuple[str, ...]) -> Array:
    shape = np.broadcast(*[a[0] if a.ndim == 2 else a for a in args]).shape
    values = np.broadcast_to(np.asarray(fn(*args), dtype=float), shape)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        k = bad[0]
        point = ", ".join(
            f"{label}={_format_arg(arg, k)}" for label, arg in zip(labels, args)
        )
        raise InvalidProblemError(f"callback {name} is not finite at {point}")
    return values


def _format_arg(arg: Array, k: int) -> str:
    if arg.ndim == 2:
        return f"({arg[0, k]:.4g}, {arg[1, k]:.4g})"
    return f"{np.broadcast_to(arg, arg.shape)[k]:.4g}"


@dataclass(frozen=True)
class ConsistencyFailure:
    callback: str
    point: str
    analytic: float
    finite_difference: float


@dataclass
class ValidationReport:
    """Result of sampling a problem's callbacks on a lattice."""

    max_abs_derivative: dict[str, float]
    max_abs_second_derivative: dict[str, float]
    failures: list[ConsistencyFailure]
    samples: int

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name, value in self.max_abs_derivative.items():
            rows.append(
                {
                    "callback": name,
                    "max_abs_derivative": value,
                    "max_abs_second_derivative": self.max_abs_second_derivative.get(
                        name, np.nan
                    ),
                    "consistency_failures": sum(
                        failure.callback.startswith(name) for failure in self.failures
                    ),
                }
            )
        return pd.DataFrame(rows)


def validate(
    problem: ProblemDefinition,
    lattice: Optional[SamplingLattice] = None,
    rtol: float = 1e-5,
) -> ValidationReport:
    """
    Sample every callback and its y-derivatives on a lattice.

    Derivatives are compared against central differences with step
    1e-5 (1 + |y|); a derivative d fails when |d - fd| > rtol (1 + |d|).
    Non-finite values raise InvalidProblemError naming the callback and point.
    """
    lattice = lattice or SamplingLattice()
    max_first: dict[str, float] = {}
    max_second: dict[str, float] = {}
    failures: list[ConsistencyFailure] = []
    samples = 0

    for sample in _callback_samples(problem, lattice):
        y_position = sample.labels.index("y")
        values = _evaluate(sample.name, sample.fn, sample.args, sample.labels)
        samples += values.size
        checks = [(f"{sample.name}_y", sample.fn, sample.derivative, max_first)]
        if sample.second_derivative is not None:
            checks.append(
                (f"{sample.name}_yy", sample.derivative, sample.second_derivative, max_second)
            )
        for label, primitive, derivative, maxima in checks:
            analytic = _evaluate(label, derivative, sample.args, sample.labels)
            maxima[sample.name] = float(np.max(np.abs(analytic)))
            y = sample.args[y_position]
            step = 1e-5 * (1 + np.abs(y))

            def shifted(delta):
                args = list(sample.args)
                args[y_position] = y + delta
                return np.broadcast_to(
                    np.asarray(primitive(*args), dtype=float), analytic.shape
                )

            fd = (shifted(step) - shifted(-step)) / (2 * step)
            bad = np.flatnonzero(np.abs(analytic - fd) > rtol * (1 + np.abs(analytic)))
            for k in bad[:10]:
                point = ", ".join(
                    f"{name}={_format_arg(arg, k)}"
                    for name, arg in zip(sample.labels, sample.args)
                )
                failures.append(
                    ConsistencyFailure(label, point, float(analytic[k]), float(fd[k]))
                )
            if bad.size:
                logger.warning(
                    f"{problem.name}: {label} disagrees with finite differences at "
                    f"{bad.size} of {analytic.size} lattice points"
                )

    report = ValidationReport(max_first, max_second, failures, samples)
    logger.debug(f"{problem.name}: validated {samples} samples, passed={report.passed}")
    return report


def paper_target(alpha: float = 1.0, horizon: float = 1.0) -> SpatialFn:
    amplitude = math.exp(-2 * alpha * math.pi * horizon)

    def y_d(x: Array) -> Array:
        return amplitude * np.sin(np.pi * x[0]) * np.sin(np.pi * x[1])

    return y_d


def builtin_paper_test(alpha: float = 1.0, horizon: float = 1.0) -> ProblemDefinition:
    """
    Linear-quadratic test problem: y_t - Laplace(y) = u + y with zero flux.

    f = -(u + y), F = (alpha / 2) u^2, G = 0, L = (y - y_d)^2 / 2 with
    y_d = exp(-2 alpha pi T) sin(pi x) sin(pi y). G vanishes, so the
    boundary Hamiltonian -p v has no minimizer over an unbounded set; the
    boundary control is pinned to zero, which is the zero-flux condition.
    """
    y_d = paper_target(alpha, horizon)

    return ProblemDefinition(
        name="paper",
        f=lambda x, t, y, u: -(u + y),
        f_y=lambda x, t, y, u: _full(-1.0, x[0], t, y, u),
        f_u=lambda x, t, y, u: _full(-1.0, x[0], t, y, u),
        f_yy=lambda x, t, y, u: _zeros(x[0], t, y, u),
        F=lambda x, t, y, u: alpha / 2 * np.asarray(u) ** 2 + _zeros(x[0], t, y),
        F_y=lambda x, t, y, u: _zeros(x[0], t, y, u),
        F_u=lambda x, t, y, u: alpha * np.asarray(u) + _zeros(x[0], t, y),
        F_yy=lambda x, t, y, u: _zeros(x[0], t, y, u),
        G=lambda s, t, y, v: _zeros(s, t, y, v),
        G_y=lambda s, t, y, v: _zeros(s, t, y, v),
        G_v=lambda s, t, y, v: _zeros(s, t, y, v),
        G_yy=lambda s, t, y, v: _zeros(s, t, y, v),
        L=lambda x, y: 0.5 * (y - y_d(x)) ** 2,
        L_y=lambda x, y: y - y_d(x),
        L_yy=lambda x, y: _full(1.0, x[0], y),
        y0=lambda x: np.sin(np.pi * x[0]) * np.sin(np.pi * x[1]),
        u_box=Box(),
        v_box=Box(0.0, 0.0),
        quadratic=QuadraticControl(alpha=alpha),
    )


def builtin_heat_test() -> ProblemDefinition:
    """Pure Neumann heat flow from cos(pi x) cos(pi y); no cost, no control."""
    return ProblemDefinition(
        name="heat",
        f=lambda x, t, y, u: _zeros(x[0], t, y, u),
        f_y=lambda x, t, y, u: _zeros(x[0], t, y, u),
        f_u=lambda x, t, y, u: _zeros(x[0], t, y, u),
        F=lambda x, t, y, u: _zeros(x[0], t, y, u),
        F_y=lambda x, t, y, u: _zeros(x[0], t, y, u),
        F_u=lambda x, t, y, u: _zeros(x[0], t, y, u),
        G=lambda s, t, y, v: _zeros(s, t, y, v),
        G_y=lambda s, t, y, v: _zeros(s, t, y, v),
        G_v=lambda s, t, y, v: _zeros(s, t, y, v),
        L=lambda x, y: _zeros(x[0], y),
        L_y=lambda x, y: _zeros(x[0], y),
        y0=lambda x: np.cos(np.pi * x[0]) * np.cos(np.pi * x[1]),
        u_box=Box(0.0, 0.0),
        v_box=Box(0.0, 0.0),
    )


def semilinear_target(x: Array) -> Array:
    return 0.5 * np.cos(np.pi * x[0]) * np.cos(np.pi * x[1])


def builtin_semilinear_test(alpha: float = 0.1, beta: float = 0.1) -> ProblemDefinition:
    """
    Cubic reaction with distributed and boundary control.

    y_t + A y + y + y^3 = u, conormal flux -v with v in [-1, 1], tracking
    y_d = cos(pi x) cos(pi y) / 2 over the whole horizon and at T.
    """
    y_d = semilinear_target

    return ProblemDefinition(
        name="semilinear",
        f=lambda x, t, y, u: y + y**3 - u + _zeros(x[0], t),
        f_y=lambda x, t, y, u: 1 + 3 * np.asarray(y) ** 2 + _zeros(x[0], t, u),
        f_u=lambda x, t, y, u: _full(-1.0, x[0], t, y, u),
        f_yy=lambda x, t, y, u: 6 * np.asarray(y) + _zeros(x[0], t, u),
        F=lambda x, t, y, u: alpha / 2 * u**2 + 0.5 * (y - y_d(x)) ** 2 + _zeros(t),
        F_y=lambda x, t, y, u: y - y_d(x) + _zeros(t, u),
        F_u=lambda x, t, y, u: alpha * u + _zeros(x[0], t, y),
        F_yy=lambda x, t, y, u: _full(1.0, x[0], t, y, u),
        G=lambda s, t, y, v: beta / 2 * v**2 + _zeros(s, t, y),
        G_y=lambda s, t, y, v: _zeros(s, t, y, v),
        G_v=lambda s, t, y, v: beta * v + _zeros(s, t, y),
        G_yy=lambda s, t, y, v: _zeros(s, t, y, v),
        L=lambda x, y: 0.5 * (y - y_d(x)) ** 2,
        L_y=lambda x, y: y - y_d(x),
        L_yy=lambda x, y: _full(1.0, x[0], y),
        y0=lambda x: _zeros(x[0]),
        u_box=Box(),
        v_box=Box(-1.0, 1.0),
        quadratic=QuadraticControl(alpha=alpha, beta=beta),
    )


BUILTIN_PROBLEMS: dict[str, Callable[..., ProblemDefinition]] = {
    "paper": builtin_paper_test,
    "heat": builtin_heat_test,
    "semilinear": builtin_semilinear_test,
}
