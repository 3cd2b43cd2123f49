import argparse
import configparser
import dataclasses
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from parabolic_msa.diagnostics import (
    AMPLITUDES,
    GRADIENT_STEPPING,
    boundary_edge_report,
    convergence_study,
    cost_gap_study,
    gradient_check,
    stability_study,
)
from parabolic_msa.exceptions import ConfigError, CostEvaluationError, MsaError, StateBlowUpError
from parabolic_msa.grid import Grid
from parabolic_msa.hamiltonian import MinimizerConfig
from parabolic_msa.msa import (
    IterationRecord,
    RunResult,
    SolverConfig,
    run_augmented_msa,
    run_basic_msa,
)
from parabolic_msa.pde_solvers import ADJOINT_REACTIONS, StateSolution, SteppingConfig
from parabolic_msa.problem import (
    BUILTIN_PROBLEMS,
    Box,
    ProblemDefinition,
    builtin_paper_test,
    builtin_semilinear_test,
)
from parabolic_msa.utilities import MeshReshaper, RowAppender, Saver

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

ENV_PREFIX = "PMSA_"
SUITES = ("gradient", "stability", "costgap", "convergence")
EXIT_CODES = {"epsilon": 0, "max_iters": 2, "blow_up": 3}
CONFIG_ERROR_EXIT = 1
HISTORY_COLUMNS = ["iter", "J", "dJ", "du_norm_sq", "dv_norm_sq", "max_state", "max_adjoint"]
SWEEP_COLUMNS = ["rho", "terminated_by", "iterations", "final_J", "fraction_of_descent_steps"]
DESCENT_TOLERANCE = 1e-10


@dataclass(frozen=True)
class RunConfig:
    """Every parameter of a run; the defaults reproduce the unit-cube experiment."""

    problem: str = "paper"
    alpha: float = 1.0
    beta: float = 0.1
    nx: int = 100
    ny: int = 100
    nt: int = 25
    Lx: float = 1.0
    Ly: float = 1.0
    T: float = 1.0
    rho: float = 1.0
    epsilon: float = 1e-4
    max_iters: int = 10000
    basic: bool = False
    initial_lr: float = 1e-3
    decay: float = 0.9
    decay_every: int = 100
    max_inner_iters: int = 2000
    grad_tol: float = 1e-6
    closed_form: bool = True
    adaptive_lr: bool = True
    strict_anchor: bool = False
    u0_const: float = 0.01
    v0_const: float = 0.0
    u_min: Optional[float] = None
    u_max: Optional[float] = None
    v_min: Optional[float] = None
    v_max: Optional[float] = None
    cg_rtol: float = 1e-10
    adjoint_reaction: str = "explicit"
    output_dir: str = "results"
    seed: int = 0
    snapshot_every: int = 0
    levels: int = 3
    samples: int = 50
    n_directions: int = 5
    fd_step: float = 1e-4
    rho_list: str = ""
    log_level: str = "INFO"

    def __post_init__(self) -> None:
        checks = [
            (
                self.problem in BUILTIN_PROBLEMS,
                f"problem must be one of {sorted(BUILTIN_PROBLEMS)}",
            ),
            (self.rho >= 0, "rho must be >= 0"),
            (self.epsilon > 0, "epsilon must be > 0"),
            (min(self.nx, self.ny, self.nt) >= 4, "nx, ny and nt must be >= 4"),
            (self.max_iters >= 1, "max_iters must be >= 1"),
            (min(self.Lx, self.Ly, self.T) > 0, "Lx, Ly and T must be > 0"),
            (self.alpha > 0 and self.beta >= 0, "alpha must be > 0 and beta >= 0"),
            (0 < self.decay < 1, "decay must lie in (0, 1)"),
            (self.initial_lr > 0 and self.grad_tol > 0, "initial_lr and grad_tol must be > 0"),
            (
                self.decay_every >= 1 and self.max_inner_iters >= 1,
                "inner iteration counts must be >= 1",
            ),
            (0 < self.cg_rtol < 1, "cg_rtol must lie in (0, 1)"),
            (
                self.adjoint_reaction in ADJOINT_REACTIONS,
                f"adjoint_reaction must be one of {ADJOINT_REACTIONS}",
            ),
            (self.snapshot_every >= 0, "snapshot_every must be >= 0"),
            (self.levels >= 2, "levels must be >= 2"),
            (self.samples >= 1 and self.n_directions >= 1, "samples and n_directions must be >= 1"),
            (self.fd_step > 0, "fd_step must be > 0"),
            (self.log_level.upper() in ("DEBUG", "INFO", "WARNING", "ERROR"), "unknown log_level"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        for low, high in (("u_min", "u_max"), ("v_min", "v_max")):
            lower, upper = getattr(self, low), getattr(self, high)
            if lower is not None and upper is not None and lower > upper:
                raise ConfigError(f"{low} must not exceed {high}")

    def grid(self) -> Grid:
        return Grid(nx=self.nx, ny=self.ny, nt=self.nt, Lx=self.Lx, Ly=self.Ly, T=self.T)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            minimizer=MinimizerConfig(
                initial_lr=self.initial_lr,
                decay=self.decay,
                decay_every=self.decay_every,
                max_inner_iters=self.max_inner_iters,
                grad_tol=self.grad_tol,
                use_closed_form=self.closed_form,
                adaptive=self.adaptive_lr,
            ),
            stepping=self.stepping_config(),
            strict_anchor_descent=self.strict_anchor,
        )

    def stepping_config(self) -> SteppingConfig:
        return SteppingConfig(cg_rtol=self.cg_rtol, adjoint_reaction=self.adjoint_reaction)

    def rhos(self) -> list[float]:
        try:
            return [float(item) for item in self.rho_list.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"rho_list is not a list of numbers: {self.rho_list!r}")


def _parse_value(name: str, raw: str, kind: type) -> object:
    text = raw.strip()
    try:
        if "Optional" in str(kind) or str(kind) == "float | None":
            return None if text.lower() in ("", "none") else float(text)
        if kind in (bool, "bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {name} = {raw!r}")


def read_config_file(path: str) -> dict[str, str]:
    """Read flat key = value lines with # comments."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as error:
        raise ConfigError(f"cannot read config {path}: {error}")
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None
    )
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        parser.read_string("[run]\n" + text, source=path)
    except configparser.Error as error:
        raise ConfigError(f"malformed config {path}: {error}")
    return dict(parser["run"])


def resolve_config(
    config_path: Optional[str] = None,
    overrides: Optional[Mapping[str, str]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Defaults, then the config file, then PMSA_* variables, then flags."""
    environ = os.environ if environ is None else environ
    known = {f.name: f for f in fields(RunConfig)}
    raw: dict[str, str] = {}
    if config_path:
        for key, value in read_config_file(config_path).items():
            name = key.replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r} in {config_path}")
            raw[name] = value
    for name in known:
        env_name = ENV_PREFIX + name.upper()
        if env_name in environ:
            raw[name] = environ[env_name]
    for name, value in (overrides or {}).items():
        if name not in known:
            raise ConfigError(f"unknown option {name!r}")
        raw[name] = value
    values = {name: _parse_value(name, value, known[name].type) for name, value in raw.items()}
    return RunConfig(**values)  # type: ignore[arg-type]


def manifest_text(config: RunConfig, outputs: Optional[Mapping[str, object]] = None) -> str:
    """The resolved configuration in config-file format, outputs as comments."""
    lines = ["# parabolic-msa run manifest"]
    for name, value in dataclasses.asdict(config).items():
        lines.append(f"{name} = {'none' if value is None else value}")
    for name, value in (outputs or {}).items():
        lines.append(f"# {name}: {value}")
    return "\n".join(lines) + "\n"


def build_problem(config: RunConfig) -> ProblemDefinition:
    if config.problem == "paper":
        problem = builtin_paper_test(alpha=config.alpha, horizon=config.T)
    elif config.problem == "semilinear":
        problem = builtin_semilinear_test(alpha=config.alpha, beta=config.beta)
    else:
        problem = BUILTIN_PROBLEMS[config.problem]()

    def override(box: Box, lower: Optional[float], upper: Optional[float]) -> Box:
        return Box(
            box.lower if lower is None else lower,
            box.upper if upper is None else upper,
        )

    return dataclasses.replace(
        problem,
        u_box=override(problem.u_box, config.u_min, config.u_max),
        v_box=override(problem.v_box, config.v_min, config.v_max),
    )


def initial_controls(problem: ProblemDefinition, config: RunConfig, g: Grid):
    u0 = problem.u_box.project(g.constant_field(config.u0_const))
    v0 = problem.v_box.project(g.constant_boundary_field(config.v0_const))
    if not (np.all(u0 == config.u0_const) and np.all(v0 == config.v0_const)):
        logger.warning("initial controls were projected into the admissible boxes")
    return u0, v0


def set_log_level(level: str) -> None:
    for name in list(logging.root.manager.loggerDict):
        if name.startswith("parabolic_msa"):
            package_logger = logging.getLogger(name)
            package_logger.setLevel(level.upper())
            for handler in package_logger.handlers:
                handler.setLevel(level.upper())


def history_frame(history: Sequence[IterationRecord]) -> pd.DataFrame:
    updates = [record for record in history if record.index > 0]
    return pd.DataFrame(
        {
            "iter": [record.index for record in updates],
            "J": [record.cost for record in updates],
            "dJ": [record.delta_cost for record in updates],
            "du_norm_sq": [record.du_norm_sq for record in updates],
            "dv_norm_sq": [record.dv_norm_sq for record in updates],
            "max_state": [record.max_state for record in updates],
            "max_adjoint": [record.max_adjoint for record in updates],
        },
        columns=HISTORY_COLUMNS,
    )


def fraction_of_descent_steps(history: Sequence[IterationRecord]) -> float:
    updates = [record for record in history if record.index > 0]
    if not updates:
        return math.nan
    return sum(record.delta_cost <= DESCENT_TOLERANCE for record in updates) / len(updates)


def execute_run(config: RunConfig, output_dir: Path) -> RunResult:
    """Run (A)MSA for one configuration and write its CSV files to output_dir."""
    g = config.grid()
    problem = build_problem(config)
    u0, v0 = initial_controls(problem, config, g)
    saver = Saver(output_dir)
    reshaper = MeshReshaper(g)

    def snapshot(record: IterationRecord, u, v, state: StateSolution) -> None:
        if config.snapshot_every and record.index % config.snapshot_every == 0:
            final_state = reshaper.slice_to_long(state.y[-1])
            final_state.insert(2, "t", g.T)
            saver.save_frame(final_state, f"snapshot_{record.index:05d}_state.csv")
            saver.save_frame(reshaper.field_to_long(u), f"snapshot_{record.index:05d}_control.csv")

    solver_config = config.solver_config()
    if config.basic:
        result = run_basic_msa(problem, u0, v0, solver_config, g, on_iteration=snapshot)
    else:
        result = run_augmented_msa(
            problem, u0, v0, config.rho, solver_config, g, on_iteration=snapshot
        )

    u, v = result.controls
    saver.save_frame(history_frame(result.history), "history.csv")
    saver.save_frame(reshaper.slice_to_long(result.state.y[-1]), "final_state.csv")
    saver.save_frame(reshaper.field_to_long(u), "final_control.csv")
    saver.save_frame(reshaper.boundary_to_long(v), "final_boundary_control.csv")
    saver.save_frame(boundary_edge_report(v, g), "boundary_edges.csv")
    saver.save_text(
        manifest_text(
            config,
            {
                "terminated_by": result.terminated_by,
                "iterations": result.iterations,
                "initial_J": repr(result.initial_cost),
                "final_J": repr(result.final_cost),
            },
        ),
        "manifest.txt",
    )
    return result


def _load(
    config_path: Optional[str], overrides: Optional[Mapping[str, str]]
) -> Optional[RunConfig]:
    try:
        config = resolve_config(config_path, overrides)
    except MsaError as error:
        logger.error(f"{error}")
        return None
    set_log_level(config.log_level)
    return config


def cmd_run(config_path: Optional[str], overrides: Optional[Mapping[str, str]] = None) -> int:
    """Run MSA (basic) or AMSA; exit 0 on epsilon, 2 on max_iters, 3 on blow-up."""
    config = _load(config_path, overrides)
    if config is None:
        return CONFIG_ERROR_EXIT
    try:
        result = execute_run(config, Path(config.output_dir))
    except (StateBlowUpError, CostEvaluationError) as error:
        logger.error(f"initial controls are not admissible: {error}")
        return EXIT_CODES["blow_up"]
    except MsaError as error:
        logger.error(f"{error}")
        return CONFIG_ERROR_EXIT
    logger.info(f"terminated by {result.terminated_by} after {result.iterations} iterations")
    return EXIT_CODES[result.terminated_by]


def _diagnose(suite: str, config: RunConfig) -> tuple[pd.DataFrame, bool]:
    if suite == "convergence":
        report = convergence_study(config.levels, config=config.stepping_config())
        frame = pd.concat(
            [
                report.temporal.assign(study="temporal"),
                report.spatial.assign(study="spatial"),
            ],
            ignore_index=True,
        )
        logger.info(
            f"spatial order {report.spatial_order:.3f}, temporal order {report.temporal_order:.3f}"
        )
        return frame, report.within()

    g = config.grid()
    problem = build_problem(config)
    base = initial_controls(problem, config, g)
    if suite == "gradient":
        stepping = dataclasses.replace(
            GRADIENT_STEPPING,
            cg_rtol=min(config.cg_rtol, GRADIENT_STEPPING.cg_rtol),
            adjoint_reaction=config.adjoint_reaction,
        )
        gradient = gradient_check(
            problem, base[0], base[1], g, config.n_directions, config.seed, config.fd_step, stepping
        )
        return gradient.frame, gradient.max_relative_error < 1e-4

    runner = stability_study if suite == "stability" else cost_gap_study
    study = runner(
        problem, base, g, AMPLITUDES, config.samples, config.seed, config.stepping_config()
    )
    passed = study.amplitude_stable(3.0)
    if suite == "stability":
        passed = passed and study.max_over_median <= 10.0
    return study.frame, passed


def cmd_diagnose(
    suite: str, config_path: Optional[str], overrides: Optional[Mapping[str, str]] = None
) -> int:
    """Run one diagnostics suite, write diagnose_<suite>.csv; exit 0 when it passes."""
    if suite not in SUITES:
        logger.error(f"unknown suite {suite!r}, expected one of {SUITES}")
        return CONFIG_ERROR_EXIT
    config = _load(config_path, overrides)
    if config is None:
        return CONFIG_ERROR_EXIT
    try:
        frame, passed = _diagnose(suite, config)
    except MsaError as error:
        logger.error(f"{suite} diagnostics failed: {error}")
        return CONFIG_ERROR_EXIT
    Saver(config.output_dir).save_frame(frame, f"diagnose_{suite}.csv")
    logger.info(f"{suite} diagnostics {'passed' if passed else 'failed'}")
    return 0 if passed else 1


def cmd_sweep(
    rho_list: Optional[str],
    config_path: Optional[str],
    overrides: Optional[Mapping[str, str]] = None,
) -> int:
    """Run AMSA for every rho and collect one sweep.csv row per run."""
    overrides = dict(overrides or {})
    if rho_list is not None:
        overrides["rho_list"] = rho_list
    config = _load(config_path, overrides)
    if config is None:
        return CONFIG_ERROR_EXIT
    try:
        rhos = config.rhos()
        if not rhos or any(rho < 0 for rho in rhos):
            raise ConfigError("sweep needs a nonempty list of non-negative rho values")
    except ConfigError as error:
        logger.error(f"{error}")
        return CONFIG_ERROR_EXIT

    output_dir = Path(config.output_dir)
    table = RowAppender(output_dir / "sweep.csv", SWEEP_COLUMNS)
    status = 0
    for rho in rhos:
        run_config = dataclasses.replace(config, rho=rho, basic=False)
        try:
            result = execute_run(run_config, output_dir / f"rho_{rho!r}")
        except MsaError as error:
            logger.error(f"rho={rho}: {error}")
            table.append(
                {
                    "rho": rho,
                    "terminated_by": "error",
                    "iterations": 0,
                    "final_J": math.nan,
                    "fraction_of_descent_steps": math.nan,
                }
            )
            status = CONFIG_ERROR_EXIT
            continue
        table.append(
            {
                "rho": rho,
                "terminated_by": result.terminated_by,
                "iterations": result.iterations,
                "final_J": result.final_cost,
                "fraction_of_descent_steps": fraction_of_descent_steps(result.history),
            }
        )
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parabolic-msa",
        description="Successive approximations for optimal control of semilinear parabolic PDEs",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"Every option can also be set in the config file or as {ENV_PREFIX}<NAME>.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run AMSA (or basic MSA with --basic)")
    diagnose = commands.add_parser("diagnose", help="run a diagnostics suite")
    diagnose.add_argument("suite", help=f"one of {', '.join(SUITES)}")
    sweep = commands.add_parser("sweep", help="run AMSA for a list of rho values")

    for command in (run, diagnose, sweep):
        command.add_argument("--config", default=None, help="flat key = value file")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            if f.type in (bool, "bool"):
                command.add_argument(flag, dest=f.name, nargs="?", const="true", default=None)
            else:
                command.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(RunConfig)
        if getattr(args, f.name) is not None
    }
    if args.command == "run":
        return cmd_run(args.config, overrides)
    if args.command == "diagnose":
        return cmd_diagnose(args.suite, args.config, overrides)
    return cmd_sweep(None, args.config, overrides)


def init():
    if __name__ == "__main__":
        sys.exit(main())


init()
