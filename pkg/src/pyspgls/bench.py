"""Benchmark harness comparing the solver engines on synthetic games.

Each cell (m, n, density) is instantiated ``reps`` times with consecutive
seeds. Every engine solves the same reformulated problem and the objectives
are compared to a reference engine: the dense oracle when it could solve the
instance, otherwise the first engine that succeeded.
"""

from __future__ import annotations

import logging
import math
import platform
import time
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from multiprocessing.pool import ThreadPool
from typing import Any, Iterable, Sequence

import scipy
from tqdm.auto import tqdm

import numpy as np
import pandas as pd

from .api import ProgressbarType, SclsSolver, SolveReport
from .data import ManipulationRule, SyntheticSpec, generate
from .exceptions import InvalidArgumentError, SpglsError
from .krylov import KrylovConfig, KrylovSolver
from .oracle import OracleSolver
from .reformulate import build_scls
from .riemannian import RtrConfig, RtrSolver

_log = logging.getLogger(__name__)

SOLVERS = ("oracle", "rtr", "krylov")
COLUMNS = [
    "m",
    "n",
    "density",
    "repetition",
    "seed",
    "solver",
    "objective",
    "lambda_star",
    "kkt_residual",
    "matvecs",
    "iterations",
    "wall_time",
    "converged",
    "reference",
    "relative_error",
    "error",
]


@dataclass(frozen=True)
class BenchCell:
    m: int
    n: int
    density: float = 1.0

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise InvalidArgumentError(f"invalid cell {self.m} x {self.n}")
        if not 0 < self.density <= 1:
            raise InvalidArgumentError(f"invalid density {self.density}")

    @property
    def label(self) -> str:
        return f"{self.m}x{self.n}@{self.density:g}"


@dataclass
class BenchRun:
    cell: BenchCell
    repetition: int
    seed: int
    solver: str
    report: None | SolveReport = None
    error: None | str = None
    reference: None | str = None
    relative_error: None | float = None

    def to_record(self) -> dict[str, Any]:
        """One flat row of the bench table."""
        record: dict[str, Any] = dict(
            m=self.cell.m,
            n=self.cell.n,
            density=self.cell.density,
            repetition=self.repetition,
            seed=self.seed,
            solver=self.solver,
            objective=None,
            lambda_star=None,
            kkt_residual=None,
            matvecs=None,
            iterations=None,
            wall_time=None,
            converged=None,
            reference=self.reference,
            relative_error=self.relative_error,
            error=self.error,
        )
        if self.report is not None:
            for key in (
                "objective",
                "lambda_star",
                "kkt_residual",
                "matvecs",
                "iterations",
                "wall_time",
                "converged",
            ):
                record[key] = getattr(self.report, key)
        return record


def relative_error(f_ref: float, f_other: float) -> None | float:
    """(f_ref - f_other) / |f_ref|, undefined for a zero reference."""
    if f_ref == 0 or not (math.isfinite(f_ref) and math.isfinite(f_other)):
        return None
    return (f_ref - f_other) / abs(f_ref)


def environment_fingerprint() -> dict[str, Any]:
    try:
        own_version = version("pyspgls")
    except PackageNotFoundError:
        own_version = "unknown"
    return dict(
        platform=platform.platform(),
        machine=platform.machine(),
        python=platform.python_version(),
        numpy=np.__version__,
        scipy=scipy.__version__,
        pandas=pd.__version__,
        pyspgls=own_version,
    )


def make_solver(
    name: str,
    tol: None | float = None,
    max_iter: None | int = None,
    seed: int = 0,
    perturb: bool = False,
) -> SclsSolver:
    """Engine adapter with settings.conf defaults and explicit overrides."""
    if name == "krylov":
        cfg = KrylovConfig.from_settings(
            tol=tol,
            max_iter=max_iter,
            perturb_seed=seed if perturb else None,
        )
        return KrylovSolver(cfg)
    if name == "rtr":
        return RtrSolver(
            RtrConfig.from_settings(grad_tol=tol, max_outer=max_iter),
            seed=seed,
        )
    if name == "oracle":
        return OracleSolver()
    raise InvalidArgumentError(
        f"unknown solver {name!r}, choose among {SOLVERS}"
    )


@dataclass
class BenchReport:
    gamma: float
    solvers: list[str]
    runs: list[BenchRun] = field(default_factory=list)
    environment: dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(
            [run.to_record() for run in self.runs], columns=COLUMNS
        )

    def relative_errors(self) -> pd.DataFrame:
        """AVG, MIN and MAX of the relative errors per cell and engine."""
        frame = self.to_frame().dropna(subset=["relative_error"])
        columns = ["m", "n", "density", "reference", "solver"]
        if frame.empty:
            return pd.DataFrame(
                columns=[*columns, "count", "avg", "min", "max"]
            )
        frame = frame.assign(
            relative_error=frame.relative_error.astype(np.float64)
        )
        return (
            frame.groupby(columns, sort=False)
            .relative_error.agg(["count", "mean", "min", "max"])
            .rename(columns={"mean": "avg"})
            .reset_index()
        )

    def timings(self) -> pd.DataFrame:
        """Mean and median wall time and mean matvecs per cell and engine."""
        frame = self.to_frame().dropna(subset=["wall_time"])
        columns = ["m", "n", "density", "solver"]
        if frame.empty:
            return pd.DataFrame(
                columns=[
                    *columns,
                    "runs",
                    "time_mean",
                    "time_median",
                    "matvecs_mean",
                ]
            )
        frame = frame.astype(dict(wall_time=np.float64, matvecs=np.float64))
        return (
            frame.groupby(columns, sort=False)
            .agg(
                runs=("wall_time", "size"),
                time_mean=("wall_time", "mean"),
                time_median=("wall_time", "median"),
                matvecs_mean=("matvecs", "mean"),
            )
            .reset_index()
        )

    @property
    def failures(self) -> int:
        return sum(run.error is not None for run in self.runs)

    def to_dict(self) -> dict[str, Any]:
        def records(frame: pd.DataFrame) -> list[dict[str, Any]]:
            frame = frame.astype(object).where(frame.notna(), None)
            return frame.to_dict(orient="records")  # type: ignore

        runs = []
        for run in self.runs:
            runs.append(
                dict(
                    cell=dict(
                        m=run.cell.m, n=run.cell.n, density=run.cell.density
                    ),
                    repetition=run.repetition,
                    seed=run.seed,
                    solver=run.solver,
                    report=(
                        None if run.report is None else run.report.to_dict()
                    ),
                    error=run.error,
                    reference=run.reference,
                    relative_error=run.relative_error,
                )
            )
        return dict(
            kind="bench",
            gamma=self.gamma,
            solvers=list(self.solvers),
            environment=dict(self.environment),
            runs=runs,
            relative_errors=records(self.relative_errors()),
            timings=records(self.timings()),
        )

    def to_latex(self) -> str:
        """Timing and relative error tables as LaTeX tabulars."""
        timings = self.timings()
        errors = self.relative_errors()
        cells = list(
            dict.fromkeys(
                (run.cell.m, run.cell.n, run.cell.density) for run in self.runs
            )
        )

        def mean_time(cell: tuple[int, int, float], solver: str) -> float:
            m, n, density = cell
            row = timings[
                (timings.m == m)
                & (timings.n == n)
                & (timings.density == density)
                & (timings.solver == solver)
            ]
            return math.nan if row.empty else float(row.time_mean.iloc[0])

        lines = [
            r"\begin{tabular}{rrr" + "r" * (len(self.solvers) + 1) + "}",
            r"\hline",
            " & ".join(["$m$", "$n$", "density", *self.solvers, "Ratio"])
            + r" \\",
            r"\hline",
        ]
        for cell in cells:
            times = [mean_time(cell, solver) for solver in self.solvers]
            ratio = math.nan
            if "krylov" in self.solvers and len(self.solvers) > 1:
                others = [s for s in self.solvers if s != "krylov"]
                reference = times[self.solvers.index(others[0])]
                krylov_time = times[self.solvers.index("krylov")]
                if krylov_time > 0:
                    ratio = reference / krylov_time
            entries = [f"{t:.3f}" if math.isfinite(t) else "--" for t in times]
            ratio_str = f"{ratio:.1f}" if math.isfinite(ratio) else "--"
            lines.append(
                f"{cell[0]} & {cell[1]} & {cell[2]:g} & "
                + " & ".join([*entries, ratio_str])
                + r" \\"
            )
        lines += [r"\hline", r"\end{tabular}", ""]

        lines += [
            r"\begin{tabular}{rrrlrrr}",
            r"\hline",
            r"$m$ & $n$ & density & engine & AVG & MIN & MAX \\",
            r"\hline",
        ]
        for row in errors.itertuples():
            lines.append(
                f"{row.m} & {row.n} & {row.density:g} & "
                f"{row.solver} & {row.avg:.2e} & {row.min:.2e} & "
                f"{row.max:.2e}" + r" \\"
            )
        lines += [r"\hline", r"\end{tabular}", ""]
        return "\n".join(lines)


def _solve_instance(
    cell: BenchCell,
    repetition: int,
    seed: int,
    gamma: float,
    solvers: dict[str, SclsSolver],
    rule: ManipulationRule,
    cached: bool,
) -> list[BenchRun]:
    spec = SyntheticSpec(cell.m, cell.n, cell.density, seed=seed, rule=rule)
    runs = [
        BenchRun(cell, repetition, seed, name) for name in solvers.keys()
    ]
    try:
        problem = build_scls(generate(spec, cached=cached).with_gamma(gamma))
    except SpglsError as e:
        _log.warning(f"Cell {cell.label} seed {seed}: {e}")
        for run in runs:
            run.error = f"{type(e).__name__}: {e}"
        return runs

    for run, solver in zip(runs, solvers.values()):
        try:
            _, run.report = solver.solve(problem)
        except SpglsError as e:
            _log.warning(f"Cell {cell.label} seed {seed}, {run.solver}: {e}")
            run.error = f"{type(e).__name__}: {e}"

    solved = {run.solver: run for run in runs if run.report is not None}
    if not solved:
        return runs
    reference = solved.get("oracle", next(iter(solved.values())))
    assert reference.report is not None
    for run in solved.values():
        assert run.report is not None
        run.reference = reference.solver
        if run is reference:
            continue
        run.relative_error = relative_error(
            reference.report.objective, run.report.objective
        )
    return runs


def run_bench(
    cells: Sequence[BenchCell],
    solvers: Sequence[str] = SOLVERS,
    gamma: float = 0.1,
    reps: int = 10,
    seed: int = 0,
    rule: None | ManipulationRule = None,
    tol: None | float = None,
    max_iter: None | int = None,
    workers: int = 1,
    cached: bool = False,
    progressbar: None | ProgressbarType[Any] = None,
) -> BenchReport:
    """Runs every engine on ``reps`` instances of each cell.

    Failures (oracle size cap, numerical failures, degenerate data) are
    recorded in the corresponding runs and the harness goes on.
    """
    if reps < 1:
        raise InvalidArgumentError("reps must be >= 1")
    if not (math.isfinite(gamma) and gamma > 0):
        raise InvalidArgumentError(f"gamma must be > 0, got {gamma}")
    if workers < 1:
        raise InvalidArgumentError("workers must be >= 1")
    if rule is None:
        rule = ManipulationRule.quantile_floor(0.25)
    engines = {
        name: make_solver(name, tol, max_iter, seed) for name in solvers
    }
    tasks = [
        (cell, rep, seed + rep) for cell in cells for rep in range(reps)
    ]

    def run(task: tuple[BenchCell, int, int]) -> list[BenchRun]:
        cell, rep, task_seed = task
        return _solve_instance(
            cell, rep, task_seed, gamma, engines, rule, cached
        )

    def bar(iterable: Iterable[Any]) -> Iterable[Any]:
        if progressbar is not None:
            return progressbar(iterable)
        return tqdm(iterable, total=len(tasks), unit="run", desc="BENCH")

    _log.info(
        f"Benchmark of {', '.join(engines)} on {len(cells)} cells "
        f"x {reps} repetitions"
    )
    start = time.perf_counter()
    report = BenchReport(gamma, list(engines), [], environment_fingerprint())
    if workers > 1:
        with ThreadPool(processes=workers) as pool:
            for runs in bar(pool.imap(run, tasks)):
                report.runs.extend(runs)
    else:
        for task in bar(tasks):
            report.runs.extend(run(task))

    _log.info(
        f"Benchmark done in {time.perf_counter() - start:.1f}s, "
        f"{report.failures} failed runs"
    )
    return report
