"""The spgls command line.

Subcommands:

- ``gen``: write a synthetic dataset (libsvm, CSV or spec file)
- ``solve``: solve one game with one engine and write a JSON report
- ``verify``: cross-check all engines against the oracle on small instances
- ``bench``: benchmark engines over (m, n, density) cells

Exit codes: 0 on success, 1 on errors, 2 when ``solve`` stops at the
iteration cap, 3 when a ``verify`` check fails.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

from . import config
from .bench import (
    SOLVERS,
    BenchCell,
    environment_fingerprint,
    make_solver,
    relative_error,
    run_bench,
)
from .data import (
    PRESETS,
    ManipulationRule,
    SyntheticSpec,
    generate,
    load_csv,
    load_libsvm,
    make_hard_case,
    preset_rule,
    write_atomic,
    write_libsvm,
)
from .exceptions import (
    CenteredProblemError,
    DegenerateApexError,
    InvalidArgumentError,
    SpglsError,
)
from .krylov import KrylovConfig, krylov_solve
from .oracle import EigenForm, OracleSolver, oracle_solve, solve_spg_small
from .reformulate import (
    Dataset,
    apex_value,
    build_scls,
    eval_spg_objective,
    map_to_sphere,
    recover_spg,
)
from .riemannian import RtrConfig, rtr_multistart
from .schema import CheckDict, InputDict, validate

_log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2
EXIT_VERIFY_FAILED = 3

RULE_KINDS = ("quantile_floor", "additive", "additive_floor_zero")

# verify thresholds
TRANSPORT_TOL = 1e-8
ROUNDTRIP_TOL = 1e-9
CERTIFICATE_TOL = 1e-10
KKT_TOL = 1e-8
ENGINE_TOL = 1e-7
HARD_CASE_TOL = 1e-6


@dataclass
class RunConfig:
    """Resolved command line arguments of one run."""

    command: str
    input: None | Path = None
    spec: None | SyntheticSpec = None
    gamma: float = 0.1
    solver: str = "krylov"
    tol: None | float = None
    max_iter: None | int = None
    out: None | Path = None
    seed: int = 0
    reps: int = 10
    rule: ManipulationRule = field(
        default_factory=lambda: ManipulationRule.quantile_floor(0.25)
    )
    input_format: None | str = None
    label_col: int | str = -1
    z_col: None | int | str = None
    categorical: Sequence[str] = ()
    perturb: bool = False
    cached: bool = False
    case: str = "random"
    instances: int = 50
    cells: list[BenchCell] = field(default_factory=list)
    workers: int = 1
    latex: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidArgumentError(f"gamma must be > 0, got {self.gamma}")
        if self.command == "solve" and (self.input is None) == (
            self.spec is None
        ):
            raise InvalidArgumentError(
                "give exactly one input: a data file, --spec or --m/--n"
            )

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> RunConfig:
        params: dict[str, Any] = dict(
            command=args.command,
            gamma=args.gamma,
            tol=args.tol,
            max_iter=args.max_iter,
            out=args.out,
            seed=args.seed,
            rule=rule_from_args(args),
        )
        if args.command in ("gen", "solve"):
            params["spec"] = _spec_from_args(args, params["rule"])
            params["cached"] = args.cached
        if args.command == "solve":
            params.update(
                input=args.input,
                solver=args.solver,
                input_format=args.format,
                label_col=_column(args.label_col),
                z_col=None if args.z_col is None else _column(args.z_col),
                categorical=tuple(args.categorical),
                perturb=args.perturb,
            )
            if args.input is not None and params["spec"] is not None:
                raise InvalidArgumentError(
                    "give exactly one input: a data file, --spec or --m/--n"
                )
        elif args.command == "gen":
            if params["spec"] is None:
                raise InvalidArgumentError("gen needs --spec or --m and --n")
            params["input_format"] = args.format
        elif args.command == "verify":
            params.update(
                case=args.case, instances=args.instances, solver="all"
            )
            params["cells"] = [BenchCell(args.m, args.n)]
        elif args.command == "bench":
            params.update(
                reps=args.reps,
                solver=args.solver,
                workers=args.workers,
                latex=args.latex,
                cached=args.cached,
            )
            ms = args.m if args.m is not None else [None]
            params["cells"] = [
                BenchCell(n if m is None else m, n, density)
                for m, n, density in itertools.product(
                    ms, args.n, args.density
                )
            ]
        return cls(**params)

    @property
    def solvers(self) -> list[str]:
        return list(SOLVERS) if self.solver == "all" else [self.solver]

    def output_path(self, suffix: str = ".json") -> Path:
        """The --out path, or a timestamped file in the output directory."""
        if self.out is not None:
            return Path(self.out)
        directory = Path(config.output_dir or ".")
        stamp = pd.Timestamp("now").strftime("%Y%m%dT%H%M%S")
        return directory / f"spgls-{self.command}-{stamp}{suffix}"


def _column(value: str) -> int | str:
    return int(value) if value.lstrip("-").isdigit() else value


def rule_from_args(args: argparse.Namespace) -> ManipulationRule:
    name = getattr(args, "rule", None) or "quantile_floor"
    delta = getattr(args, "delta", None)
    quantile = getattr(args, "quantile", None)
    if name in PRESETS:
        if delta is not None or quantile is not None:
            raise InvalidArgumentError(
                f"preset {name!r} does not take --delta or --quantile"
            )
        return preset_rule(name)
    if name == "quantile_floor":
        if delta is not None:
            raise InvalidArgumentError("quantile_floor does not take --delta")
        return ManipulationRule.quantile_floor(
            0.25 if quantile is None else quantile
        )
    if delta is None:
        raise InvalidArgumentError(f"rule {name} needs --delta")
    return ManipulationRule(name, delta=delta)  # type: ignore[arg-type]


def _spec_from_args(
    args: argparse.Namespace, rule: ManipulationRule
) -> None | SyntheticSpec:
    if args.spec is not None:
        if args.m is not None or args.n is not None:
            raise InvalidArgumentError("--spec excludes --m and --n")
        return SyntheticSpec.read(args.spec)
    if args.m is None and args.n is None:
        return None
    if args.m is None or args.n is None:
        raise InvalidArgumentError("give both --m and --n")
    return SyntheticSpec(
        args.m,
        args.n,
        density=args.density,
        noise=args.noise,
        seed=args.seed,
        rule=rule,
    )


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return value.as_posix()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_report(path: Path, document: dict[str, Any]) -> None:
    # round trip through the encoder so numpy scalars are validated as such
    text = json.dumps(
        document, indent=2, default=_json_default, allow_nan=False
    )
    validate(json.loads(text))
    write_atomic(path, lambda tmp: tmp.write_text(text + "\n"))
    _log.info(f"Report written to {path}")


def load_dataset(cfg: RunConfig) -> tuple[Dataset, InputDict]:
    if cfg.spec is not None:
        samples = generate(cfg.spec, cached=cfg.cached)
        source: InputDict = dict(
            source="synthetic",
            path=None,
            spec={
                section: dict(parser[section])
                for parser in [cfg.spec.to_config()]
                for section in parser.sections()
            },
        )
    else:
        assert cfg.input is not None
        fmt = cfg.input_format
        if fmt is None:
            fmt = "csv" if cfg.input.suffix.lower() == ".csv" else "libsvm"
        if fmt == "csv":
            samples = load_csv(
                cfg.input,
                cfg.label_col,
                z_col=cfg.z_col,
                rule=None if cfg.z_col is not None else cfg.rule,
                categorical=cfg.categorical,
            )
        else:
            samples = load_libsvm(cfg.input).with_rule(cfg.rule)
        source = dict(source=fmt, path=cfg.input.as_posix(), spec=None)
    d = samples.with_gamma(cfg.gamma)
    source.update(m=d.m, n=d.n)
    return d, source


def cmd_gen(cfg: RunConfig) -> int:
    assert cfg.spec is not None
    fmt = cfg.input_format or "libsvm"
    path = cfg.output_path(dict(libsvm=".svm", csv=".csv", spec=".ini")[fmt])
    if fmt == "spec":
        write_atomic(path, cfg.spec.write)
    elif fmt == "csv":
        samples = generate(cfg.spec, cached=cfg.cached)
        frame = pd.DataFrame(
            samples.X.to_dense(),
            columns=[f"x{j + 1}" for j in range(samples.n)],
        ).assign(y=samples.y, z=samples.z)
        write_atomic(path, lambda tmp: frame.to_csv(tmp, index=False))
    else:
        samples = generate(cfg.spec, cached=cfg.cached)
        write_atomic(path, lambda tmp: write_libsvm(samples, tmp))
    print(path)
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    d, source = load_dataset(cfg)
    problem = build_scls(d)
    solver = make_solver(
        cfg.solver, cfg.tol, cfg.max_iter, cfg.seed, perturb=cfg.perturb
    )
    try:
        r, report = solver.solve(problem)
    except CenteredProblemError as e:
        _log.warning(f"{e}; routing to the oracle")
        r, report = OracleSolver().solve(problem)
        report.diagnostics["routed_from"] = cfg.solver

    w: None | list[float] = None
    alpha: None | float = None
    try:
        pt = recover_spg(d, r)
        w, alpha = pt.w.tolist(), pt.alpha
        spg_objective = eval_spg_objective(d, pt)
    except DegenerateApexError as e:
        _log.warning(str(e))
        spg_objective = e.value

    document = dict(
        kind="solve",
        input=source,
        gamma=d.gamma,
        solver=cfg.solver,
        status="converged" if report.converged else "max_iter",
        w=w,
        alpha=alpha,
        spg_objective=spg_objective,
        degenerate_apex=w is None,
        report=report.to_dict(),
        environment=environment_fingerprint(),
    )
    path = cfg.output_path()
    write_report(path, document)
    print(
        f"{cfg.solver}: v* = {spg_objective:.10g}, "
        f"lambda* = {report.lambda_star:.6g}, "
        f"kkt = {report.kkt_residual:.2e}, {report.matvecs} matvecs -> {path}"
    )
    return EXIT_OK if report.converged else EXIT_MAX_ITER


def _verify_instance(cfg: RunConfig, seed: int) -> Dataset:
    cell = cfg.cells[0]
    if cfg.case == "hard":
        return make_hard_case(cell.n, seed=seed, gamma=cfg.gamma)
    spec = SyntheticSpec(cell.m, cell.n, seed=seed, rule=cfg.rule)
    samples = generate(spec)
    if cfg.case == "centered":
        return Dataset(samples.X, samples.y, 2 * samples.y, cfg.gamma)
    return samples.with_gamma(cfg.gamma)


def _gap(f_ref: float, f: float) -> float:
    rel = relative_error(f_ref, f)
    return abs(f_ref - f) if rel is None else abs(rel)


def verify_instance(
    d: Dataset, case: str, seed: int, instance: int = 0
) -> list[CheckDict]:
    """Cross-checks of all engines on one oracle-sized game."""
    checks: list[CheckDict] = []

    def check(
        name: str,
        value: None | float,
        threshold: None | float,
        passed: None | bool = None,
        detail: None | str = None,
    ) -> None:
        if passed is None:
            passed = value is not None and threshold is not None
            passed = passed and value <= threshold  # type: ignore
        checks.append(
            dict(
                instance=instance,
                seed=seed,
                name=name,
                passed=bool(passed),
                value=value,
                threshold=threshold,
                detail=detail,
            )
        )

    problem = build_scls(d)
    sol = oracle_solve(problem)
    check("oracle_certificate", sol.kkt_residual, CERTIFICATE_TOL)
    if case == "hard":
        check("oracle_hard_case", None, None, passed=sol.hard_case)

    try:
        _, v_star = solve_spg_small(d)
        check("objective_transport", _gap(sol.value, v_star), TRANSPORT_TOL)
    except DegenerateApexError:
        check(
            "objective_transport",
            _gap(sol.value, apex_value(d)),
            TRANSPORT_TOL,
            detail="apex",
        )
    try:
        back = map_to_sphere(d, recover_spg(d, sol.r_star))
        check(
            "recovery_roundtrip",
            float(np.linalg.norm(back.r - sol.r_star.r)),
            ROUNDTRIP_TOL,
        )
    except DegenerateApexError:
        check("recovery_roundtrip", None, None, passed=True, detail="apex")

    d_min = EigenForm.from_problem(problem).d_min
    if case == "centered":
        try:
            krylov_solve(problem)
            check("krylov_centered_routing", None, None, passed=False)
        except CenteredProblemError:
            check("krylov_centered_routing", None, None, passed=True)
    else:
        tol = ENGINE_TOL if case == "random" else HARD_CASE_TOL
        cfg = KrylovConfig.from_settings(
            perturb_seed=seed if case == "hard" else None
        )
        try:
            _, report = krylov_solve(problem, cfg)
        except SpglsError as e:
            check("krylov_objective", None, tol, detail=str(e))
        else:
            check("krylov_objective", _gap(sol.value, report.objective), tol)
            check(
                "krylov_kkt",
                report.kkt_residual,
                KKT_TOL if case == "random" else tol,
            )
            check(
                "krylov_multiplier",
                max(0.0, -d_min - report.lambda_star),
                KKT_TOL if case == "random" else tol,
            )

    _, rtr = rtr_multistart(problem, RtrConfig.from_settings(), seed=seed)
    check("rtr_objective", _gap(sol.value, rtr.objective), HARD_CASE_TOL)
    return checks


def cmd_verify(cfg: RunConfig) -> int:
    checks: list[CheckDict] = []
    for i in range(cfg.instances):
        seed = cfg.seed + i
        checks.extend(
            verify_instance(_verify_instance(cfg, seed), cfg.case, seed, i)
        )

    failed = [c for c in checks if not c["passed"]]
    for c in failed:
        _log.error(
            f"FAIL {c['name']} on instance {c['instance']} (seed {c['seed']})"
            f": {c['value']} > {c['threshold']}"
        )
    document = dict(
        kind="verify",
        case=cfg.case,
        gamma=cfg.gamma,
        instances=cfg.instances,
        passed=not failed,
        checks=checks,
        environment=environment_fingerprint(),
    )
    path = cfg.output_path()
    write_report(path, document)
    print(
        f"{'FAIL' if failed else 'PASS'}: {len(checks) - len(failed)}"
        f"/{len(checks)} checks passed -> {path}"
    )
    return EXIT_VERIFY_FAILED if failed else EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    report = run_bench(
        cfg.cells,
        cfg.solvers,
        gamma=cfg.gamma,
        reps=cfg.reps,
        seed=cfg.seed,
        rule=cfg.rule,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        workers=cfg.workers,
        cached=cfg.cached,
    )
    path = cfg.output_path()
    write_report(path, report.to_dict())
    frame = report.to_frame()
    write_atomic(
        path.with_suffix(".csv"), lambda tmp: frame.to_csv(tmp, index=False)
    )
    if cfg.latex:
        latex = report.to_latex()
        write_atomic(
            path.with_suffix(".tex"), lambda tmp: tmp.write_text(latex)
        )
        print(latex)
    print(report.timings().to_string(index=False))
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig], int]] = dict(
    gen=cmd_gen, solve=cmd_solve, verify=cmd_verify, bench=cmd_bench
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="store_true", help="debug logging"
    )
    common.add_argument("--gamma", type=float, default=0.1)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--max-iter", type=int, default=None)
    common.add_argument(
        "--out",
        type=Path,
        default=None,
        help="output file (default: a file in the output directory)",
    )
    rules = argparse.ArgumentParser(add_help=False)
    rules.add_argument(
        "--rule",
        choices=[*RULE_KINDS, *PRESETS],
        default=None,
        help="label manipulation of the data provider",
    )
    rules.add_argument("--delta", type=float, default=None)
    rules.add_argument("--quantile", type=float, default=None)
    synthetic = argparse.ArgumentParser(add_help=False)
    synthetic.add_argument("--spec", type=Path, default=None)
    synthetic.add_argument("--m", type=int, default=None)
    synthetic.add_argument("--n", type=int, default=None)
    synthetic.add_argument("--density", type=float, default=1.0)
    synthetic.add_argument("--noise", type=float, default=None)
    synthetic.add_argument(
        "--cached", action=argparse.BooleanOptionalAction, default=False
    )

    parser = argparse.ArgumentParser(
        prog="spgls",
        description="Learner optimum of spherical least squares games",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser(
        "gen", parents=[common, rules, synthetic], help="write a dataset"
    )
    gen.add_argument(
        "--format", choices=["libsvm", "csv", "spec"], default="libsvm"
    )

    solve = commands.add_parser(
        "solve", parents=[common, rules, synthetic], help="solve one game"
    )
    solve.add_argument("input", type=Path, nargs="?", default=None)
    solve.add_argument("--format", choices=["csv", "libsvm"], default=None)
    solve.add_argument("--solver", choices=SOLVERS, default="krylov")
    solve.add_argument("--label-col", default="-1")
    solve.add_argument("--z-col", default=None)
    solve.add_argument("--categorical", nargs="*", default=[])
    solve.add_argument(
        "--perturb",
        action="store_true",
        help="perturb g before the Krylov iteration (hard case)",
    )

    verify = commands.add_parser(
        "verify", parents=[common, rules], help="cross-check engines"
    )
    verify.add_argument(
        "--case", choices=["random", "centered", "hard"], default="random"
    )
    verify.add_argument("--instances", type=int, default=50)
    verify.add_argument("--m", type=int, default=30)
    verify.add_argument("--n", type=int, default=10)

    bench = commands.add_parser(
        "bench", parents=[common, rules], help="benchmark engines"
    )
    bench.add_argument(
        "--m", type=int, nargs="+", default=None, help="default: m = n"
    )
    bench.add_argument("--n", type=int, nargs="+", default=[100])
    bench.add_argument("--density", type=float, nargs="+", default=[1.0])
    bench.add_argument("--reps", type=int, default=10)
    bench.add_argument(
        "--solver", choices=[*SOLVERS, "all"], default="all"
    )
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--latex", action="store_true")
    bench.add_argument(
        "--cached", action=argparse.BooleanOptionalAction, default=False
    )
    return parser


def main(argv: None | Sequence[str] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_ERROR

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = RunConfig.from_args(args)
        return COMMANDS[cfg.command](cfg)
    except (SpglsError, OSError) as e:
        print(f"spgls: error: {e}", file=sys.stderr)
        _log.debug("Traceback", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
