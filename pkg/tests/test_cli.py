import json
import math
from pathlib import Path
from typing import Any

import pytest

import pandas as pd
from pyspgls.cli import (
    EXIT_ERROR,
    EXIT_MAX_ITER,
    EXIT_OK,
    RunConfig,
    build_parser,
    main,
    rule_from_args,
)
from pyspgls.data import ManipulationRule, SyntheticSpec
from pyspgls.exceptions import InvalidArgumentError
from pyspgls.schema import validate

tiny_csv = (
    "x1,y,z\n"
    f"{math.sqrt(2)!r},{math.sqrt(2)!r},0\n"
    "0,1,2\n"
)


def read(path: Path) -> Any:
    document = json.loads(path.read_text())
    validate(document)
    return document


def solve_tiny(tmp_path: Path, solver: str) -> Any:
    data = tmp_path / "tiny.csv"
    data.write_text(tiny_csv)
    out = tmp_path / f"{solver}.json"
    code = main(
        [
            "solve",
            str(data),
            "--label-col",
            "y",
            "--z-col",
            "z",
            "--gamma",
            "4",
            "--solver",
            solver,
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    return read(out)


def test_solve_oracle(tmp_path: Path) -> None:
    document = solve_tiny(tmp_path, "oracle")
    assert document["kind"] == "solve"
    assert document["status"] == "converged"
    source = document["input"]
    assert source["source"] == "csv"
    assert source["path"] == (tmp_path / "tiny.csv").as_posix()
    assert (source["m"], source["n"]) == (2, 1)
    assert document["report"]["kkt_residual"] <= 1e-10
    assert document["spg_objective"] == pytest.approx(0.0, abs=1e-12)
    assert document["w"] == pytest.approx([2.0])
    assert document["alpha"] == pytest.approx(1.0)
    assert not document["degenerate_apex"]


def test_solve_engines_agree(tmp_path: Path) -> None:
    oracle = solve_tiny(tmp_path, "oracle")
    for solver in ("krylov", "rtr"):
        document = solve_tiny(tmp_path, solver)
        assert document["report"]["solver"] == solver
        assert document["spg_objective"] == pytest.approx(
            oracle["spg_objective"], abs=1e-10
        )


def test_solve_synthetic(tmp_path: Path) -> None:
    out = tmp_path / "report.json"
    args = ["solve", "--m", "40", "--n", "10", "--seed", "2"]
    assert main([*args, "--out", str(out)]) == EXIT_OK
    document = read(out)
    assert document["input"]["source"] == "synthetic"
    assert document["input"]["spec"]["synthetic"]["m"] == "40"
    assert len(document["w"]) == 10
    assert document["report"]["matvecs"] >= document["report"]["iterations"]


def test_max_iter_exit_code(tmp_path: Path) -> None:
    out = tmp_path / "report.json"
    args = ["solve", "--m", "60", "--n", "25", "--max-iter", "2"]
    assert main([*args, "--out", str(out)]) == EXIT_MAX_ITER
    document = read(out)
    assert document["status"] == "max_iter"
    assert document["report"]["iterations"] == 2


def test_centered_routing(tmp_path: Path) -> None:
    # z = 2 y makes the linear term vanish
    data = tmp_path / "centered.csv"
    data.write_text("x1,x2,y,z\n1,0,1,2\n0,2,3,6\n1,1,-1,-2\n")
    out = tmp_path / "report.json"
    code = main(
        [
            "solve",
            str(data),
            "--label-col",
            "y",
            "--z-col",
            "z",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    document = read(out)
    assert document["solver"] == "krylov"
    assert document["report"]["solver"] == "oracle"
    assert document["report"]["diagnostics"]["routed_from"] == "krylov"


def test_malformed_input(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    data = tmp_path / "bad.csv"
    data.write_text("a,label\n1,2\n3,x\n")
    out = tmp_path / "report.json"
    args = ["solve", str(data), "--label-col", "label"]
    code = main([*args, "--out", str(out)])
    assert code == EXIT_ERROR
    assert not out.exists()
    assert list(tmp_path.iterdir()) == [data]
    assert "(2, 2)" in capsys.readouterr().err


def test_invalid_arguments(tmp_path: Path) -> None:
    data = tmp_path / "tiny.csv"
    data.write_text(tiny_csv)
    assert main(["solve", str(data), "--gamma", "0"]) == EXIT_ERROR
    assert main(["solve", str(data), "--m", "3", "--n", "2"]) == EXIT_ERROR
    assert main(["solve"]) == EXIT_ERROR
    assert main(["solve", "--solver", "newton"]) == EXIT_ERROR
    assert main([]) == EXIT_ERROR
    assert main(["solve", str(tmp_path / "missing.svm")]) == EXIT_ERROR


def test_help(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["--help"]) == EXIT_OK
    assert "verify" in capsys.readouterr().out


def test_gen_then_solve(tmp_path: Path) -> None:
    for fmt, suffix in (("csv", ".csv"), ("libsvm", ".svm")):
        data = tmp_path / f"game{suffix}"
        args = ["gen", "--m", "25", "--n", "5", "--seed", "3"]
        assert main([*args, "--format", fmt, "--out", str(data)]) == EXIT_OK
        assert data.exists()
    frame = pd.read_csv(tmp_path / "game.csv")
    assert list(frame.columns) == ["x1", "x2", "x3", "x4", "x5", "y", "z"]

    out = tmp_path / "report.json"
    args = ["solve", str(tmp_path / "game.csv"), "--label-col", "y"]
    assert main([*args, "--z-col", "z", "--out", str(out)]) == EXIT_OK
    from_csv = read(out)
    assert main(["solve", str(tmp_path / "game.svm"), "--out", str(out)]) == 0
    from_svm = read(out)
    assert from_svm["input"]["source"] == "libsvm"
    # same samples, same default rule
    assert from_svm["spg_objective"] == pytest.approx(
        from_csv["spg_objective"], rel=1e-8
    )


def test_gen_spec(tmp_path: Path) -> None:
    spec = tmp_path / "game.ini"
    args = ["gen", "--m", "30", "--n", "6", "--density", "0.5"]
    assert main([*args, "--format", "spec", "--out", str(spec)]) == EXIT_OK
    assert SyntheticSpec.read(spec).density == 0.5

    out = tmp_path / "report.json"
    assert main(["solve", "--spec", str(spec), "--out", str(out)]) == EXIT_OK
    assert read(out)["input"]["m"] == 30

    spec.write_text("m = 30\n")
    assert main(["solve", "--spec", str(spec)]) == EXIT_ERROR


@pytest.mark.parametrize("case", ["random", "centered", "hard"])
def test_verify(tmp_path: Path, case: str) -> None:
    out = tmp_path / "verify.json"
    args = ["verify", "--case", case, "--instances", "3", "--m", "14"]
    assert main([*args, "--n", "5", "--out", str(out)]) == EXIT_OK
    document = read(out)
    assert document["passed"]
    assert document["instances"] == 3
    names = {check["name"] for check in document["checks"]}
    assert "oracle_certificate" in names
    assert "rtr_objective" in names
    if case == "centered":
        assert "krylov_centered_routing" in names
    else:
        assert "krylov_objective" in names
    if case == "hard":
        assert "oracle_hard_case" in names


def test_bench(tmp_path: Path) -> None:
    out = tmp_path / "bench.json"
    args = ["bench", "--m", "20", "--n", "6", "8", "--reps", "2", "--latex"]
    assert main([*args, "--out", str(out)]) == EXIT_OK
    document = read(out)
    assert len(document["runs"]) == 2 * 2 * 3
    frame = pd.read_csv(out.with_suffix(".csv"))
    assert len(frame) == 12
    assert set(frame.solver) == {"oracle", "rtr", "krylov"}
    assert r"\begin{tabular}" in out.with_suffix(".tex").read_text()


def test_rule_from_args() -> None:
    parser = build_parser()
    args = parser.parse_args(["bench", "--rule", "blog"])
    assert rule_from_args(args) == ManipulationRule.additive(5)
    args = parser.parse_args(["bench", "--rule", "additive", "--delta", "2"])
    assert rule_from_args(args) == ManipulationRule.additive(2.0)
    args = parser.parse_args(["bench", "--quantile", "0.5"])
    assert rule_from_args(args) == ManipulationRule.quantile_floor(0.5)
    with pytest.raises(InvalidArgumentError, match="needs --delta"):
        rule_from_args(parser.parse_args(["bench", "--rule", "additive"]))
    with pytest.raises(InvalidArgumentError, match="does not take"):
        args = parser.parse_args(["bench", "--rule", "wine", "--delta", "1"])
        rule_from_args(args)


def test_bench_cells() -> None:
    parser = build_parser()
    args = parser.parse_args(
        ["bench", "--n", "10", "20", "--density", "1", "0.1"]
    )
    cfg = RunConfig.from_args(args)
    assert [(c.m, c.n, c.density) for c in cfg.cells] == [
        (10, 10, 1.0),
        (10, 10, 0.1),
        (20, 20, 1.0),
        (20, 20, 0.1),
    ]
    assert cfg.solvers == ["oracle", "rtr", "krylov"]
