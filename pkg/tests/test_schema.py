import copy
import math
from typing import Any

import pytest

from pyspgls.bench import environment_fingerprint
from pyspgls.exceptions import ReportSchemaError
from pyspgls.schema import load_schema, validate

report: dict[str, Any] = dict(
    solver="krylov",
    objective=1.5,
    lambda_star=0.25,
    kkt_residual=1e-12,
    matvecs=12,
    iterations=10,
    wall_time=0.01,
    converged=True,
    kappa_estimate=None,
    hard_case=False,
    restarts=0,
    perturbation=0.0,
    diagnostics=dict(invariant_subspace=False),
)
solve_document: dict[str, Any] = dict(
    kind="solve",
    input=dict(source="csv", path="game.csv", spec=None, m=5, n=2),
    gamma=0.1,
    solver="krylov",
    status="converged",
    w=[0.5, -1.0],
    alpha=12.5,
    spg_objective=1.5,
    degenerate_apex=False,
    report=report,
    environment=environment_fingerprint(),
)


def test_schema_document() -> None:
    schema = load_schema()
    assert set(schema["definitions"]) >= {"solve", "verify", "bench"}
    assert load_schema() is schema


def test_valid_solve() -> None:
    validate(solve_document)
    validate(solve_document, "solve")
    apex = dict(solve_document, w=None, alpha=None, degenerate_apex=True)
    validate(apex)


def test_valid_verify() -> None:
    validate(
        dict(
            kind="verify",
            case="hard",
            gamma=0.1,
            instances=1,
            passed=True,
            checks=[
                dict(
                    instance=0,
                    seed=0,
                    name="oracle_certificate",
                    passed=True,
                    value=1e-14,
                    threshold=1e-10,
                    detail=None,
                )
            ],
            environment=environment_fingerprint(),
        )
    )


def invalid(path: str, **changes: Any) -> None:
    document = copy.deepcopy(solve_document)
    for key, value in changes.items():
        if key.startswith("report__"):
            document["report"][key[len("report__") :]] = value
        elif value is None and key != "w":
            del document[key]
        else:
            document[key] = value
    with pytest.raises(ReportSchemaError) as info:
        validate(document)
    assert info.value.path == path


def test_invalid_members() -> None:
    invalid("$", spg_objective=None)
    invalid("$.gamma", gamma=0.0)
    invalid("$.status", status="done")
    invalid("$.w[1]", w=[0.5, "x"])
    invalid("$.alpha", alpha=-1.0)
    invalid("$.report.matvecs", report__matvecs=1.5)
    invalid("$.report.converged", report__converged=1)
    invalid("$.report", report__extra=True)
    invalid("$.input.source", input=dict(source="xml", m=1, n=1))


def test_numbers_are_finite() -> None:
    invalid("$.spg_objective", spg_objective=math.inf)
    invalid("$.report.objective", report__objective=math.nan)


def test_booleans_are_not_integers() -> None:
    invalid("$.report.iterations", report__iterations=True)


def test_unknown_kind() -> None:
    with pytest.raises(ReportSchemaError, match="unknown report kind"):
        validate(dict(solve_document, kind="plot"))
    with pytest.raises(ReportSchemaError, match="JSON object"):
        validate([solve_document])
    with pytest.raises(ValueError):
        validate(dict(solve_document, kind="verify"))
