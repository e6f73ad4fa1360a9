"""Report documents and their schema.

The schema document ``report_schema.json`` ships with the package. The
validator below understands the keywords that document uses: ``$ref``,
``anyOf``, ``type``, ``enum``, ``required``, ``properties``,
``additionalProperties``, ``items``, ``minimum`` and ``exclusiveMinimum``.
"""

from __future__ import annotations

import json
import math
from functools import lru_cache
from importlib.resources import files
from typing import Any, List, Optional

from typing_extensions import Literal, TypedDict

from .exceptions import ReportSchemaError

ReportKind = Literal["solve", "verify", "bench"]


class SolveReportDict(TypedDict):
    solver: str
    objective: float
    lambda_star: float
    kkt_residual: float
    matvecs: int
    iterations: int
    wall_time: float
    converged: bool
    kappa_estimate: Optional[float]
    hard_case: bool
    restarts: int
    perturbation: float
    diagnostics: dict[str, Any]


class InputDict(TypedDict, total=False):
    source: Literal["csv", "libsvm", "synthetic", "case"]
    path: Optional[str]
    spec: Optional[dict[str, Any]]
    m: int
    n: int


class SolveDocument(TypedDict):
    kind: Literal["solve"]
    input: InputDict
    gamma: float
    solver: str
    status: Literal["converged", "max_iter"]
    w: Optional[List[float]]
    alpha: Optional[float]
    spg_objective: float
    degenerate_apex: bool
    report: SolveReportDict
    environment: dict[str, str]


class CheckDict(TypedDict):
    instance: int
    seed: Optional[int]
    name: str
    passed: bool
    value: Optional[float]
    threshold: Optional[float]
    detail: Optional[str]


class VerifyDocument(TypedDict):
    kind: Literal["verify"]
    case: Literal["random", "centered", "hard"]
    gamma: float
    instances: int
    passed: bool
    checks: List[CheckDict]
    environment: dict[str, str]


@lru_cache()
def load_schema() -> dict[str, Any]:
    text = files("pyspgls").joinpath("report_schema.json").read_text()
    return json.loads(text)  # type: ignore


def _type_ok(value: Any, name: str) -> bool:
    if name == "null":
        return value is None
    if name == "boolean":
        return isinstance(value, bool)
    if name == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if name == "number":
        return (
            isinstance(value, (int, float))
            and not isinstance(value, bool)
            and math.isfinite(value)
        )
    if name == "string":
        return isinstance(value, str)
    if name == "array":
        return isinstance(value, list)
    if name == "object":
        return isinstance(value, dict)
    raise ReportSchemaError(f"unsupported type {name!r} in schema")


def _resolve(ref: str, root: dict[str, Any]) -> dict[str, Any]:
    if not ref.startswith("#/"):
        raise ReportSchemaError(f"unsupported reference {ref!r}")
    node: Any = root
    for part in ref[2:].split("/"):
        node = node[part]
    return node  # type: ignore


def _check(
    value: Any, node: dict[str, Any], root: dict[str, Any], path: str
) -> None:
    if "$ref" in node:
        _check(value, _resolve(node["$ref"], root), root, path)

    if "anyOf" in node:
        errors = []
        for option in node["anyOf"]:
            try:
                _check(value, option, root, path)
                break
            except ReportSchemaError as e:
                errors.append(str(e))
        else:
            raise ReportSchemaError(
                "no alternative matches: " + "; ".join(errors), path
            )

    if "type" in node:
        types = node["type"]
        types = [types] if isinstance(types, str) else types
        if not any(_type_ok(value, t) for t in types):
            raise ReportSchemaError(
                f"expected {' or '.join(types)}, got {type(value).__name__}",
                path,
            )

    if "enum" in node and value not in node["enum"]:
        raise ReportSchemaError(f"{value!r} not in {node['enum']}", path)

    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if "minimum" in node and value < node["minimum"]:
            raise ReportSchemaError(f"{value} < {node['minimum']}", path)
        if "exclusiveMinimum" in node and value <= node["exclusiveMinimum"]:
            raise ReportSchemaError(
                f"{value} <= {node['exclusiveMinimum']}", path
            )

    if isinstance(value, dict):
        for key in node.get("required", []):
            if key not in value:
                raise ReportSchemaError(f"missing member {key!r}", path)
        properties = node.get("properties", {})
        for key, member in value.items():
            if key in properties:
                _check(member, properties[key], root, f"{path}.{key}")
            elif node.get("additionalProperties", True) is False:
                raise ReportSchemaError(f"unexpected member {key!r}", path)

    if isinstance(value, list) and "items" in node:
        for i, item in enumerate(value):
            _check(item, node["items"], root, f"{path}[{i}]")


def validate(document: Any, kind: None | ReportKind = None) -> None:
    """Raises :class:`ReportSchemaError` unless the document is a report.

    Documents are dispatched on their ``kind`` member, so that errors point
    at the offending member rather than at the whole alternative.
    """
    root = load_schema()
    if not isinstance(document, dict):
        raise ReportSchemaError("a report is a JSON object")
    if kind is None:
        kind = document.get("kind")
    if kind not in ("solve", "verify", "bench"):
        raise ReportSchemaError(f"unknown report kind {kind!r}")
    _check(document, root["definitions"][kind], root, "$")
