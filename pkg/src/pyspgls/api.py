from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Iterable, TypeVar

from typing_extensions import Literal, Protocol

if TYPE_CHECKING:
    from .reformulate import SclsProblem, SphereVec

T = TypeVar("T")
ProgressbarType = Callable[[Iterable[T]], Iterable[T]]

SolverName = Literal["krylov", "rtr", "oracle"]


@dataclass
class SolveReport:
    """What a solver engine reports next to the point it returns.

    ``objective`` is q(r) including the constant term p, ``kkt_residual`` is
    the relative residual ``||(H + lambda I) r + g|| / max(1, ||g||)``.
    ``history`` holds one value per iteration: the subspace objective for
    the Krylov engine, the Riemannian gradient norm for the trust region
    engine.
    """

    solver: str
    objective: float
    lambda_star: float
    kkt_residual: float
    matvecs: int
    iterations: int
    wall_time: float
    converged: bool = True
    kappa_estimate: None | float = None
    hard_case: bool = False
    restarts: int = 0
    perturbation: float = 0.0
    history: list[float] = field(default_factory=list)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        assert self.kkt_residual >= 0 or math.isnan(self.kkt_residual)
        assert self.matvecs >= self.iterations

    def to_dict(self) -> dict[str, Any]:
        def finite_or_none(x: None | float) -> None | float:
            if x is None or not math.isfinite(x):
                return None
            return float(x)

        return dict(
            solver=self.solver,
            objective=float(self.objective),
            lambda_star=float(self.lambda_star),
            kkt_residual=float(self.kkt_residual),
            matvecs=int(self.matvecs),
            iterations=int(self.iterations),
            wall_time=float(self.wall_time),
            converged=bool(self.converged),
            kappa_estimate=finite_or_none(self.kappa_estimate),
            hard_case=bool(self.hard_case),
            restarts=int(self.restarts),
            perturbation=float(self.perturbation),
            diagnostics={k: v for k, v in self.diagnostics.items()},
        )


class SclsSolver(Protocol):
    name: str

    def solve(
        self, problem: SclsProblem
    ) -> tuple[SphereVec, SolveReport]: ...
