"""Dense reference solver for small instances.

The Hessian is densified and diagonalized once; the optimality system then
reduces to a scalar secular equation in the multiplier. Every property test
in the package compares against this module, so any doubt about the
eigendecomposition is an error rather than a warning.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any

from scipy import linalg

import numpy as np
import numpy.typing as npt

from . import config
from .api import SolveReport
from .exceptions import (
    DegenerateApexError,
    EigenDecompositionError,
    InvalidArgumentError,
    NumericalFailureError,
    ProblemSizeError,
)
from .linops import DenseVector, as_vector
from .reformulate import (
    Dataset,
    SclsProblem,
    SphereVec,
    SpgPoint,
    build_scls,
    eval_spg_objective,
    recover_spg,
)

_log = logging.getLogger(__name__)

SECULAR_MAX_ITER = 200
SECULAR_TOL = 1e-14
TINY = 1e-12


@dataclass(frozen=True, eq=False)
class EigenForm:
    """H = U diag(d) U.T with ascending d, and g in the eigenbasis."""

    eigvals: DenseVector
    eigvecs: npt.NDArray[np.float64]
    g_tilde: DenseVector

    @classmethod
    def from_dense(cls, H: Any, g: Any) -> EigenForm:
        H = np.asarray(H, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise InvalidArgumentError(f"H must be square, got {H.shape}")
        g = as_vector(g, H.shape[0], name="g")
        h_norm = float(np.abs(H).max()) if H.size else 0.0
        if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, h_norm)):
            raise InvalidArgumentError("H is not symmetric")
        try:
            eigvals, eigvecs = linalg.eigh(H)
        except linalg.LinAlgError as e:
            raise EigenDecompositionError(str(e)) from e

        # sign convention: largest component of each eigenvector positive
        pivots = np.abs(eigvecs).argmax(axis=0)
        signs = np.sign(eigvecs[pivots, np.arange(eigvecs.shape[1])])
        eigvecs = eigvecs * np.where(signs == 0, 1.0, signs)

        form = cls(eigvals, eigvecs, eigvecs.T @ g)
        error = form.reconstruction_error(H)
        if error > 1e-9 * max(float(np.linalg.norm(H)), TINY):
            raise EigenDecompositionError(
                f"eigendecomposition reconstruction error {error:.3e}"
            )
        return form

    @classmethod
    def from_problem(cls, p: SclsProblem) -> EigenForm:
        return cls.from_dense(p.dense_hessian(), p.g)

    @property
    def size(self) -> int:
        return int(self.eigvals.shape[0])

    @property
    def d_min(self) -> float:
        return float(self.eigvals[0])

    def reconstruction_error(self, H: npt.NDArray[np.float64]) -> float:
        U, d = self.eigvecs, self.eigvals
        return float(np.linalg.norm(H - (U * d) @ U.T))

    def pseudo_solution_norm(self) -> float:
        """||(H - d_min I)^+ g||, the quantity splitting easy and hard case."""
        gap = self.eigvals - self.d_min
        keep = gap > TINY * max(1.0, float(np.abs(self.eigvals).max()))
        return float(np.linalg.norm(self.g_tilde[keep] / gap[keep]))


@dataclass
class OracleSolution:
    r_star: SphereVec
    lambda_star: float
    value: float
    hard_case: bool
    multiplicity: int = 1
    alternates: list[SphereVec] = field(default_factory=list)
    kkt_residual: float = 0.0
    newton_iters: int = 0


def _secular_root(
    d: DenseVector, g_tilde: DenseVector, lower: float, upper: float
) -> tuple[float, int]:
    """Root of sum (g_i / (d_i + lam))^2 = 1 in (lower, upper]."""

    def phi(lam: float) -> tuple[float, float]:
        x = g_tilde / (d + lam)
        return float(x @ x), -2 * float((x * x) @ (1 / (d + lam)))

    lam = upper
    for it in range(1, SECULAR_MAX_ITER + 1):
        value, slope = phi(lam)
        norm = math.sqrt(value)
        if abs(norm - 1) <= SECULAR_TOL:
            return lam, it
        if norm > 1:
            lower = lam
        else:
            upper = lam
        if upper - lower <= SECULAR_TOL * max(1.0, abs(lam)):
            return lam, it
        # Newton on 1 / sqrt(phi) - 1, nearly linear in lam
        psi = 1 / norm - 1
        dpsi = -0.5 * slope / value**1.5
        candidate = lam - psi / dpsi if dpsi != 0 else math.nan
        if not lower < candidate < upper:
            candidate = (lower + upper) / 2
        lam = candidate

    raise NumericalFailureError(
        f"secular equation did not converge in {SECULAR_MAX_ITER} iterations",
        bracket=(lower, upper),
        lambda_=lam,
        iterations=SECULAR_MAX_ITER,
    )


def _quadratic(form: EigenForm, x: DenseVector) -> float:
    return float(form.eigvals @ (x * x) + 2 * form.g_tilde @ x)


def solve_dense_sphere(H: Any, g: Any) -> OracleSolution:
    """Global minimizer of r.T H r + 2 g.T r over the unit sphere.

    The returned value excludes any constant term.
    """
    form = EigenForm.from_dense(H, g)
    d, gt, U = form.eigvals, form.g_tilde, form.eigvecs
    scale = max(1.0, float(np.abs(d).max()))
    g_norm = float(np.linalg.norm(gt))

    minimal = d - form.d_min <= TINY * scale
    gt = np.where(minimal & (np.abs(gt) <= TINY * max(g_norm, TINY)), 0, gt)
    h0 = np.zeros(form.size)
    rest = ~minimal
    h0[rest] = -gt[rest] / (d[rest] - form.d_min)

    if np.all(gt[minimal] == 0) and float(h0 @ h0) <= 1:
        tau = math.sqrt(max(0.0, 1 - float(h0 @ h0)))
        u = np.zeros(form.size)
        u[0] = 1.0
        plus, minus = h0 + tau * u, h0 - tau * u
        values = _quadratic(form, plus), _quadratic(form, minus)
        tie = abs(values[0] - values[1]) <= 1e-12 * max(1.0, abs(values[0]))
        best, other = plus, minus
        if values[1] < values[0] and not tie:
            best, other = minus, plus
        alternates = [] if tau == 0 else [SphereVec.normalize(U @ other)]
        return OracleSolution(
            r_star=SphereVec.normalize(U @ best),
            lambda_star=-form.d_min,
            value=min(values),
            hard_case=True,
            multiplicity=2 if tie and tau > 0 else 1,
            alternates=alternates if tie else [],
        )

    lam, iters = _secular_root(d, gt, -form.d_min, -form.d_min + g_norm)
    x = -gt / (d + lam)
    x /= np.linalg.norm(x)
    return OracleSolution(
        r_star=SphereVec.normalize(U @ x),
        lambda_star=lam,
        value=_quadratic(form, x),
        hard_case=False,
        newton_iters=iters,
    )


def oracle_solve(
    p: SclsProblem, size_cap: None | int = None
) -> OracleSolution:
    if size_cap is None:
        size_cap = config.get_int("size_cap")
    if p.dim > size_cap:
        raise ProblemSizeError(
            f"n + 1 = {p.dim} exceeds the oracle size cap {size_cap}"
        )
    H = p.dense_hessian()
    sol = solve_dense_sphere(H, p.g)
    sol.value += p.p
    r = sol.r_star.r
    sol.kkt_residual = float(
        np.linalg.norm(H @ r + sol.lambda_star * r + p.g)
    ) / max(1.0, p.g_norm)
    if sol.kkt_residual > 1e-10:
        _log.warning(f"Oracle certificate residual {sol.kkt_residual:.3e}")
    _log.debug(
        f"Oracle: lambda* = {sol.lambda_star:.10g}, "
        f"value = {sol.value:.10g}, hard case = {sol.hard_case}"
    )
    return sol


def brute_force_check(
    p: SclsProblem, grid: int, refine: int = 0
) -> float:
    """Minimum of q over a uniform angular grid of the sphere.

    Each of the ``refine`` extra rounds evaluates a grid of the same
    resolution on a window of two cells around the best point found.
    """
    if p.dim not in (2, 3):
        raise InvalidArgumentError(
            f"brute force supports n + 1 in (2, 3), got {p.dim}"
        )
    if grid < 4:
        raise InvalidArgumentError("grid must be >= 4")
    H = p.dense_hessian()

    def q(R: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        return np.einsum("ij,jk,ik->i", R, H, R) + 2 * R @ p.g + p.p

    if p.dim == 2:
        lo, hi = 0.0, 2 * math.pi
        best_value = math.inf
        for _ in range(refine + 1):
            theta = np.linspace(lo, hi, grid, endpoint=False)
            values = q(np.column_stack([np.cos(theta), np.sin(theta)]))
            i = int(values.argmin())
            best_value = min(best_value, float(values[i]))
            step = (hi - lo) / grid
            lo, hi = theta[i] - step, theta[i] + step
        return best_value

    t_lo, t_hi, f_lo, f_hi = 0.0, math.pi, 0.0, 2 * math.pi
    best_value = math.inf
    for _ in range(refine + 1):
        theta = np.linspace(t_lo, t_hi, grid)
        phi = np.linspace(f_lo, f_hi, 2 * grid, endpoint=False)
        tt, ff = np.meshgrid(theta, phi, indexing="ij")
        R = np.column_stack(
            [
                (np.sin(tt) * np.cos(ff)).ravel(),
                (np.sin(tt) * np.sin(ff)).ravel(),
                np.cos(tt).ravel(),
            ]
        )
        values = q(R)
        i = int(values.argmin())
        best_value = min(best_value, float(values[i]))
        t_step = (t_hi - t_lo) / (grid - 1)
        f_step = (f_hi - f_lo) / (2 * grid)
        t_best, f_best = tt.ravel()[i], ff.ravel()[i]
        t_lo, t_hi = t_best - t_step, t_best + t_step
        f_lo, f_hi = f_best - f_step, f_best + f_step
    return best_value


def solve_spg_small(d: Dataset) -> tuple[SpgPoint, float]:
    """Learner optimum of a small game, through the dense oracle."""
    sol = oracle_solve(build_scls(d))
    apex_error: None | DegenerateApexError = None
    for r in (sol.r_star, *sol.alternates):
        try:
            pt = recover_spg(d, r)
        except DegenerateApexError as e:
            apex_error = e
            continue
        if apex_error is not None:
            _log.info("Apex optimum replaced by another optimizer")
        return pt, eval_spg_objective(d, pt)

    assert apex_error is not None
    raise DegenerateApexError(
        "the whole optimal set is the apex, no finite predictor is optimal",
        value=apex_error.value,
        alpha_tilde=apex_error.alpha_tilde,
    )


@dataclass
class OracleSolver:
    size_cap: None | int = None
    name: str = "oracle"

    def solve(self, problem: SclsProblem) -> tuple[SphereVec, SolveReport]:
        start = time.perf_counter()
        sol = oracle_solve(problem, self.size_cap)
        report = SolveReport(
            solver=self.name,
            objective=sol.value,
            lambda_star=sol.lambda_star,
            kkt_residual=sol.kkt_residual,
            matvecs=0,
            iterations=0,
            wall_time=time.perf_counter() - start,
            hard_case=sol.hard_case,
            diagnostics=dict(
                newton_iters=sol.newton_iters,
                multiplicity=sol.multiplicity,
            ),
        )
        return sol.r_star, report
