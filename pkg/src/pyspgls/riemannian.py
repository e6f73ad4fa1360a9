"""Riemannian trust region Newton method on the unit sphere.

The sphere carries the Euclidean metric. With P = I - r r.T the projection
on the tangent space at r, the Riemannian gradient and Hessian of
q(r) = r.T H r + 2 g.T r + p read

.. math::

    \\mathrm{grad}\\, q(r) = P (2 H r + 2 g)

    \\mathrm{Hess}\\, q(r)[v] = P (2 H v - 2 v\\, r^T (H r + g))

and iterates move along r -> (r + v) / ||r + v||.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
import time
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import Any

import numpy as np

from . import config
from .api import SolveReport
from .exceptions import InvalidArgumentError
from .linops import DenseVector, as_vector
from .reformulate import SclsProblem, SphereVec

_log = logging.getLogger(__name__)

TANGENT_TOL = 1e-10

# radius update thresholds, not configurable
SHRINK_BELOW = 0.1
GROW_ABOVE = 0.75
GROW_STEP_FRACTION = 0.8

RHO_REGULARIZATION = 1e3


class TcgStop(enum.Enum):
    NEGATIVE_CURVATURE = "negative curvature"
    EXCEEDED_TR = "exceeded trust region"
    REACHED_TARGET_LINEAR = "reached target residual-kappa (linear)"
    REACHED_TARGET_SUPERLINEAR = "reached target residual-theta (superlinear)"
    MAX_INNER_ITER = "maximum inner iterations"
    MODEL_INCREASED = "model increased"


@dataclass(frozen=True)
class RtrConfig:
    delta_bar: float = 2.0
    delta0: float = 1.0
    c: float = 0.1
    tau1: float = 0.25
    tau2: float = 2.0
    grad_tol: float = 1e-10
    max_outer: int = 1000
    tcg_max_inner: None | int = None
    tcg_theta: float = 1.0
    tcg_kappa: float = 0.1

    def __post_init__(self) -> None:
        checks = [
            (self.delta_bar > 0, "delta_bar must be > 0"),
            (0 < self.delta0 < self.delta_bar, "delta0 not in (0, delta_bar)"),
            (0 < self.c < 0.25, "c not in (0, 0.25)"),
            (0 < self.tau1 < 1, "tau1 not in (0, 1)"),
            (self.tau2 > 1, "tau2 must be > 1"),
            (self.grad_tol > 0, "grad_tol must be > 0"),
            (self.max_outer >= 1, "max_outer must be >= 1"),
            (self.tcg_theta > 0, "tcg_theta must be > 0"),
        ]
        if self.tcg_max_inner is not None:
            checks.append((self.tcg_max_inner >= 1, "tcg_max_inner < 1"))
        for ok, msg in checks:
            if not ok:
                raise InvalidArgumentError(msg)

    @classmethod
    def from_settings(cls, **kwargs: Any) -> RtrConfig:
        params: dict[str, Any] = dict(grad_tol=config.get_float("rtr_grad_tol"))
        params.update({k: v for k, v in kwargs.items() if v is not None})
        return cls(**params)


@dataclass
class RtrState:
    r: SphereVec
    delta: float
    rho: float = math.nan
    grad_norm: float = math.nan
    outer_iters: int = 0
    hess_applies: int = 0


def _check_tangent(r: SphereVec, v: DenseVector) -> DenseVector:
    v = as_vector(v, len(r), name="v")
    if abs(float(v @ r.r)) > TANGENT_TOL * max(1.0, float(np.linalg.norm(v))):
        raise InvalidArgumentError(
            f"v is not tangent at r: <v, r> = {float(v @ r.r):.3e}"
        )
    return v


def _project(r: DenseVector, v: DenseVector) -> DenseVector:
    return v - (r @ v) * r


def riemannian_grad(p: SclsProblem, r: SphereVec) -> DenseVector:
    if len(r) != p.dim:
        raise InvalidArgumentError(f"r has length {len(r)}, not {p.dim}")
    return _project(r.r, p.euclidean_gradient(r.r))


def _hess(
    p: SclsProblem, r: DenseVector, v: DenseVector, mu: float
) -> DenseVector:
    # mu = r.T (H r + g), computed once per outer iteration
    return _project(r, 2 * p.hessian_apply(v) - 2 * mu * v)


def riemannian_hess_apply(
    p: SclsProblem, r: SphereVec, v: Any
) -> DenseVector:
    v = _check_tangent(r, v)
    mu = float(r.r @ (p.hessian_apply(r.r) + p.g))
    return _hess(p, r.r, v, mu)


def retract(r: SphereVec, v: Any) -> SphereVec:
    v = _check_tangent(r, v)
    moved = r.r + v
    return SphereVec(moved / np.linalg.norm(moved))


@dataclass
class TcgResult:
    s: DenseVector
    hs: DenseVector
    inner_iters: int
    stop: TcgStop


def _tcg(
    p: SclsProblem,
    r: DenseVector,
    grad: DenseVector,
    mu: float,
    delta: float,
    cfg: RtrConfig,
) -> TcgResult:
    max_inner = cfg.tcg_max_inner or p.dim
    eta = np.zeros_like(grad)
    h_eta = np.zeros_like(grad)
    res = grad.copy()
    norm_r0 = float(np.linalg.norm(res))
    z_r = norm_r0**2
    d_pd = z_r
    direction = -res
    e_pe = e_pd = 0.0
    model = 0.0
    stop = TcgStop.MAX_INNER_ITER

    j = 0
    for j in range(1, max_inner + 1):
        h_dir = _hess(p, r, direction, mu)
        d_hd = float(direction @ h_dir)
        alpha = z_r / d_hd if d_hd != 0 else math.inf
        e_pe_new = e_pe + 2 * alpha * e_pd + alpha**2 * d_pd

        if d_hd <= 0 or e_pe_new >= delta**2:
            tau = (-e_pd + math.sqrt(e_pd**2 + d_pd * (delta**2 - e_pe))) / d_pd
            eta = eta + tau * direction
            h_eta = h_eta + tau * h_dir
            if d_hd <= 0:
                stop = TcgStop.NEGATIVE_CURVATURE
            else:
                stop = TcgStop.EXCEEDED_TR
            break

        e_pe = e_pe_new
        new_eta = eta + alpha * direction
        new_h_eta = h_eta + alpha * h_dir
        new_model = float(new_eta @ grad + 0.5 * new_eta @ new_h_eta)
        if new_model >= model:
            stop = TcgStop.MODEL_INCREASED
            break
        eta, h_eta, model = new_eta, new_h_eta, new_model

        res = _project(r, res + alpha * h_dir)
        norm_r = float(np.linalg.norm(res))
        if norm_r <= norm_r0 * min(norm_r0**cfg.tcg_theta, cfg.tcg_kappa):
            if cfg.tcg_kappa < norm_r0**cfg.tcg_theta:
                stop = TcgStop.REACHED_TARGET_LINEAR
            else:
                stop = TcgStop.REACHED_TARGET_SUPERLINEAR
            break

        z_r_old = z_r
        z_r = norm_r**2
        beta = z_r / z_r_old
        direction = -res + beta * direction
        e_pd = beta * (e_pd + alpha * d_pd)
        d_pd = z_r + beta**2 * d_pd

    return TcgResult(eta, h_eta, j, stop)


def truncated_cg(
    p: SclsProblem, r: SphereVec, delta: float, cfg: RtrConfig
) -> DenseVector:
    """Approximate minimizer of the trust region model in the tangent space.

    The model is m(s) = <grad, s> + <s, Hess s> / 2 with ||s|| <= delta.
    """
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be > 0, got {delta}")
    hr = p.hessian_apply(r.r)
    mu = float(r.r @ (hr + p.g))
    grad = _project(r.r, 2 * (hr + p.g))
    return _tcg(p, r.r, grad, mu, delta, cfg).s


def rtr_solve(
    p: SclsProblem, r0: None | SphereVec = None, cfg: None | RtrConfig = None
) -> tuple[SphereVec, SolveReport]:
    if cfg is None:
        cfg = RtrConfig()
    if r0 is None:
        r0 = default_start(p)
    if len(r0) != p.dim:
        raise InvalidArgumentError(f"r0 has length {len(r0)}, not {p.dim}")
    start_time = time.perf_counter()
    instrumented = dataclasses.replace(p, lhat=p.lhat.instrumented())
    counter = instrumented.lhat.counter
    assert counter is not None

    tol = cfg.grad_tol * max(1.0, p.g_norm)
    eps = float(np.finfo(np.float64).eps)
    state = RtrState(r=r0, delta=cfg.delta0)
    r = r0.r
    hr = instrumented.hessian_apply(r)
    q = p.q_quadratic(r, hr)
    history: list[float] = []
    accepted = rejected = degenerate = 0
    stop: None | TcgStop = None

    while True:
        mu = float(r @ (hr + p.g))
        grad = _project(r, 2 * (hr + p.g))
        state.grad_norm = float(np.linalg.norm(grad))
        history.append(state.grad_norm)
        if state.grad_norm <= tol or state.outer_iters >= cfg.max_outer:
            break
        state.outer_iters += 1

        tcg = _tcg(instrumented, r, grad, mu, state.delta, cfg)
        stop = tcg.stop
        moved = r + tcg.s
        r_new = moved / np.linalg.norm(moved)
        hr_new = instrumented.hessian_apply(r_new)
        q_new = p.q_quadratic(r_new, hr_new)

        regularization = max(1.0, abs(q)) * eps * RHO_REGULARIZATION
        numerator = q - q_new + regularization
        denominator = -float(tcg.s @ grad + 0.5 * tcg.s @ tcg.hs)
        denominator += regularization
        rho = numerator / denominator if denominator != 0 else math.nan
        if not math.isfinite(rho) or denominator < 0:
            degenerate += 1
            rho = 1.0 if q - q_new >= 0 else -math.inf
            _log.warning(
                f"Degenerate model ratio at iteration {state.outer_iters}, "
                f"using rho = {rho}"
            )
        state.rho = rho

        step = float(np.linalg.norm(tcg.s))
        if rho < SHRINK_BELOW:
            state.delta *= cfg.tau1
        elif rho > GROW_ABOVE and step >= GROW_STEP_FRACTION * state.delta:
            state.delta = min(cfg.tau2 * state.delta, cfg.delta_bar)

        if rho > cfg.c:
            accepted += 1
            r, hr, q = r_new, hr_new, q_new
            state.r = SphereVec(r)
        else:
            rejected += 1
        _log.debug(
            f"RTR iteration {state.outer_iters}: q = {q:.12g}, "
            f"|grad| = {state.grad_norm:.3e}, rho = {rho:.3f}, "
            f"delta = {state.delta:.3e}, tCG: {tcg.stop.value}"
        )

    state.hess_applies = counter.hessian_applies
    converged = state.grad_norm <= tol
    if not converged:
        _log.warning(
            f"RTR stopped after {cfg.max_outer} iterations with "
            f"|grad| = {state.grad_norm:.3e}"
        )
    report = SolveReport(
        solver="rtr",
        objective=q,
        lambda_star=-mu,
        kkt_residual=state.grad_norm / 2 / max(1.0, p.g_norm),
        matvecs=state.hess_applies,
        iterations=state.outer_iters,
        wall_time=time.perf_counter() - start_time,
        converged=converged,
        history=history,
        diagnostics=dict(
            accepted=accepted,
            rejected=rejected,
            degenerate_ratios=degenerate,
            final_delta=state.delta,
            last_tcg_stop=None if stop is None else stop.value,
        ),
    )
    return SphereVec(r), report


def default_start(p: SclsProblem) -> SphereVec:
    """-g / ||g||, or the last basis vector when g vanishes."""
    if p.g_norm == 0:
        return SphereVec.apex(p.dim)
    return SphereVec.normalize(-p.g)


def start_points(p: SclsProblem, starts: int, seed: int = 0) -> list[SphereVec]:
    rng = np.random.default_rng(seed)
    points = [default_start(p)]
    while len(points) < starts:
        v = rng.standard_normal(p.dim)
        points.append(SphereVec.normalize(v))
    return points[:starts]


def rtr_multistart(
    p: SclsProblem,
    cfg: None | RtrConfig = None,
    starts: None | int = None,
    seed: int = 0,
    workers: int = 1,
) -> tuple[SphereVec, SolveReport]:
    """Best of several independent RTR runs.

    RTR converges to a stationary point of q, global optimality is only
    likely, never certified, hence the restarts from random points.
    """
    if starts is None:
        starts = config.get_int("rtr_starts")
    if starts < 1:
        raise InvalidArgumentError("starts must be >= 1")

    def run(r0: SphereVec) -> tuple[SphereVec, SolveReport]:
        return rtr_solve(p, r0, cfg)

    points = start_points(p, starts, seed)
    if workers > 1:
        with ThreadPool(workers) as pool:
            runs = pool.map(run, points)
    else:
        runs = [run(r0) for r0 in points]

    best_r, best = min(runs, key=lambda run: run[1].objective)
    best.diagnostics["start_objectives"] = [rep.objective for _, rep in runs]
    best.matvecs = sum(rep.matvecs for _, rep in runs)
    best.iterations = sum(rep.iterations for _, rep in runs)
    best.wall_time = sum(rep.wall_time for _, rep in runs)
    best.restarts = starts - 1
    return best_r, best


@dataclass
class RtrSolver:
    cfg: RtrConfig = field(default_factory=RtrConfig)
    starts: None | int = None
    seed: int = 0
    workers: int = 1
    name: str = "rtr"

    def solve(self, problem: SclsProblem) -> tuple[SphereVec, SolveReport]:
        return rtr_multistart(
            problem, self.cfg, self.starts, self.seed, self.workers
        )
