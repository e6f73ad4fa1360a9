"""Generalized Lanczos engine for the spherical least squares problem.

The engine grows the Krylov space spanned by g, Hg, H^2 g, ... with the
Lanczos process. In the orthonormal basis Q_k the problem becomes

.. math::

    \\min_{\\|h\\| = 1} h^T T_k h + 2 \\|g\\| h_1

with a tridiagonal T_k. The projected problem is solved with a safeguarded
Newton method on the secular equation and lifted back as r = Q_k h.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any

from scipy import linalg
from typing_extensions import Literal

import numpy as np
import numpy.typing as npt

from . import config
from .api import SolveReport
from .exceptions import (
    CenteredProblemError,
    InvalidArgumentError,
    LanczosStateError,
    NumericalFailureError,
)
from .linops import DenseVector, as_vector
from .reformulate import SclsProblem, SphereVec

_log = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-14
NEWTON_MAX_ITER = 200
PERTURBATION = 1e-10
PERTURBATION_GROWTH = 100.0
REFINE_BASIS = 8
REFINE_CYCLES = 4

Reorthogonalization = Literal["full", "selective"]


@dataclass(frozen=True, eq=False)
class Tridiagonal:
    """Symmetric tridiagonal matrix stored as two arrays."""

    diag: DenseVector
    offdiag: DenseVector

    def __post_init__(self) -> None:
        diag = as_vector(self.diag, name="diag")
        offdiag = as_vector(self.offdiag, max(diag.shape[0] - 1, 0), "offdiag")
        if diag.shape[0] < 1:
            raise InvalidArgumentError("empty tridiagonal matrix")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "offdiag", offdiag)

    @classmethod
    def from_dense(cls, T: Any) -> Tridiagonal:
        T = np.asarray(T, dtype=np.float64)
        return cls(np.diag(T).copy(), np.diag(T, k=1).copy())

    @property
    def size(self) -> int:
        return int(self.diag.shape[0])

    def to_dense(self) -> npt.NDArray[np.float64]:
        T = np.diag(self.diag)
        if self.size > 1:
            T += np.diag(self.offdiag, k=1) + np.diag(self.offdiag, k=-1)
        return T

    def matvec(self, h: DenseVector) -> DenseVector:
        out = self.diag * h
        out[:-1] += self.offdiag * h[1:]
        out[1:] += self.offdiag * h[:-1]
        return out

    def norm_bound(self) -> float:
        bound = float(np.abs(self.diag).max())
        if self.size > 1:
            bound += 2 * float(np.abs(self.offdiag).max())
        return bound

    def eigh(self) -> tuple[DenseVector, npt.NDArray[np.float64]]:
        if self.size == 1:
            return self.diag.copy(), np.ones((1, 1))
        vals, vecs = linalg.eigh_tridiagonal(self.diag, self.offdiag)
        return vals, vecs

    def eigvalsh(self) -> DenseVector:
        if self.size == 1:
            return self.diag.copy()
        return linalg.eigvalsh_tridiagonal(self.diag, self.offdiag)

    def smallest_eigenvalue(self) -> float:
        if self.size == 1:
            return float(self.diag[0])
        vals = linalg.eigvalsh_tridiagonal(
            self.diag, self.offdiag, select="i", select_range=(0, 0)
        )
        return float(vals[0])

    def shifted_band(self, shift: float) -> npt.NDArray[np.float64]:
        """Upper banded storage of T + shift I, as scipy.linalg expects."""
        band = np.zeros((2, self.size))
        band[0, 1:] = self.offdiag
        band[1, :] = self.diag + shift
        return band


def model_value(T: Tridiagonal, gnorm: float, h: DenseVector) -> float:
    """h.T T h + 2 gnorm h_1, the projected objective without its constant."""
    return float(h @ T.matvec(h) + 2 * gnorm * h[0])


@dataclass
class LanczosState:
    """Lanczos basis and tridiagonal matrix after k steps.

    The basis is kept in a preallocated array whose capacity doubles when
    exceeded. ``pending`` is the next basis vector, ``beta`` the norm of the
    residual it was normalized from.
    """

    g_norm: float
    storage: npt.NDArray[np.float64]
    pending: None | DenseVector
    alphas: list[float] = field(default_factory=list)
    betas: list[float] = field(default_factory=list)
    k: int = 0
    beta: float = 0.0
    breakdown: bool = False

    @classmethod
    def start(cls, g: Any, capacity: int = 16) -> LanczosState:
        g = as_vector(g, name="g")
        g_norm = float(np.linalg.norm(g))
        if g_norm == 0:
            raise CenteredProblemError(
                "g = 0, the Krylov space is empty: use the eigen oracle"
            )
        storage = np.empty((g.shape[0], max(1, min(capacity, g.shape[0]))))
        return cls(g_norm=g_norm, storage=storage, pending=g / g_norm)

    @property
    def dim(self) -> int:
        return int(self.storage.shape[0])

    @property
    def basis(self) -> npt.NDArray[np.float64]:
        return self.storage[:, : self.k]

    @property
    def tridiag(self) -> Tridiagonal:
        if self.k == 0:
            raise LanczosStateError("no Lanczos step taken yet")
        return Tridiagonal(np.array(self.alphas), np.array(self.betas))

    def _grow(self) -> None:
        capacity = min(2 * self.storage.shape[1], self.dim)
        storage = np.empty((self.dim, capacity))
        storage[:, : self.k] = self.storage[:, : self.k]
        self.storage = storage


def _orthogonalize(w: DenseVector, basis: npt.NDArray[np.float64]) -> None:
    # classical Gram-Schmidt, twice is enough
    for _ in range(2):
        w -= basis @ (basis.T @ w)


def lanczos_step(
    p: SclsProblem, st: LanczosState, reorth: Reorthogonalization = "full"
) -> LanczosState:
    """Advances the Lanczos process by one H-product, in place.

    The state returned is the one passed as a parameter.
    """
    if st.breakdown or st.pending is None:
        raise LanczosStateError(
            f"Lanczos process broke down after {st.k} steps"
        )
    k = st.k
    if k >= st.storage.shape[1]:
        st._grow()
    q = st.pending
    st.storage[:, k] = q
    hq = p.hessian_apply(q)
    alpha = float(q @ hq)

    w = hq - alpha * q
    if k > 0:
        w -= st.beta * st.storage[:, k - 1]
    basis = st.storage[:, : k + 1]
    if reorth == "full":
        _orthogonalize(w, basis)
    else:
        overlap = float(np.abs(basis.T @ w).max())
        if overlap > math.sqrt(np.finfo(np.float64).eps) * np.linalg.norm(w):
            _orthogonalize(w, basis)
    beta = float(np.linalg.norm(w))

    if k > 0:
        st.betas.append(st.beta)
    st.alphas.append(alpha)
    st.k = k + 1
    st.beta = beta

    threshold = BREAKDOWN_TOL * max(st.g_norm, float(np.linalg.norm(hq)))
    if beta < threshold or st.k == st.dim:
        st.breakdown = True
        st.pending = None
        _log.debug(f"Lanczos breakdown at step {st.k}, beta = {beta:.3e}")
    else:
        st.pending = w / beta
    return st


@dataclass
class TridiagSphereSolution:
    h: DenseVector
    lambda_: float
    newton_iters: int
    hard_case: bool


def _shifted_solve(
    T: Tridiagonal, shift: float, rhs: DenseVector
) -> tuple[npt.NDArray[np.float64], DenseVector]:
    factor = linalg.cholesky_banded(T.shifted_band(shift))
    return factor, linalg.cho_solve_banded((factor, False), rhs)


def _tridiag_hard_case(
    T: Tridiagonal, gnorm: float, scale: float
) -> TridiagSphereSolution:
    vals, vecs = T.eigh()
    theta = float(vals[0])
    coeffs = -gnorm * vecs[0, :]
    gap = vals - theta
    keep = gap > 1e-12 * scale
    h0 = vecs[:, keep] @ (coeffs[keep] / gap[keep])
    tau = math.sqrt(max(0.0, 1.0 - float(h0 @ h0)))
    u = vecs[:, 0]
    plus, minus = h0 + tau * u, h0 - tau * u
    h = plus
    # ties go to the + sign
    if model_value(T, gnorm, minus) < model_value(T, gnorm, plus) - 1e-14:
        h = minus
    return TridiagSphereSolution(
        h / np.linalg.norm(h), -theta, newton_iters=0, hard_case=True
    )


def solve_tridiag_sphere(
    T: Tridiagonal, gnorm: float, tol: float = 1e-13
) -> TridiagSphereSolution:
    """Solves min h.T T h + 2 gnorm h_1 subject to ||h|| = 1.

    The multiplier is the root of 1/||h(lambda)|| = 1 on the interval
    (-theta_min, -theta_min + gnorm], with h(lambda) the solution of
    (T + lambda I) h = -gnorm e_1. Newton steps come from the Cholesky
    factor of the shifted band matrix; steps leaving the bracket fall back
    to bisection.
    """
    if not (math.isfinite(gnorm) and gnorm >= 0):
        raise InvalidArgumentError(f"gnorm must be >= 0, got {gnorm}")
    theta_min = T.smallest_eigenvalue()
    scale = max(1.0, T.norm_bound(), gnorm)
    if gnorm == 0:
        return _tridiag_hard_case(T, gnorm, scale)

    rhs = np.zeros(T.size)
    rhs[0] = -gnorm
    pole = -theta_min

    lam = math.nan
    for offset in (1e-13, 1e-11, 1e-9):
        lam = pole + offset * scale
        try:
            factor, h = _shifted_solve(T, lam, rhs)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise NumericalFailureError(
            "shifted tridiagonal matrix is not positive definite",
            bracket=(pole, pole + gnorm),
            lambda_=lam,
            iterations=0,
        )

    hnorm = float(np.linalg.norm(h))
    if hnorm <= 1:
        return _tridiag_hard_case(T, gnorm, scale)

    eps = float(np.finfo(np.float64).eps)
    lower, upper = lam, pole + gnorm
    for it in range(1, NEWTON_MAX_ITER + 1):
        collapsed = upper - lower <= 4 * eps * max(1.0, abs(lam))
        if abs(hnorm - 1) <= tol or collapsed:
            return TridiagSphereSolution(
                h / hnorm, lam, newton_iters=it - 1, hard_case=False
            )
        if hnorm > 1:
            lower = lam
        else:
            upper = lam
        w = linalg.cho_solve_banded((factor, False), h)
        step = (hnorm - 1) * hnorm**2 / float(h @ w)
        candidate = lam + step
        if not lower < candidate < upper:
            candidate = (lower + upper) / 2
        lam = candidate
        try:
            factor, h = _shifted_solve(T, lam, rhs)
        except np.linalg.LinAlgError:
            # rounding put lam to the left of the pole
            lower = lam
            lam = (lower + upper) / 2
            factor, h = _shifted_solve(T, lam, rhs)
        hnorm = float(np.linalg.norm(h))

    raise NumericalFailureError(
        f"secular equation did not converge in {NEWTON_MAX_ITER} iterations",
        bracket=(lower, upper),
        lambda_=lam,
        iterations=NEWTON_MAX_ITER,
    )


@dataclass(frozen=True)
class KrylovConfig:
    """Settings of :func:`krylov_solve`.

    ``max_iter`` defaults to ``10 * sqrt(n + 1)``, capped at ``n + 1``.
    The lifted residual is recomputed every ``check_every`` iterations, or
    as soon as the cheap tridiagonal estimate falls below ``tol``.
    """

    max_iter: None | int = None
    tol: float = 1e-10
    reorth: Reorthogonalization = "full"
    restart_every: None | int = None
    perturb_seed: None | int = None
    check_every: int = 5

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise InvalidArgumentError(f"tol must be > 0, got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be >= 1")
        if self.reorth not in ("full", "selective"):
            raise InvalidArgumentError(f"unknown reorth {self.reorth!r}")
        if self.restart_every is not None and self.restart_every < 2:
            raise InvalidArgumentError("restart_every must be >= 2")
        if self.check_every < 1:
            raise InvalidArgumentError("check_every must be >= 1")

    @classmethod
    def from_settings(cls, **kwargs: Any) -> KrylovConfig:
        """Defaults from the settings.conf file, overridden by kwargs."""
        params: dict[str, Any] = dict(
            tol=config.get_float("krylov_tol"),
            reorth=config.krylov_reorth,
        )
        params.update({k: v for k, v in kwargs.items() if v is not None})
        return cls(**params)

    def iteration_cap(self, dim: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return max(1, min(dim, math.ceil(10 * math.sqrt(dim))))


@dataclass
class _Phase:
    r: DenseVector
    hr: DenseVector
    lambda_: float
    kkt: float
    iterations: int
    converged: bool
    breakdown: bool
    hard_case: bool
    ritz: DenseVector
    history: list[float]
    restarts: int = 0


def _kappa(ritz: DenseVector, lambda_: float) -> float:
    denominator = float(ritz.min()) + lambda_
    if denominator <= 0:
        return math.inf
    return (float(ritz.max()) + lambda_) / denominator


def _residual(
    p: SclsProblem,
    g: DenseVector,
    r: DenseVector,
    hr: DenseVector,
    lambda_: float,
) -> float:
    return float(np.linalg.norm(hr + lambda_ * r + g)) / max(1.0, p.g_norm)


def _lanczos_phase(
    p: SclsProblem,
    g_used: DenseVector,
    cfg: KrylovConfig,
    cap: int,
    coupling: float = 0.0,
) -> _Phase:
    """Lanczos iterations on the problem with gradient ``g_used``.

    With a perturbed gradient, a step whose beta is below ``coupling``
    times the norm of T only carries the perturbation: the space is
    invariant up to it and the next vector holds the directions that g
    misses, so no stop is allowed there.
    """
    st = LanczosState.start(g_used, capacity=min(cap, 64))
    denominator = max(1.0, p.g_norm)
    history: list[float] = []

    for k in range(1, cap + 1):
        lanczos_step(p, st, cfg.reorth)
        T = st.tridiag
        sol = solve_tridiag_sphere(T, st.g_norm)
        history.append(model_value(T, st.g_norm, sol.h) + p.p)

        estimate = st.beta * abs(float(sol.h[-1])) / denominator
        last = st.breakdown or k == cap
        weak = coupling > 0 and st.beta <= coupling * T.norm_bound()
        if not last and (weak or (estimate > cfg.tol and k % cfg.check_every)):
            continue

        r = st.basis @ sol.h
        r /= np.linalg.norm(r)
        hr = p.hessian_apply(r)
        kkt = _residual(p, g_used, r, hr, sol.lambda_)
        _log.debug(
            f"Lanczos step {k}: estimate {estimate:.3e}, residual {kkt:.3e}"
        )
        converged = kkt <= cfg.tol
        if converged or last:
            return _Phase(
                r=r,
                hr=hr,
                lambda_=sol.lambda_,
                kkt=kkt,
                iterations=k,
                converged=converged,
                breakdown=st.breakdown and st.k < st.dim,
                hard_case=sol.hard_case,
                ritz=T.eigvalsh(),
                history=history,
            )

    raise AssertionError("unreachable")


def _restart_phase(
    p: SclsProblem,
    g_used: DenseVector,
    cfg: KrylovConfig,
    start: _Phase,
    budget: int,
) -> _Phase:
    """Thick restarts seeded with the current iterate and g.

    Each cycle builds an orthonormal basis from r, g and the KKT residual,
    grows it by H-products of its newest vector and solves the projected
    problem densely.
    """
    from .oracle import solve_dense_sphere

    assert cfg.restart_every is not None
    phase = start
    used = 0
    while used < budget and not phase.converged:
        residual = phase.hr + phase.lambda_ * phase.r + g_used
        vectors, products = [phase.r], [phase.hr]
        queue = [g_used, residual]
        while len(vectors) < cfg.restart_every + 1 and used < budget:
            direction = queue.pop(0) if queue else products[-1]
            basis = np.column_stack(vectors)
            v = np.array(direction, dtype=np.float64)
            _orthogonalize(v, basis)
            norm = float(np.linalg.norm(v))
            if norm <= BREAKDOWN_TOL * max(1.0, np.linalg.norm(direction)):
                if queue:
                    continue
                break
            v /= norm
            vectors.append(v)
            products.append(p.hessian_apply(v))
            used += 1

        V, HV = np.column_stack(vectors), np.column_stack(products)
        M = V.T @ HV
        sol = solve_dense_sphere((M + M.T) / 2, V.T @ g_used)
        r = V @ sol.r_star.r
        norm = float(np.linalg.norm(r))
        r, hr = r / norm, (HV @ sol.r_star.r) / norm
        kkt = _residual(p, g_used, r, hr, sol.lambda_star)
        phase = _Phase(
            r=r,
            hr=hr,
            lambda_=sol.lambda_star,
            kkt=kkt,
            iterations=phase.iterations + len(vectors) - 1,
            converged=kkt <= cfg.tol,
            breakdown=False,
            hard_case=sol.hard_case,
            ritz=np.linalg.eigvalsh((M + M.T) / 2),
            history=[*phase.history, p.q_quadratic(r, hr)],
            restarts=phase.restarts + 1,
        )
        _log.info(f"Restart {phase.restarts}: residual {kkt:.3e}")
        if len(vectors) == 1:
            break
    return phase


def _refine(p: SclsProblem, cfg: KrylovConfig, phase: _Phase) -> _Phase:
    """Brings an iterate of the perturbed problem back to the true g.

    The perturbed optimum is within O(sigma) of the true one; a few thick
    restarts on the true gradient, seeded with it, remove that offset.
    Only converged iterates are refined: the true g has no component on
    the directions the perturbation uncovered, the iterate carries them.
    """
    kkt = _residual(p, p.g, phase.r, phase.hr, phase.lambda_)
    phase = dataclasses.replace(phase, kkt=kkt, converged=kkt <= cfg.tol)
    if phase.converged:
        return phase
    basis = min(REFINE_BASIS, p.dim)
    refined = dataclasses.replace(cfg, restart_every=max(2, basis))
    return _restart_phase(p, p.g, refined, phase, REFINE_CYCLES * basis)


def _solved(phase: _Phase, cfg: KrylovConfig) -> bool:
    # the projected matrix shifted by lambda must stay semidefinite
    floor = -cfg.tol * max(1.0, abs(phase.lambda_))
    return phase.converged and phase.lambda_ + float(phase.ritz.min()) >= floor


def krylov_solve(
    p: SclsProblem, cfg: None | KrylovConfig = None
) -> tuple[SphereVec, SolveReport]:
    if cfg is None:
        cfg = KrylovConfig()
    start_time = time.perf_counter()
    g_norm = p.g_norm
    if g_norm == 0:
        raise CenteredProblemError(
            "g = 0 (y = z/2): the minimizer is an eigenvector of H, "
            "solve with pyspgls.oracle.oracle_solve instead"
        )

    instrumented = dataclasses.replace(p, lhat=p.lhat.instrumented())
    counter = instrumented.lhat.counter
    assert counter is not None
    cap = cfg.iteration_cap(p.dim)
    lanczos_cap = cap
    if cfg.restart_every is not None:
        lanczos_cap = min(cap, cfg.restart_every)

    sigmas = [0.0]
    rng = None
    if cfg.perturb_seed is not None:
        rng = np.random.default_rng(cfg.perturb_seed)
        sigmas = [
            PERTURBATION * PERTURBATION_GROWTH**i * g_norm for i in range(2)
        ]

    phase: None | _Phase = None
    sigma = 0.0
    for attempt, sigma in enumerate(sigmas):
        g_used = np.array(p.g)
        coupling = 0.0
        if rng is not None:
            direction = rng.standard_normal(p.dim)
            g_used += sigma * direction / np.linalg.norm(direction)
            coupling = math.sqrt(sigma / g_norm)
            _log.info(f"Perturbing g by {sigma:.3e} (attempt {attempt + 1})")

        phase = _lanczos_phase(
            instrumented, g_used, cfg, lanczos_cap, coupling
        )
        if (
            not phase.converged
            and not phase.breakdown
            and cfg.restart_every is not None
            and cap > phase.iterations
        ):
            phase = _restart_phase(
                instrumented, g_used, cfg, phase, cap - phase.iterations
            )
        if rng is not None and phase.converged:
            phase = _refine(instrumented, cfg, phase)
        elif rng is not None:
            kkt = _residual(p, p.g, phase.r, phase.hr, phase.lambda_)
            phase = dataclasses.replace(phase, kkt=kkt)
        if _solved(phase, cfg) or (rng is None and not phase.breakdown):
            break
        _log.warning(
            f"Krylov attempt {attempt + 1} failed after {phase.iterations} "
            f"steps with residual {phase.kkt:.3e}"
        )

    assert phase is not None
    if not phase.converged and phase.breakdown:
        raise NumericalFailureError(
            "invariant Krylov subspace reached before convergence",
            kkt_residual=phase.kkt,
            iterations=phase.iterations,
            perturbation=sigma,
        )
    if not phase.converged:
        _log.warning(
            f"Krylov engine stopped after {phase.iterations} iterations "
            f"with residual {phase.kkt:.3e} > {cfg.tol:.1e}"
        )
    if phase.breakdown and sigma == 0:
        _log.info(
            f"Krylov space invariant after {phase.iterations} steps: the "
            "solution is global on that subspace only, set perturb_seed "
            "to explore the rest"
        )

    r = phase.r / np.linalg.norm(phase.r)
    report = SolveReport(
        solver="krylov",
        objective=p.q_quadratic(r, phase.hr),
        lambda_star=phase.lambda_,
        kkt_residual=phase.kkt,
        matvecs=counter.hessian_applies,
        iterations=phase.iterations,
        wall_time=time.perf_counter() - start_time,
        converged=phase.converged,
        kappa_estimate=_kappa(phase.ritz, phase.lambda_),
        hard_case=phase.hard_case,
        restarts=phase.restarts,
        perturbation=sigma,
        history=phase.history,
        diagnostics=dict(invariant_subspace=phase.breakdown),
    )
    _log.info(
        f"Krylov engine: objective {report.objective:.10g} after "
        f"{report.iterations} iterations, {report.matvecs} matvecs"
    )
    return SphereVec(r), report


@dataclass
class KrylovSolver:
    cfg: KrylovConfig = field(default_factory=KrylovConfig)
    name: str = "krylov"

    def solve(self, problem: SclsProblem) -> tuple[SphereVec, SolveReport]:
        return krylov_solve(problem, self.cfg)
