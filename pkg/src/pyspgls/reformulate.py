"""Game instances and the spherical least squares reformulation.

A game instance :class:`Dataset` holds the data matrix X, the true labels y,
the labels z the data provider aims at and the manipulation penalty gamma.
The learner problem reads, with the constraint ``w.T @ w == gamma * alpha``:

.. math::

    v(w, \\alpha) = \\left\\| \\frac{\\alpha z + X w}{1 + \\alpha}
    - y \\right\\|^2

The change of variables of :func:`map_to_sphere` turns it into the least
squares problem :math:`\\min \\|\\hat L r - (y - z/2)\\|^2` over the unit
sphere; :func:`recover_spg` goes back.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np
import numpy.typing as npt

from .exceptions import DegenerateApexError, InvalidArgumentError
from .linops import (
    DenseVector,
    ScaledAugmentedOperator,
    SparseMatrix,
    as_vector,
)

if TYPE_CHECKING:
    from .data import ManipulationRule

_log = logging.getLogger(__name__)

SPHERE_TOL = 1e-10
FEASIBILITY_TOL = 1e-9
POLE_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class Dataset:
    X: SparseMatrix
    y: DenseVector
    z: DenseVector
    gamma: float

    def __post_init__(self) -> None:
        m, n = self.X.shape
        if m < 1 or n < 1:
            raise InvalidArgumentError(f"empty data matrix of shape {(m, n)}")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidArgumentError(f"gamma must be > 0, got {self.gamma}")
        for name in ("y", "z"):
            vec = as_vector(getattr(self, name), m, name=name).copy()
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)

    @classmethod
    def from_arrays(
        cls, X: Any, y: Any, z: Any, gamma: float
    ) -> Dataset:
        """Builds a dataset from a dense array or any scipy sparse matrix."""
        if isinstance(X, SparseMatrix):
            matrix = X
        elif hasattr(X, "tocoo"):
            matrix = SparseMatrix.from_scipy(X)
        else:
            matrix = SparseMatrix.from_dense(np.atleast_2d(X))
        return cls(matrix, y, z, float(gamma))

    @property
    def m(self) -> int:
        return self.X.rows

    @property
    def n(self) -> int:
        return self.X.cols


@dataclass(frozen=True, eq=False)
class Samples:
    """Features and labels before the game is set up.

    Loaders and generators return samples; the provider labels z come from
    a :class:`~pyspgls.data.ManipulationRule` unless the file carries them,
    and gamma is a run parameter.
    """

    X: SparseMatrix
    y: DenseVector
    z: None | DenseVector = None

    def __post_init__(self) -> None:
        m, _ = self.X.shape
        y = as_vector(self.y, m, name="y").copy()
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if self.z is not None:
            z = as_vector(self.z, m, name="z").copy()
            z.setflags(write=False)
            object.__setattr__(self, "z", z)

    @property
    def m(self) -> int:
        return self.X.rows

    @property
    def n(self) -> int:
        return self.X.cols

    def with_rule(self, rule: ManipulationRule) -> Samples:
        return Samples(self.X, self.y, rule.apply(self.y))

    def with_gamma(self, gamma: float) -> Dataset:
        if self.z is None:
            raise InvalidArgumentError(
                "samples carry no provider labels, apply a rule first"
            )
        return Dataset(self.X, self.y, self.z, float(gamma))

    def take(self, rows: Any) -> Samples:
        rows = np.asarray(rows, dtype=np.int64)
        X = SparseMatrix(self.X.csr[rows])
        z = None if self.z is None else self.z[rows]
        return Samples(X, self.y[rows], z)


@dataclass(frozen=True, eq=False)
class SpgPoint:
    """A learner predictor w with its coupled scalar alpha = w.T w / gamma."""

    w: DenseVector
    alpha: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", as_vector(self.w, name="w"))
        if not math.isfinite(self.alpha):
            raise InvalidArgumentError("alpha must be finite")

    @classmethod
    def from_predictor(cls, w: Any, gamma: float) -> SpgPoint:
        w = as_vector(w, name="w")
        return cls(w, float(w @ w) / gamma)

    def check(self, gamma: float, tol: float = FEASIBILITY_TOL) -> None:
        if self.alpha < 0:
            raise InvalidArgumentError(f"alpha must be >= 0, got {self.alpha}")
        ww = float(self.w @ self.w)
        if abs(ww - gamma * self.alpha) > tol * max(1.0, ww):
            raise InvalidArgumentError(
                f"infeasible point: w.T w = {ww:.6g} "
                f"but gamma * alpha = {gamma * self.alpha:.6g}"
            )


@dataclass(frozen=True, eq=False)
class SphereVec:
    """A point r = (w_tilde, alpha_tilde) of the unit sphere in R^(n+1)."""

    r: DenseVector

    def __post_init__(self) -> None:
        r = as_vector(self.r, name="r")
        if r.shape[0] < 1:
            raise InvalidArgumentError("sphere vector must not be empty")
        if abs(float(r @ r) - 1.0) > SPHERE_TOL:
            raise InvalidArgumentError(
                f"r is off the unit sphere: ||r||^2 = {float(r @ r):.12g}"
            )
        object.__setattr__(self, "r", r)

    @classmethod
    def normalize(cls, v: Any) -> SphereVec:
        v = as_vector(v, name="v")
        norm = float(np.linalg.norm(v))
        if norm == 0:
            raise InvalidArgumentError("cannot normalize the zero vector")
        return cls(v / norm)

    @classmethod
    def apex(cls, size: int) -> SphereVec:
        r = np.zeros(size)
        r[-1] = 1.0
        return cls(r)

    @property
    def w_tilde(self) -> DenseVector:
        return self.r[:-1]

    @property
    def alpha_tilde(self) -> float:
        return float(self.r[-1])

    def __len__(self) -> int:
        return int(self.r.shape[0])


@dataclass(frozen=True, eq=False)
class SclsProblem:
    """q(r) = ||lhat r - rhs||^2 = r.T H r + 2 g.T r + p, with H = lhat.T lhat

    H is never formed; :meth:`hessian_apply` goes through lhat twice.
    """

    lhat: ScaledAugmentedOperator
    rhs: DenseVector
    g: DenseVector
    p: float

    @property
    def dim(self) -> int:
        return self.lhat.shape[1]

    @property
    def g_norm(self) -> float:
        return float(np.linalg.norm(self.g))

    def hessian_apply(
        self, r: DenseVector, out: None | DenseVector = None
    ) -> DenseVector:
        return self.lhat.implicit_hessian_apply(r, out=out)

    def q(self, r: DenseVector) -> float:
        residual = self.lhat.apply(r) - self.rhs
        return float(residual @ residual)

    def q_quadratic(
        self, r: DenseVector, hr: None | DenseVector = None
    ) -> float:
        if hr is None:
            hr = self.hessian_apply(r)
        return float(r @ hr + 2 * (self.g @ r) + self.p)

    def euclidean_gradient(
        self, r: DenseVector, hr: None | DenseVector = None
    ) -> DenseVector:
        if hr is None:
            hr = self.hessian_apply(r)
        return 2 * (hr + self.g)

    def multiplier(self, r: DenseVector, hr: DenseVector) -> float:
        """Least squares estimate of lambda in (H + lambda I) r = -g."""
        return -float(r @ (hr + self.g)) / float(r @ r)

    def kkt_residual(
        self, r: DenseVector, lam: float, hr: None | DenseVector = None
    ) -> float:
        if hr is None:
            hr = self.hessian_apply(r)
        residual = hr + lam * r + self.g
        return float(np.linalg.norm(residual)) / max(1.0, self.g_norm)

    def dense_hessian(self) -> npt.NDArray[np.float64]:
        dense = self.lhat.to_dense()
        return dense.T @ dense


def build_scls(d: Dataset) -> SclsProblem:
    lhat = ScaledAugmentedOperator.from_game(d.X, d.z, d.gamma)
    rhs = d.y - d.z / 2
    g = lhat.apply_transpose(-rhs)
    p = float(rhs @ rhs)
    if not (np.all(np.isfinite(g)) and math.isfinite(p)):
        raise InvalidArgumentError("reformulation overflowed")
    for vec in (rhs, g):
        vec.setflags(write=False)
    return SclsProblem(lhat, rhs, g, p)


def predict(X: SparseMatrix, w: Any) -> DenseVector:
    """Learner predictions on (unmanipulated) samples."""
    return X.matvec(as_vector(w, X.cols, name="w"))


def manipulated_predictions(d: Dataset, pt: SpgPoint) -> DenseVector:
    """Predictions of the learner on the optimally manipulated data."""
    return (pt.alpha * d.z + d.X.matvec(pt.w)) / (1 + pt.alpha)


def eval_spg_objective(d: Dataset, pt: SpgPoint) -> float:
    pt.check(d.gamma)
    if pt.w.shape[0] != d.n:
        raise InvalidArgumentError(f"w has length {pt.w.shape[0]}, not {d.n}")
    residual = manipulated_predictions(d, pt) - d.y
    return float(residual @ residual)


def spg_objective_of_w(d: Dataset, w: Any) -> float:
    """The learner objective as a function of w alone.

    This is the fractional form obtained after eliminating the data
    provider's best response with the Sherman-Morrison formula.
    """
    w = as_vector(w, d.n, name="w")
    ww = float(w @ w) / d.gamma
    residual = (ww * d.z + d.X.matvec(w)) / (1 + ww) - d.y
    return float(residual @ residual)


def eval_scls_objective(p: SclsProblem, r: SphereVec) -> float:
    if len(r) != p.dim:
        raise InvalidArgumentError(f"r has length {len(r)}, not {p.dim}")
    return p.q(r.r)


def apex_value(d: Dataset) -> float:
    """Objective at the apex (0, ..., 0, 1), equal to ||z - y||^2."""
    diff = d.z - d.y
    return float(diff @ diff)


def map_to_sphere(d: Dataset, pt: SpgPoint) -> SphereVec:
    pt.check(d.gamma)
    alpha = pt.alpha
    r = np.empty(pt.w.shape[0] + 1)
    r[:-1] = 2 * pt.w / (math.sqrt(d.gamma) * (alpha + 1))
    r[-1] = (alpha - 1) / (alpha + 1)
    # absorb the rounding of the feasibility constraint
    return SphereVec(r / np.linalg.norm(r))


def recover_spg(
    d: Dataset, r: SphereVec, pole_eps: float = POLE_EPS
) -> SpgPoint:
    if len(r) != d.n + 1:
        raise InvalidArgumentError(f"r has length {len(r)}, not {d.n + 1}")
    alpha_tilde = r.alpha_tilde
    if abs(1 - alpha_tilde) < pole_eps:
        value = eval_scls_objective(build_scls(d), r)
        raise DegenerateApexError(
            f"alpha_tilde = {alpha_tilde!r} is on the apex, "
            f"no finite predictor (objective {value:.6g})",
            value=value,
            alpha_tilde=alpha_tilde,
        )
    w = math.sqrt(d.gamma) * r.w_tilde / (1 - alpha_tilde)
    # w.T w / gamma is the same quantity as (1 + at) / (1 - at) on the
    # sphere, the former is exactly feasible in floating point
    alpha = float(w @ w) / d.gamma
    return SpgPoint(w, alpha)
