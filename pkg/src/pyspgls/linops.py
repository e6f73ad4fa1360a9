"""Matrix access layer.

The solvers only ever need products with
:math:`\\hat L = (\\frac{\\sqrt\\gamma}{2} X \\;\\; \\frac{z}{2})` and its
transpose, hence the implicit :math:`H = \\hat L^T \\hat L`. Nothing in here
materializes :math:`H`.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Any, Iterator

from scipy import sparse
from typing_extensions import TypeAlias

import numpy as np
import numpy.typing as npt

from .exceptions import InvalidArgumentError

_log = logging.getLogger(__name__)

DenseVector: TypeAlias = "npt.NDArray[np.float64]"


def as_vector(
    values: Any, size: None | int = None, name: str = "vector"
) -> DenseVector:
    """Coerces to a finite float64 vector, checking its length if required."""
    vec = np.ascontiguousarray(values, dtype=np.float64)
    if vec.ndim != 1:
        vec = vec.reshape(-1)
    if size is not None and vec.shape[0] != size:
        raise InvalidArgumentError(
            f"{name} has length {vec.shape[0]}, expected {size}"
        )
    if not np.all(np.isfinite(vec)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return vec


def _frozen(vec: DenseVector) -> DenseVector:
    vec.setflags(write=False)
    return vec


@dataclass
class MatvecCounter:
    """Instrumentation for the cost model: one unit per stored entry read."""

    applies: int = 0
    adjoint_applies: int = 0
    entries_touched: int = 0

    @property
    def hessian_applies(self) -> int:
        return min(self.applies, self.adjoint_applies)

    def reset(self) -> None:
        self.applies = self.adjoint_applies = self.entries_touched = 0


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Row-compressed matrix with validated, canonical storage.

    Column indices are sorted within each row and no (row, col) pair is
    stored twice. Duplicates are rejected at construction, never summed.
    """

    csr: sparse.csr_matrix

    def __post_init__(self) -> None:
        csr = self.csr
        if not isinstance(csr, sparse.csr_matrix):
            raise InvalidArgumentError("expected a scipy csr_matrix")
        csr.check_format(full_check=True)
        if not csr.has_canonical_format:
            raise InvalidArgumentError(
                "csr storage must have sorted indices and no duplicates"
            )
        if not np.all(np.isfinite(csr.data)):
            raise InvalidArgumentError("matrix has non-finite entries")
        if csr.data.dtype != np.float64:
            object.__setattr__(self, "csr", csr.astype(np.float64))
        for array in (self.csr.data, self.csr.indices, self.csr.indptr):
            array.setflags(write=False)

    @classmethod
    def from_triplets(
        cls,
        rows: Any,
        cols: Any,
        values: Any,
        shape: tuple[int, int],
    ) -> SparseMatrix:
        m, n = shape
        if m < 0 or n < 0:
            raise InvalidArgumentError(f"invalid shape {shape}")
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        values = as_vector(values, rows.shape[0], name="values")
        if cols.shape[0] != rows.shape[0]:
            raise InvalidArgumentError("rows and cols differ in length")
        if rows.size > 0:
            if rows.min() < 0 or rows.max() >= m:
                raise InvalidArgumentError("row index out of range")
            if cols.min() < 0 or cols.max() >= n:
                raise InvalidArgumentError("column index out of range")
        linear = rows * n + cols
        unique, counts = np.unique(linear, return_counts=True)
        if (counts > 1).any():
            first = int(unique[np.argmax(counts > 1)])
            raise InvalidArgumentError(
                f"duplicate entry at ({first // n}, {first % n})"
            )
        csr = sparse.csr_matrix((values, (rows, cols)), shape=(m, n))
        csr.sort_indices()
        return cls(csr)

    @classmethod
    def from_dense(cls, array: Any) -> SparseMatrix:
        dense = np.asarray(array, dtype=np.float64)
        if dense.ndim != 2:
            raise InvalidArgumentError("expected a two-dimensional array")
        rows, cols = np.nonzero(dense)
        return cls.from_triplets(rows, cols, dense[rows, cols], dense.shape)

    @classmethod
    def from_scipy(cls, matrix: Any) -> SparseMatrix:
        coo = sparse.coo_matrix(matrix)
        return cls.from_triplets(coo.row, coo.col, coo.data, coo.shape)

    @property
    def shape(self) -> tuple[int, int]:
        m, n = self.csr.shape
        return int(m), int(n)

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    @property
    def density(self) -> float:
        m, n = self.shape
        return self.nnz / (m * n) if m * n > 0 else 0.0

    def iter_row(self, i: int) -> Iterator[tuple[int, float]]:
        start, stop = self.csr.indptr[i], self.csr.indptr[i + 1]
        indices = self.csr.indices[start:stop]
        for j, v in zip(indices, self.csr.data[start:stop]):
            yield int(j), float(v)

    def to_dense(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.csr.toarray(), dtype=np.float64)

    def matvec(self, x: DenseVector) -> DenseVector:
        return np.asarray(self.csr @ x, dtype=np.float64)

    def rmatvec(self, u: DenseVector) -> DenseVector:
        # the transpose of a csr matrix is a csc view on the same buffers,
        # its product is a scatter pass over the stored entries
        return np.asarray(self.csr.T @ u, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ScaledAugmentedOperator:
    """The operator :math:`[\\,s X \\mid c z\\,]` of shape m x (n+1).

    With ``scale = sqrt(gamma)/2`` and ``column_scale = 1/2`` this is the
    :math:`\\hat L` of the spherical least squares reformulation.

    Instances are immutable and may be shared across threads, unless a
    :class:`MatvecCounter` is attached (see :meth:`instrumented`).
    """

    base: SparseMatrix
    column: DenseVector
    scale: float
    column_scale: float = 0.5
    counter: None | MatvecCounter = None

    def __post_init__(self) -> None:
        column = as_vector(self.column, self.base.rows, name="column").copy()
        object.__setattr__(self, "column", _frozen(column))
        if not math.isfinite(self.scale * self.column_scale):
            raise InvalidArgumentError("operator scales must be finite")

    @classmethod
    def from_game(
        cls, X: SparseMatrix, z: Any, gamma: float
    ) -> ScaledAugmentedOperator:
        return cls(X, as_vector(z, X.rows, name="z"), math.sqrt(gamma) / 2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.rows, self.base.cols + 1

    def instrumented(self) -> ScaledAugmentedOperator:
        """A copy of the operator counting every product in a fresh counter."""
        return dataclasses.replace(self, counter=MatvecCounter())

    def apply(
        self, r: DenseVector, out: None | DenseVector = None
    ) -> DenseVector:
        m, n1 = self.shape
        r = as_vector(r, n1, name="r")
        if out is None:
            out = np.empty(m)
        elif out.shape != (m,):
            raise InvalidArgumentError(f"output storage must have shape {m}")
        np.multiply(self.base.matvec(r[:-1]), self.scale, out=out)
        out += (self.column_scale * r[-1]) * self.column
        if self.counter is not None:
            self.counter.applies += 1
            self.counter.entries_touched += self.base.nnz + m
        return out

    def apply_transpose(
        self, u: DenseVector, out: None | DenseVector = None
    ) -> DenseVector:
        m, n1 = self.shape
        u = as_vector(u, m, name="u")
        if out is None:
            out = np.empty(n1)
        elif out.shape != (n1,):
            raise InvalidArgumentError(f"output storage must have shape {n1}")
        np.multiply(self.base.rmatvec(u), self.scale, out=out[:-1])
        out[-1] = self.column_scale * float(self.column @ u)
        if self.counter is not None:
            self.counter.adjoint_applies += 1
            self.counter.entries_touched += self.base.nnz + m
        return out

    def implicit_hessian_apply(
        self, r: DenseVector, out: None | DenseVector = None
    ) -> DenseVector:
        return self.apply_transpose(self.apply(r), out=out)

    def to_dense(self) -> npt.NDArray[np.float64]:
        dense = np.empty(self.shape)
        dense[:, :-1] = self.scale * self.base.to_dense()
        dense[:, -1] = self.column_scale * self.column
        return dense


def apply(op: ScaledAugmentedOperator, r: DenseVector) -> DenseVector:
    return op.apply(r)


def apply_transpose(
    op: ScaledAugmentedOperator, u: DenseVector
) -> DenseVector:
    return op.apply_transpose(u)


def implicit_hessian_apply(
    op: ScaledAugmentedOperator, r: DenseVector
) -> DenseVector:
    return op.implicit_hessian_apply(r)
