"""Datasets: synthetic generation, file formats and label manipulation.

The data provider's target labels z are derived from the true labels y by a
:class:`ManipulationRule`. Files never carry the manipulation penalty gamma,
which is a run parameter (see :meth:`Samples.with_gamma`).
"""

from __future__ import annotations

import configparser
import hashlib
import io
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from typing_extensions import Literal

import numpy as np
import numpy.typing as npt
import pandas as pd

from .exceptions import DataFormatError, EmptyMatrixError, InvalidArgumentError
from .linops import SparseMatrix
from .reformulate import Dataset, Samples

_log = logging.getLogger(__name__)

RuleKind = Literal["quantile_floor", "additive", "additive_floor_zero"]

DENSE_NOISE = 0.1
SPARSE_NOISE = 0.5


@dataclass(frozen=True)
class ManipulationRule:
    """How the data provider shifts the true labels.

    - ``quantile_floor``: z_i = max(y_i, y_q), with y_q the lower empirical
      quantile, i.e. the sorted labels at 0-based index min(ceil(q m), m - 1)
    - ``additive``: z_i = y_i + delta
    - ``additive_floor_zero``: z_i = max(y_i + delta, 0)
    """

    kind: RuleKind
    delta: None | float = None
    quantile: None | float = None

    def __post_init__(self) -> None:
        if self.kind == "quantile_floor":
            if self.quantile is None or self.delta is not None:
                raise InvalidArgumentError("quantile_floor takes a quantile")
            if not 0 < self.quantile < 1:
                raise InvalidArgumentError(
                    f"quantile must be in (0, 1), got {self.quantile}"
                )
        elif self.kind in ("additive", "additive_floor_zero"):
            if self.delta is None or self.quantile is not None:
                raise InvalidArgumentError(f"{self.kind} takes a delta")
            if not math.isfinite(self.delta):
                raise InvalidArgumentError("delta must be finite")
        else:
            raise InvalidArgumentError(f"unknown rule {self.kind!r}")

    @classmethod
    def quantile_floor(cls, q: float = 0.25) -> ManipulationRule:
        return cls("quantile_floor", quantile=q)

    @classmethod
    def additive(cls, delta: float) -> ManipulationRule:
        return cls("additive", delta=delta)

    @classmethod
    def additive_floor_zero(cls, delta: float) -> ManipulationRule:
        return cls("additive_floor_zero", delta=delta)

    def apply(self, y: Any) -> npt.NDArray[np.float64]:
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "quantile_floor":
            assert self.quantile is not None
            m = y.shape[0]
            index = min(math.ceil(self.quantile * m), m - 1)
            floor = np.sort(y)[index]
            return np.maximum(y, floor)
        assert self.delta is not None
        if self.kind == "additive":
            return y + self.delta
        return np.maximum(y + self.delta, 0.0)

    def describe(self) -> str:
        if self.kind == "quantile_floor":
            return f"quantile_floor(q={self.quantile})"
        return f"{self.kind}(delta={self.delta})"


# Manipulations of the real datasets, two strengths each. The red wine
# protocol thresholds the quality label; quantile_floor approximates it.
PRESETS: dict[str, tuple[ManipulationRule, ...]] = {
    "building": (
        ManipulationRule.additive(20),
        ManipulationRule.additive(40),
    ),
    "insurance": (
        ManipulationRule.additive_floor_zero(-100),
        ManipulationRule.additive_floor_zero(-300),
    ),
    "blog": (
        ManipulationRule.additive(5),
        ManipulationRule.additive(10),
    ),
    "wine": (ManipulationRule.quantile_floor(0.25),),
}


def preset_rule(name: str, variant: int = 0) -> ManipulationRule:
    try:
        return PRESETS[name][variant]
    except (KeyError, IndexError):
        raise InvalidArgumentError(
            f"unknown preset {name!r}/{variant}, "
            f"choose among {sorted(PRESETS)}"
        ) from None


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic regression protocol.

    With ``density == 1`` all entries of X are standard normal and the noise
    is Gaussian with standard deviation ``noise``. Otherwise the number of
    nonzero entries is Binomial(m n, density), their positions are uniform
    without replacement and the noise is uniform on [0, noise].
    """

    m: int
    n: int
    density: float = 1.0
    noise: None | float = None
    seed: int = 0
    rule: ManipulationRule = field(
        default_factory=lambda: ManipulationRule.quantile_floor(0.25)
    )

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise InvalidArgumentError(f"invalid size {self.m} x {self.n}")
        if not 0 < self.density <= 1:
            raise InvalidArgumentError(
                f"density must be in (0, 1], got {self.density}"
            )
        if self.noise is not None and not self.noise >= 0:
            raise InvalidArgumentError("noise must be >= 0")

    @property
    def dense(self) -> bool:
        return self.density == 1

    @property
    def noise_level(self) -> float:
        if self.noise is not None:
            return self.noise
        return DENSE_NOISE if self.dense else SPARSE_NOISE

    def to_config(self) -> configparser.ConfigParser:
        parser = configparser.ConfigParser()
        parser["synthetic"] = {
            "m": str(self.m),
            "n": str(self.n),
            "density": repr(self.density),
            "noise": repr(self.noise_level),
            "seed": str(self.seed),
        }
        parser["rule"] = {
            k: repr(v) if isinstance(v, float) else str(v)
            for k, v in asdict(self.rule).items()
            if v is not None
        }
        return parser

    @classmethod
    def from_config(cls, parser: configparser.ConfigParser) -> SyntheticSpec:
        try:
            section = parser["synthetic"]
            rule_section = parser["rule"] if "rule" in parser else None
            rule = ManipulationRule.quantile_floor(0.25)
            if rule_section is not None:
                rule = ManipulationRule(
                    rule_section["kind"],  # type: ignore[arg-type]
                    delta=rule_section.getfloat("delta"),
                    quantile=rule_section.getfloat("quantile"),
                )
            return cls(
                m=section.getint("m"),
                n=section.getint("n"),
                density=section.getfloat("density", 1.0),
                noise=section.getfloat("noise"),
                seed=section.getint("seed", 0),
                rule=rule,
            )
        except (KeyError, ValueError, TypeError) as e:
            if isinstance(e, InvalidArgumentError):
                raise
            raise InvalidArgumentError(f"invalid synthetic spec: {e}") from e

    def dumps(self) -> str:
        buffer = io.StringIO()
        self.to_config().write(buffer)
        return buffer.getvalue()

    @classmethod
    def loads(cls, text: str) -> SyntheticSpec:
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise InvalidArgumentError(f"invalid synthetic spec: {e}") from e
        return cls.from_config(parser)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def read(cls, path: str | Path) -> SyntheticSpec:
        return cls.loads(Path(path).read_text())

    @property
    def digest(self) -> str:
        return hashlib.md5(self.dumps().encode("utf8")).hexdigest()


def _generate(spec: SyntheticSpec) -> Samples:
    rng = np.random.default_rng(spec.seed)
    m, n = spec.m, spec.n
    if spec.dense:
        dense = rng.standard_normal((m, n))
        beta = rng.standard_normal(n)
        y = dense @ beta + spec.noise_level * rng.standard_normal(m)
        return Samples(SparseMatrix.from_dense(dense), y)

    expected = spec.density * m * n
    if expected < 1:
        raise EmptyMatrixError(
            f"density {spec.density} leaves {expected:.3g} expected entries "
            f"in a {m} x {n} matrix"
        )
    nnz = int(rng.binomial(m * n, spec.density))
    positions = np.sort(rng.choice(m * n, size=nnz, replace=False))
    values = rng.standard_normal(nnz)
    rows, cols = np.divmod(positions, n)
    X = SparseMatrix.from_triplets(rows, cols, values, (m, n))
    beta = rng.standard_normal(n)
    y = X.matvec(beta) + rng.uniform(0, spec.noise_level, size=m)
    return Samples(X, y)


def write_atomic(path: str | Path, write: Callable[[Path], Any]) -> None:
    """Calls ``write`` on a temporary file then moves it to ``path``.

    Concurrent writers of the same path never expose a partial file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, name = tempfile.mkstemp(
        dir=path.parent, prefix=f".{path.name}.", suffix=".tmp"
    )
    os.close(fd)
    tmp = Path(name)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def generate(
    spec: SyntheticSpec,
    cached: bool = False,
    cache_dir: None | str | Path = None,
) -> Samples:
    """Synthetic samples with provider labels; identical for identical specs.

    With ``cached=True`` the samples are stored in the cache directory as
    parquet files named after :attr:`SyntheticSpec.digest`.
    """
    if not cached:
        return _generate(spec).with_rule(spec.rule)

    if cache_dir is None:
        from .config import cache_path

        cache_dir = cache_path
    base = Path(cache_dir) / spec.digest
    matrix_file = base.with_name(f"{spec.digest}_X.parquet")
    labels_file = base.with_name(f"{spec.digest}_y.parquet")
    if matrix_file.exists() and labels_file.exists():
        _log.info(f"Reading samples from {matrix_file}")
        entries = pd.read_parquet(matrix_file)
        labels = pd.read_parquet(labels_file)
        X = SparseMatrix.from_triplets(
            entries["row"].to_numpy(),
            entries["col"].to_numpy(),
            entries["value"].to_numpy(),
            (spec.m, spec.n),
        )
        return Samples(X, labels["y"].to_numpy(), labels["z"].to_numpy())

    samples = _generate(spec).with_rule(spec.rule)
    assert samples.z is not None
    coo = samples.X.csr.tocoo()
    _log.info(f"Saving samples to {matrix_file}")
    entries = pd.DataFrame(dict(row=coo.row, col=coo.col, value=coo.data))
    labels = pd.DataFrame(dict(y=samples.y, z=samples.z))
    # labels last: readers require both files
    write_atomic(matrix_file, entries.to_parquet)
    write_atomic(labels_file, labels.to_parquet)
    return samples


def one_hot(frame: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """Replaces the declared categorical columns by 0/1 indicator columns."""
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InvalidArgumentError(f"unknown categorical columns {missing}")
    return pd.get_dummies(frame, columns=list(columns), dtype=np.float64)


def _numeric(frame: pd.DataFrame, columns: list[str]) -> pd.DataFrame:
    result = frame[columns].apply(pd.to_numeric, errors="coerce")
    bad = result.isna().to_numpy() | ~np.isfinite(
        result.to_numpy(dtype=np.float64, na_value=np.nan)
    )
    if bad.any():
        i, k = (int(k) for k in np.argwhere(bad)[0])
        j = int(frame.columns.get_loc(columns[k]))
        cell = frame.iat[i, j]
        reason = "missing value" if cell.strip() == "" else f"{cell!r}"
        raise DataFormatError(
            f"non-numeric cell at ({i + 1}, {j + 1}): {reason}",
            row=i + 1,
            col=j + 1,
        )
    return result.astype(np.float64)


def load_csv(
    path: str | Path,
    label_col: int | str,
    z_col: None | int | str = None,
    rule: None | ManipulationRule = None,
    categorical: Sequence[str] = (),
) -> Samples:
    """Dense samples from a CSV file with a header row.

    Provider labels come either from the column ``z_col`` or from ``rule``.
    Cells must be numeric once the ``categorical`` columns are one-hot
    encoded; missing values are errors. Row and column numbers in errors
    are 1-based and refer to data rows and to columns of the file.
    """
    if (z_col is None) == (rule is None):
        raise InvalidArgumentError("give exactly one of z_col and rule")
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except pd.errors.ParserError as e:
        raise DataFormatError(f"malformed CSV file {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise DataFormatError(f"empty CSV file {path}") from e

    def column(key: int | str) -> str:
        if isinstance(key, int):
            if not 0 <= key < len(frame.columns):
                raise InvalidArgumentError(f"no column {key} in {path}")
            return str(frame.columns[key])
        if key not in frame.columns:
            raise InvalidArgumentError(f"no column {key!r} in {path}")
        return key

    categorical = list(categorical)
    plain = [str(c) for c in frame.columns if c not in categorical]
    numeric = _numeric(frame, plain)
    if categorical:
        encoded = one_hot(frame[categorical], categorical)
        numeric = pd.concat([numeric, encoded], axis=1)

    label = column(label_col)
    targets = [label] if z_col is None else [label, column(z_col)]
    features = numeric.drop(columns=targets)
    if features.shape[1] == 0 or features.shape[0] == 0:
        raise DataFormatError(f"no samples or features in {path}")

    X = SparseMatrix.from_dense(features.to_numpy(dtype=np.float64))
    y = numeric[label].to_numpy(dtype=np.float64)
    _log.info(f"Loaded {X.rows} samples, {X.cols} features from {path}")
    if z_col is not None:
        return Samples(X, y, numeric[column(z_col)].to_numpy(np.float64))
    assert rule is not None
    return Samples(X, y).with_rule(rule)


def load_libsvm(path: str | Path, n_features: None | int = None) -> Samples:
    """Sparse samples from "label idx:val idx:val ..." lines.

    Indices are 1-based and strictly increasing within a line. Blank lines
    and text after a ``#`` are ignored.
    """
    rows: list[int] = []
    cols: list[int] = []
    values: list[float] = []
    labels: list[float] = []

    with Path(path).open() as fh:
        for line_no, line in enumerate(fh, start=1):
            content = line.split("#", 1)[0].strip()
            if not content:
                continue
            label, *items = content.split()
            try:
                labels.append(float(label))
            except ValueError:
                raise DataFormatError(
                    f"line {line_no}: invalid label {label!r}", line=line_no
                ) from None
            previous = 0
            for item in items:
                index, sep, value = item.partition(":")
                try:
                    j, v = int(index), float(value)
                except ValueError:
                    j, v = 0, math.nan
                if not sep or j < 1 or not math.isfinite(v):
                    raise DataFormatError(
                        f"line {line_no}: invalid entry {item!r}",
                        line=line_no,
                    )
                if j <= previous:
                    raise DataFormatError(
                        f"line {line_no}: indices must increase, "
                        f"got {j} after {previous}",
                        line=line_no,
                    )
                previous = j
                rows.append(len(labels) - 1)
                cols.append(j - 1)
                values.append(v)

    if not labels:
        raise DataFormatError(f"no samples in {path}")
    n = max(cols, default=-1) + 1
    if n_features is not None:
        if n_features < n:
            raise DataFormatError(
                f"index {n} exceeds the declared {n_features} features"
            )
        n = n_features
    X = SparseMatrix.from_triplets(rows, cols, values, (len(labels), max(n, 1)))
    _log.info(f"Loaded {X.rows} samples, {X.cols} features from {path}")
    return Samples(X, np.array(labels))


def write_libsvm(samples: Samples, path: str | Path) -> None:
    """Writes samples so that :func:`load_libsvm` reads them back exactly.

    Provider labels are not written.
    """
    with Path(path).open("w") as fh:
        for i, label in enumerate(samples.y):
            entries = " ".join(
                f"{j + 1}:{v!r}" for j, v in samples.X.iter_row(i)
            )
            fh.write(f"{float(label)!r} {entries}".rstrip() + "\n")


def train_test_split(
    samples: Samples, test_fraction: float = 0.2, seed: int = 0
) -> tuple[Samples, Samples]:
    """Seeded uniform split of the samples."""
    if not 0 < test_fraction < 1:
        raise InvalidArgumentError("test_fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(samples.m)
    n_test = int(round(test_fraction * samples.m))
    if n_test == 0 or n_test == samples.m:
        raise InvalidArgumentError(
            f"cannot split {samples.m} samples with fraction {test_fraction}"
        )
    test, train = np.sort(order[:n_test]), np.sort(order[n_test:])
    return samples.take(train), samples.take(test)


def from_least_squares(lhat: Any, rhs: Any, gamma: float = 4.0) -> Dataset:
    """Game instance whose reformulation has the given matrix and rhs.

    The last column of ``lhat`` becomes z / 2, the others sqrt(gamma)/2 X;
    y follows from rhs = y - z / 2. With the default gamma = 4, X is
    exactly the leading block of ``lhat``.
    """
    lhat = np.atleast_2d(np.asarray(lhat, dtype=np.float64))
    rhs = np.asarray(rhs, dtype=np.float64).reshape(-1)
    if lhat.shape[1] < 2 or lhat.shape[0] != rhs.shape[0]:
        raise InvalidArgumentError(
            f"incompatible shapes {lhat.shape} and {rhs.shape}"
        )
    X = lhat[:, :-1] * (2 / math.sqrt(gamma))
    z = 2 * lhat[:, -1]
    return Dataset(SparseMatrix.from_dense(X), rhs + z / 2, z, gamma)


def make_hard_case(
    n: int,
    seed: int = 0,
    pseudo_norm: float = 0.5,
    spectrum: tuple[float, float] = (1.0, 5.0),
    gamma: float = 4.0,
) -> Dataset:
    """A square instance of size n + 1 in the hard case.

    H = V diag(d) V.T has a simple smallest eigenvalue d_1 and g = V c with
    c_1 = 0, scaled so that ||(H - d_1 I)^+ g|| = pseudo_norm < 1.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if not 0 < pseudo_norm < 1:
        raise InvalidArgumentError("pseudo_norm must be in (0, 1)")
    rng = np.random.default_rng(seed)
    size = n + 1
    low, high = spectrum
    d = np.sort(rng.uniform(low + 0.5 * (high - low) / size, high, size))
    d[0] = low
    V, _ = np.linalg.qr(rng.standard_normal((size, size)))
    c = rng.standard_normal(size)
    c[0] = 0.0
    c *= pseudo_norm / np.linalg.norm(c[1:] / (d[1:] - low))
    sigma = np.sqrt(d)
    lhat = sigma[:, None] * V.T
    # g = -lhat.T rhs = V c
    return from_least_squares(lhat, -c / sigma, gamma)
