from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

import numpy as np
import pandas as pd
from pyspgls.data import (
    PRESETS,
    ManipulationRule,
    SyntheticSpec,
    from_least_squares,
    generate,
    load_csv,
    load_libsvm,
    make_hard_case,
    one_hot,
    preset_rule,
    train_test_split,
    write_atomic,
    write_libsvm,
)
from pyspgls.exceptions import (
    DataFormatError,
    EmptyMatrixError,
    InvalidArgumentError,
)
from pyspgls.oracle import EigenForm
from pyspgls.reformulate import build_scls


def test_quantile_floor() -> None:
    y = np.array([5.0, 1.0, 4.0, 2.0, 3.0])
    # index min(ceil(0.25 * 5), 4) = 2 in the sorted labels
    z = ManipulationRule.quantile_floor(0.25).apply(y)
    assert np.array_equal(z, [5.0, 3.0, 4.0, 3.0, 3.0])
    # the index never runs past the last label
    z = ManipulationRule.quantile_floor(0.99).apply(y)
    assert np.array_equal(z, [5.0] * 5)


def test_additive_rules() -> None:
    y = np.array([1.0, 3.0])
    assert np.array_equal(ManipulationRule.additive(2).apply(y), [3.0, 5.0])
    floor = ManipulationRule.additive_floor_zero(-2)
    assert np.array_equal(floor.apply(y), [0.0, 1.0])
    assert floor.describe() == "additive_floor_zero(delta=-2)"


def test_invalid_rules() -> None:
    with pytest.raises(InvalidArgumentError):
        ManipulationRule.quantile_floor(1.0)
    with pytest.raises(InvalidArgumentError):
        ManipulationRule("additive", quantile=0.5)
    with pytest.raises(InvalidArgumentError):
        ManipulationRule.additive(float("inf"))
    with pytest.raises(InvalidArgumentError):
        ManipulationRule("shift", delta=1.0)  # type: ignore[arg-type]


def test_presets() -> None:
    assert preset_rule("building", 1) == ManipulationRule.additive(40)
    assert preset_rule("insurance").kind == "additive_floor_zero"
    assert set(PRESETS) == {"building", "insurance", "blog", "wine"}
    with pytest.raises(InvalidArgumentError, match="unknown preset"):
        preset_rule("wine", 1)
    with pytest.raises(InvalidArgumentError, match="unknown preset"):
        preset_rule("housing")


def test_spec_serialization(tmp_path: Path) -> None:
    spec = SyntheticSpec(20, 5, density=0.3, seed=7)
    assert spec.noise_level == 0.5
    back = SyntheticSpec.loads(spec.dumps())
    assert back.m == 20 and back.n == 5 and back.seed == 7
    assert back.density == 0.3
    assert back.rule == spec.rule
    assert back.dumps() == spec.dumps()
    assert back.digest == spec.digest

    spec.write(tmp_path / "spec.ini")
    assert SyntheticSpec.read(tmp_path / "spec.ini").digest == spec.digest
    assert SyntheticSpec(20, 5, seed=8).digest != spec.digest

    additive = SyntheticSpec(4, 2, rule=ManipulationRule.additive(1.5))
    assert SyntheticSpec.loads(additive.dumps()).rule == additive.rule


def test_invalid_spec() -> None:
    with pytest.raises(InvalidArgumentError):
        SyntheticSpec(0, 5)
    with pytest.raises(InvalidArgumentError):
        SyntheticSpec(5, 5, density=0.0)
    with pytest.raises(InvalidArgumentError):
        SyntheticSpec(5, 5, noise=-1.0)
    with pytest.raises(InvalidArgumentError, match="invalid synthetic"):
        SyntheticSpec.loads("[synthetic]\nm = 3\n")


def test_malformed_spec_file(tmp_path: Path) -> None:
    path = tmp_path / "spec.ini"
    path.write_text("m = 30\nn = 6\n")
    with pytest.raises(InvalidArgumentError, match="invalid synthetic"):
        SyntheticSpec.read(path)
    path.write_text("[synthetic]\nm = 30\nm = 40\n")
    with pytest.raises(InvalidArgumentError, match="invalid synthetic"):
        SyntheticSpec.read(path)


def test_generate_is_deterministic() -> None:
    spec = SyntheticSpec(30, 6, seed=2)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.X.to_dense(), b.X.to_dense())
    assert np.array_equal(a.y, b.y)
    assert a.z is not None
    assert np.all(a.z >= a.y)
    other = generate(SyntheticSpec(30, 6, seed=3))
    assert not np.array_equal(a.y, other.y)


def test_generate_sparse() -> None:
    samples = generate(SyntheticSpec(200, 50, density=0.1, seed=0))
    assert samples.X.shape == (200, 50)
    assert abs(samples.X.density - 0.1) < 0.02
    with pytest.raises(EmptyMatrixError):
        generate(SyntheticSpec(3, 3, density=0.01))


def test_generate_cached(tmp_path: Path) -> None:
    spec = SyntheticSpec(40, 10, density=0.2, seed=4)
    first = generate(spec, cached=True, cache_dir=tmp_path)
    assert len(list(tmp_path.glob(f"{spec.digest}_*.parquet"))) == 2
    second = generate(spec, cached=True, cache_dir=tmp_path)
    assert np.array_equal(first.X.to_dense(), second.X.to_dense())
    assert np.array_equal(first.y, second.y)
    assert second.z is not None and first.z is not None
    assert np.array_equal(first.z, second.z)
    assert np.array_equal(generate(spec).y, second.y)


def test_generate_cached_concurrently(tmp_path: Path) -> None:
    spec = SyntheticSpec(60, 12, density=0.3, seed=7)
    with ThreadPoolExecutor(4) as executor:
        runs = list(
            executor.map(
                lambda _: generate(spec, cached=True, cache_dir=tmp_path),
                range(8),
            )
        )
    expected = generate(spec)
    for samples in runs:
        assert np.array_equal(samples.X.to_dense(), expected.X.to_dense())
        assert np.array_equal(samples.y, expected.y)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        f"{spec.digest}_X.parquet",
        f"{spec.digest}_y.parquet",
    ]


def test_write_atomic(tmp_path: Path) -> None:
    path = tmp_path / "nested" / "out.txt"
    write_atomic(path, lambda tmp: tmp.write_text("done"))
    assert path.read_text() == "done"

    def fail(tmp: Path) -> None:
        tmp.write_text("partial")
        raise OSError("disk full")

    with pytest.raises(OSError):
        write_atomic(path, fail)
    assert path.read_text() == "done"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


def test_load_csv(tmp_path: Path) -> None:
    path = tmp_path / "game.csv"
    path.write_text("a,b,label,target\n1,2,3,4\n5, 6,7,8\n0,1,2,2\n")
    samples = load_csv(path, "label", z_col="target")
    assert np.array_equal(samples.X.to_dense(), [[1, 2], [5, 6], [0, 1]])
    assert np.array_equal(samples.y, [3, 7, 2])
    assert samples.z is not None
    assert np.array_equal(samples.z, [4, 8, 2])

    by_index = load_csv(path, 2, rule=ManipulationRule.additive(1))
    assert by_index.X.shape == (3, 3)
    assert by_index.z is not None
    assert np.array_equal(by_index.z, [4, 8, 3])


def test_load_csv_categorical(tmp_path: Path) -> None:
    path = tmp_path / "game.csv"
    path.write_text("x,color,y\n1,red,1\n2,blue,2\n3,red,3\n")
    samples = load_csv(
        path, "y", rule=ManipulationRule.additive(0), categorical=["color"]
    )
    assert samples.X.shape == (3, 3)
    assert np.array_equal(samples.X.to_dense()[:, 0], [1, 2, 3])
    assert np.array_equal(samples.X.to_dense()[:, 1:].sum(axis=1), [1, 1, 1])


def test_load_csv_errors(tmp_path: Path) -> None:
    path = tmp_path / "bad.csv"
    path.write_text("a,b,label\n1,2,3\n4,,6\n")
    with pytest.raises(DataFormatError, match="missing value") as info:
        load_csv(path, "label", rule=ManipulationRule.additive(1))
    assert (info.value.row, info.value.col) == (2, 2)

    path.write_text("a,b,label\n1,2,3\n4,5,x\n")
    with pytest.raises(DataFormatError) as info:
        load_csv(path, "label", rule=ManipulationRule.additive(1))
    assert (info.value.row, info.value.col) == (2, 3)

    with pytest.raises(InvalidArgumentError, match="exactly one"):
        load_csv(path, "label")
    path.write_text("a,b,label\n1,2,3\n")
    with pytest.raises(InvalidArgumentError, match="no column"):
        load_csv(path, "missing", rule=ManipulationRule.additive(1))
    path.write_text("")
    with pytest.raises(DataFormatError, match="empty"):
        load_csv(path, "label", rule=ManipulationRule.additive(1))


def test_load_libsvm(tmp_path: Path) -> None:
    path = tmp_path / "game.svm"
    path.write_text("1.5 1:2 3:4\n\n-1 2:1  # comment\n2\n")
    samples = load_libsvm(path)
    assert np.array_equal(samples.X.to_dense(), [[2, 0, 4], [0, 1, 0], [0] * 3])
    assert np.array_equal(samples.y, [1.5, -1, 2])
    assert samples.z is None
    assert load_libsvm(path, n_features=5).X.shape == (3, 5)
    with pytest.raises(DataFormatError, match="exceeds"):
        load_libsvm(path, n_features=2)


@pytest.mark.parametrize(
    "content, message",
    [
        ("1 2:1 1:3\n", "indices must increase"),
        ("abc 1:2\n", "invalid label"),
        ("1 0:2\n", "invalid entry"),
        ("1 1:nan\n", "invalid entry"),
        ("1 1\n", "invalid entry"),
        ("# nothing\n", "no samples"),
    ],
)
def test_load_libsvm_errors(tmp_path: Path, content: str, message: str) -> None:
    path = tmp_path / "bad.svm"
    path.write_text(content)
    with pytest.raises(DataFormatError, match=message):
        load_libsvm(path)


def test_write_libsvm(tmp_path: Path) -> None:
    samples = generate(SyntheticSpec(15, 8, density=0.3, seed=1))
    path = tmp_path / "out.svm"
    write_libsvm(samples, path)
    back = load_libsvm(path, n_features=8)
    assert np.array_equal(back.X.to_dense(), samples.X.to_dense())
    assert np.array_equal(back.y, samples.y)


def test_one_hot() -> None:
    frame = pd.DataFrame(dict(a=[1, 2], kind=["x", "y"]))
    assert list(one_hot(frame, ["kind"]).columns) == ["a", "kind_x", "kind_y"]
    with pytest.raises(InvalidArgumentError):
        one_hot(frame, ["other"])


def test_train_test_split() -> None:
    samples = generate(SyntheticSpec(10, 2, seed=0))
    train, test = train_test_split(samples, 0.2, seed=1)
    assert (train.m, test.m) == (8, 2)
    assert sorted(np.concatenate([train.y, test.y])) == sorted(samples.y)
    with pytest.raises(InvalidArgumentError):
        train_test_split(samples, 0.01)


def test_from_least_squares() -> None:
    rng = np.random.default_rng(0)
    lhat = rng.standard_normal((6, 3))
    rhs = rng.standard_normal(6)
    for gamma in (4.0, 0.1):
        p = build_scls(from_least_squares(lhat, rhs, gamma))
        assert np.allclose(p.lhat.to_dense(), lhat)
        assert np.allclose(p.rhs, rhs)
        assert np.allclose(p.g, -lhat.T @ rhs)
    with pytest.raises(InvalidArgumentError):
        from_least_squares(np.ones((3, 1)), np.ones(3))


def test_make_hard_case() -> None:
    d = make_hard_case(6, seed=2, pseudo_norm=0.3, gamma=0.1)
    assert (d.m, d.n, d.gamma) == (7, 6, 0.1)
    form = EigenForm.from_problem(build_scls(d))
    assert form.d_min == pytest.approx(1.0)
    assert abs(form.g_tilde[0]) <= 1e-10
    assert form.pseudo_solution_norm() == pytest.approx(0.3)
    with pytest.raises(InvalidArgumentError):
        make_hard_case(0)
    with pytest.raises(InvalidArgumentError):
        make_hard_case(3, pseudo_norm=1.0)
