import math

import pytest

import numpy as np
from pyspgls.data import (
    SyntheticSpec,
    from_least_squares,
    generate,
    make_hard_case,
)
from pyspgls.exceptions import (
    EigenDecompositionError,
    InvalidArgumentError,
    ProblemSizeError,
)
from pyspgls.oracle import (
    EigenForm,
    OracleSolver,
    brute_force_check,
    oracle_solve,
    solve_dense_sphere,
    solve_spg_small,
)
from pyspgls.reformulate import (
    Dataset,
    build_scls,
    eval_spg_objective,
    map_to_sphere,
    recover_spg,
)

# H = diag(2, 1), g = (-2, 0), p = 2: minimizer (1, 0), lambda* = 0
tiny = Dataset.from_arrays(
    np.array([[math.sqrt(2)], [0.0]]), [math.sqrt(2), 1.0], [0.0, 2.0], 4.0
)
# H = diag(1, 2), g = (0, -0.5): hard case with ||(H - I)^+ g|| = 0.5
hard = from_least_squares(
    np.diag([1.0, math.sqrt(2)]), [0.0, 0.5 / math.sqrt(2)]
)
# g = 0
centered = from_least_squares(np.diag([1.0, math.sqrt(2)]), [0.0, 0.0])


def test_tiny() -> None:
    sol = oracle_solve(build_scls(tiny))
    assert np.allclose(np.abs(sol.r_star.r), [1.0, 0.0], atol=1e-12)
    assert sol.r_star.r[0] > 0
    assert sol.lambda_star == pytest.approx(0.0, abs=1e-12)
    assert sol.value == pytest.approx(0.0, abs=1e-12)
    assert not sol.hard_case
    assert sol.kkt_residual <= 1e-12


def test_hard_case() -> None:
    p = build_scls(hard)
    assert np.allclose(p.g, [0.0, -0.5])
    form = EigenForm.from_problem(p)
    assert form.d_min == pytest.approx(1.0)
    assert form.pseudo_solution_norm() == pytest.approx(0.5)

    sol = oracle_solve(p)
    assert sol.hard_case
    assert sol.lambda_star == pytest.approx(-1.0)
    assert sol.multiplicity == 2
    assert len(sol.alternates) == 1
    assert sol.value == pytest.approx(0.875)
    assert np.allclose(sol.r_star.r, [math.sqrt(0.75), 0.5])
    assert np.allclose(sol.alternates[0].r, [-math.sqrt(0.75), 0.5])
    assert sol.kkt_residual <= 1e-12
    assert brute_force_check(p, 720, refine=4) == pytest.approx(
        sol.value, abs=1e-9
    )


def test_centered() -> None:
    p = build_scls(centered)
    assert np.all(p.g == 0)
    sol = oracle_solve(p)
    assert sol.hard_case
    assert sol.lambda_star == pytest.approx(-1.0)
    assert sol.value == pytest.approx(1.0)
    assert np.allclose(np.abs(sol.r_star.r), [1.0, 0.0])


def test_dense_sphere_random() -> None:
    rng = np.random.default_rng(7)
    for size in (1, 2, 5, 12):
        A = rng.standard_normal((size, size))
        H = (A + A.T) / 2
        g = rng.standard_normal(size)
        sol = solve_dense_sphere(H, g)
        r = sol.r_star.r
        assert np.linalg.norm(H @ r + sol.lambda_star * r + g) <= 1e-9
        assert sol.lambda_star >= -np.linalg.eigvalsh(H)[0] - 1e-9
        # no sampled point of the sphere does better
        samples = rng.standard_normal((500, size))
        samples /= np.linalg.norm(samples, axis=1)[:, None]
        values = np.einsum("ij,jk,ik->i", samples, H, samples)
        values += 2 * samples @ g
        assert sol.value <= values.min() + 1e-10


def test_brute_force_agrees() -> None:
    for seed in range(10):
        for n in (1, 2):
            d = generate(SyntheticSpec(6, n, seed=seed)).with_gamma(0.5)
            p = build_scls(d)
            sol = oracle_solve(p)
            assert brute_force_check(p, 64, refine=6) == pytest.approx(
                sol.value, rel=1e-6, abs=1e-9
            )


def test_brute_force_dimensions() -> None:
    d = generate(SyntheticSpec(6, 3, seed=0)).with_gamma(0.5)
    with pytest.raises(InvalidArgumentError):
        brute_force_check(build_scls(d), 16)


def test_objective_transport() -> None:
    """The learner optimum equals the sphere optimum."""
    rng = np.random.default_rng(11)
    for seed in range(100):
        n = int(rng.integers(1, 49))
        m = int(rng.integers(n + 1, 2 * n + 3))
        gamma = float(rng.choice([0.01, 0.1, 1.0]))
        d = generate(SyntheticSpec(m, n, seed=seed)).with_gamma(gamma)
        sol = oracle_solve(build_scls(d))
        pt, v_star = solve_spg_small(d)
        assert v_star == pytest.approx(sol.value, rel=1e-8)
        assert eval_spg_objective(d, pt) == pytest.approx(v_star)
        back = map_to_sphere(d, recover_spg(d, map_to_sphere(d, pt)))
        assert np.allclose(back.r, map_to_sphere(d, pt).r, atol=1e-9)


def test_hard_case_instances() -> None:
    for seed in range(5):
        d = make_hard_case(8, seed=seed)
        sol = oracle_solve(build_scls(d))
        assert sol.hard_case
        assert sol.kkt_residual <= 1e-10


def test_size_cap() -> None:
    p = build_scls(tiny)
    with pytest.raises(ProblemSizeError):
        oracle_solve(p, size_cap=1)
    with pytest.raises(ValueError):
        OracleSolver(size_cap=1).solve(p)


def test_solver_adapter() -> None:
    r, report = OracleSolver().solve(build_scls(tiny))
    assert report.solver == "oracle"
    assert report.matvecs == 0
    assert report.objective == pytest.approx(0.0, abs=1e-12)
    assert report.diagnostics["multiplicity"] == 1
    assert len(r) == 2


def test_invalid_matrices() -> None:
    with pytest.raises(InvalidArgumentError, match="symmetric"):
        solve_dense_sphere([[1.0, 2.0], [0.0, 1.0]], [1.0, 0.0])
    with pytest.raises(InvalidArgumentError, match="square"):
        solve_dense_sphere(np.ones((2, 3)), [1.0, 0.0])
    assert issubclass(EigenDecompositionError, RuntimeError)
