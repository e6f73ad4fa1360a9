import math

import pytest

import numpy as np
from pyspgls.data import ManipulationRule, SyntheticSpec, generate
from pyspgls.exceptions import DegenerateApexError, InvalidArgumentError
from pyspgls.reformulate import (
    Dataset,
    Samples,
    SphereVec,
    SpgPoint,
    apex_value,
    build_scls,
    eval_scls_objective,
    eval_spg_objective,
    manipulated_predictions,
    map_to_sphere,
    predict,
    recover_spg,
    spg_objective_of_w,
)

# H = diag(2, 1) and g = (-2, 0) with p = 2
tiny = Dataset.from_arrays(
    np.array([[math.sqrt(2)], [0.0]]), [math.sqrt(2), 1.0], [0.0, 2.0], 4.0
)
random_game = generate(SyntheticSpec(40, 8, seed=3)).with_gamma(0.1)


def test_tiny_problem() -> None:
    p = build_scls(tiny)
    assert p.dim == 2
    assert np.allclose(p.dense_hessian(), np.diag([2.0, 1.0]))
    assert np.allclose(p.g, [-2.0, 0.0])
    assert p.p == pytest.approx(2.0)
    # the global minimizer is (1, 0), with q = 2 - 4 + 2
    assert p.q(np.array([1.0, 0.0])) == pytest.approx(0.0)
    r = SphereVec(np.array([1.0, 0.0]))
    assert eval_scls_objective(p, r) == pytest.approx(0.0, abs=1e-14)


def test_quadratic_forms_agree() -> None:
    p = build_scls(random_game)
    rng = np.random.default_rng(0)
    for _ in range(10):
        r = rng.standard_normal(p.dim)
        assert p.q(r) == pytest.approx(p.q_quadratic(r), rel=1e-10)
        H = p.dense_hessian()
        assert np.allclose(p.euclidean_gradient(r), 2 * (H @ r + p.g))


def test_objective_transport() -> None:
    """q(map_to_sphere(w, alpha)) equals v(w, alpha) on feasible points."""
    p = build_scls(random_game)
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = rng.standard_normal(random_game.n) * rng.uniform(0.01, 10)
        pt = SpgPoint.from_predictor(w, random_game.gamma)
        r = map_to_sphere(random_game, pt)
        v = eval_spg_objective(random_game, pt)
        assert eval_scls_objective(p, r) == pytest.approx(v, rel=1e-10)
        assert spg_objective_of_w(random_game, w) == pytest.approx(v, rel=1e-10)


def test_roundtrip() -> None:
    rng = np.random.default_rng(2)
    for _ in range(20):
        w = rng.standard_normal(random_game.n)
        pt = SpgPoint.from_predictor(w, random_game.gamma)
        back = recover_spg(random_game, map_to_sphere(random_game, pt))
        assert np.allclose(back.w, pt.w, rtol=1e-9, atol=1e-12)
        assert back.alpha == pytest.approx(pt.alpha, rel=1e-9)


def test_sphere_points_map_back() -> None:
    rng = np.random.default_rng(3)
    for _ in range(20):
        r = SphereVec.normalize(rng.standard_normal(random_game.n + 1))
        back = map_to_sphere(random_game, recover_spg(random_game, r))
        assert np.allclose(back.r, r.r, atol=1e-9)


def test_origin_maps_to_south_pole() -> None:
    pt = SpgPoint.from_predictor(np.zeros(random_game.n), random_game.gamma)
    r = map_to_sphere(random_game, pt)
    assert r.alpha_tilde == pytest.approx(-1.0)
    assert np.allclose(r.w_tilde, 0)


def test_apex() -> None:
    apex = SphereVec.apex(random_game.n + 1)
    with pytest.raises(DegenerateApexError) as info:
        recover_spg(random_game, apex)
    assert info.value.alpha_tilde == 1.0
    assert info.value.value == pytest.approx(apex_value(random_game))
    assert isinstance(info.value, ArithmeticError)


def test_predictions() -> None:
    w = np.ones(random_game.n)
    pt = SpgPoint.from_predictor(w, random_game.gamma)
    assert np.allclose(predict(random_game.X, w), random_game.X.to_dense() @ w)
    expected = (pt.alpha * random_game.z + random_game.X.matvec(w)) / (
        1 + pt.alpha
    )
    assert np.allclose(manipulated_predictions(random_game, pt), expected)


def test_invalid_inputs() -> None:
    with pytest.raises(InvalidArgumentError):
        SphereVec(np.array([1.0, 1.0]))
    with pytest.raises(InvalidArgumentError):
        SphereVec.normalize(np.zeros(3))
    with pytest.raises(InvalidArgumentError, match="infeasible"):
        eval_spg_objective(random_game, SpgPoint(np.ones(random_game.n), 1.0))
    with pytest.raises(InvalidArgumentError, match="gamma"):
        Dataset.from_arrays([[1.0]], [1.0], [1.0], 0.0)
    with pytest.raises(InvalidArgumentError):
        Dataset.from_arrays([[1.0]], [1.0, 2.0], [1.0], 1.0)


def test_samples() -> None:
    samples = generate(SyntheticSpec(10, 3, seed=1))
    assert samples.z is not None
    bare = Samples(samples.X, samples.y)
    with pytest.raises(InvalidArgumentError, match="rule"):
        bare.with_gamma(0.1)
    shifted = bare.with_rule(ManipulationRule.additive(1.0))
    assert shifted.z is not None
    assert np.allclose(shifted.z, samples.y + 1)
    d = shifted.with_gamma(0.5)
    assert d.gamma == 0.5 and d.m == 10 and d.n == 3
    head = shifted.take([0, 2])
    assert head.m == 2
    assert np.allclose(head.y, samples.y[[0, 2]])


def test_single_sample_single_feature() -> None:
    d = Dataset.from_arrays([[2.0]], [1.0], [3.0], 1.0)
    p = build_scls(d)
    assert p.dim == 2
    pt = SpgPoint.from_predictor([0.5], 1.0)
    r = map_to_sphere(d, pt)
    assert p.q(r.r) == pytest.approx(eval_spg_objective(d, pt))
