import numpy as np
import pytest

from src.langevinmix.model import (DimensionMismatchError, InvalidModelError, MissingPotentialError,
                                   ModelSpec, NonFiniteOutputError, ball_grid, builtin_profiles,
                                   check_dissipativity, check_gradient_consistency, check_growth_profile,
                                   check_linear_growth, evaluate_H, finite_difference_gradient,
                                   get_profile, make_linear_model)


def test_linear_model_constants(linear_model):
    """Young's inequality with ε = 1/4 gives Δ = 3/4 and b = M²."""

    assert linear_model.delta == pytest.approx(0.75)
    assert linear_model.b == pytest.approx(1.0)
    assert linear_model.K == 1.0
    assert linear_model.max_step == pytest.approx(0.75)

    default = make_linear_model(d=2, M=2.0)
    assert default.delta == pytest.approx(0.5)
    assert default.b == pytest.approx(2.0)


def test_evaluate_H_linear(linear_model):
    """H(θ, y) = θ − y for the linear model."""

    assert evaluate_H(linear_model, [2.0], [0.5]) == pytest.approx([1.5])
    with pytest.raises(DimensionMismatchError):
        evaluate_H(linear_model, [1.0, 2.0], [0.5])


def test_evaluate_H_rejects_non_finite():
    """A model returning NaN is reported."""

    spec = ModelSpec(name="broken", d=1, m=1, H=lambda theta, y: theta * np.nan,
                     delta=0.5, b=1.0, K=1.0, M=1.0)

    with pytest.raises(NonFiniteOutputError):
        evaluate_H(spec, [1.0], [0.0])


def test_model_rejects_incoherent_constants():
    """K must exceed Δ/√2."""

    with pytest.raises(InvalidModelError):
        ModelSpec(name="bad", d=1, m=1, H=lambda theta, y: theta, delta=2.0, b=1.0, K=1.0, M=1.0)


def test_logistic_model_encoding(logistic_model):
    """m = d + 1, Δ = c, K = max(1, 2c), M = √(1 + M_z²)."""

    assert logistic_model.m == 2
    assert logistic_model.delta == pytest.approx(0.1)
    assert logistic_model.K == 1.0
    assert logistic_model.M == pytest.approx(np.sqrt(2.0))
    # at θ = 0, σ = 1/2 and H = −(q − 1/2) z
    assert evaluate_H(logistic_model, [0.0], [1.0, 1.0]) == pytest.approx([-0.5])


def test_dissipativity_and_growth_pass(linear_model, uniform_stream):
    """The certified constants hold on a grid of the 10-ball."""

    dissipative = check_dissipativity(linear_model, uniform_stream, 5000, 10.0, seed=1)
    growth = check_linear_growth(linear_model, uniform_stream, 5000, 10.0, seed=1)

    assert dissipative.passed and dissipative.n_violations == 0
    assert growth.passed
    assert dissipative.to_dict()["pass"] is True


def test_dissipativity_reports_witness(uniform_stream):
    """An overstated Δ fails with a witness instead of raising."""

    honest = make_linear_model(d=1, M=1.0, young_eps=0.25)
    overstated = ModelSpec(name="linear", d=1, m=1, H=honest.H, delta=0.99, b=0.01, K=1.0, M=1.0)

    report = check_dissipativity(overstated, uniform_stream, 5000, 10.0, seed=1)

    assert not report.passed
    assert report.n_violations > 0
    assert set(report.witness) == {"theta", "y"}


def test_gradient_consistency_logistic(logistic_model, logistic_env):
    """The exact mean field of a finite stream matches ∇U."""

    from src.langevinmix.environment import FiniteMarkovStream

    stream = FiniteMarkovStream(logistic_env)
    report = check_gradient_consistency(logistic_model, stream, ball_grid(1, 2.0, 9), 1000, 1e-5, seed=0)

    assert report.passed
    assert report.statistic < 1e-6


def test_gradient_consistency_monte_carlo(linear_model, uniform_stream):
    """Monte Carlo mean fields pass within their standard-error slack."""

    report = check_gradient_consistency(linear_model, uniform_stream, ball_grid(1, 2.0, 5), 100000, 1e-5, seed=3)

    assert report.passed


def test_gradient_consistency_draw_count(linear_model, logistic_model, logistic_env, uniform_stream):
    """The draw count matters only when the mean field is a Monte Carlo average."""

    from src.langevinmix.environment import FiniteMarkovStream

    report = check_gradient_consistency(logistic_model, FiniteMarkovStream(logistic_env), [[0.5]], 0, 1e-5, seed=0)

    assert report.passed
    assert report.details["n_mc"] == 0 and report.details["exact_mean_field"]
    with pytest.raises(ValueError):
        check_gradient_consistency(linear_model, uniform_stream, [[0.5]], 1, 1e-5, seed=0)


def test_gradient_consistency_needs_potential(uniform_stream):
    spec = ModelSpec(name="bare", d=1, m=1, H=lambda theta, y: theta - y, delta=0.5, b=1.0, K=1.0, M=1.0)

    with pytest.raises(MissingPotentialError):
        check_gradient_consistency(spec, uniform_stream, [[0.0]], 10, 1e-5, seed=0)


def test_finite_difference_gradient(linear_model):
    gradient = finite_difference_gradient(linear_model.U, np.array([1.5]), 1e-5)

    assert gradient == pytest.approx([1.5], rel=1e-8)


def test_builtin_profiles_hold():
    """Every builtin test function satisfies its own growth certificate."""

    grid = ball_grid(2, 5.0, 100)

    for profile in builtin_profiles().values():
        assert check_growth_profile(profile, grid).passed
    assert get_profile("identity").name == "coordinate"
    with pytest.raises(KeyError):
        get_profile("quartic")


def test_ball_grid_layout():
    grid = ball_grid(3, 2.0, 50)

    assert grid.shape == (50, 3)
    assert np.all(grid[0] == 0.0)
    assert np.all(np.linalg.norm(grid, axis=1) <= 2.0 + 1e-12)
