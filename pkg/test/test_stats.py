import math

import numpy as np
import pytest
from scipy.signal import lfilter

from src.langevinmix.model import get_profile
from src.langevinmix.stats import (BinningMismatchError, EmpiricalLaw, InsufficientDataError, RateFitError,
                                   SeriesStats, autocov_window_agreement, autocovariance, batch_means_se,
                                   donsker_path, exp_rate_fit, ks_normality, long_run_variance,
                                   partial_sum_decomposition, time_average, tv_distance)


def ar1_series(n, coefficient=0.5, seed=0):
    """x_t = coefficient·x_{t−1} + e_t with standard normal e."""
    noise = np.random.default_rng(seed).standard_normal(n)
    return lfilter([1.0], [1.0, -coefficient], noise)


def test_time_average():
    thetas = np.array([[0.0], [1.0], [2.0], [3.0]])
    profile = get_profile("coordinate")

    assert time_average(thetas, profile) == pytest.approx(1.5)
    assert time_average(thetas, profile, burn_in=1) == pytest.approx(2.0)
    with pytest.raises(InsufficientDataError):
        time_average(thetas, profile, burn_in=4)


def test_autocovariance_of_ar1():
    stats = autocovariance(ar1_series(200000), 3)
    correlation = stats.autocorrelation()

    assert stats.variance == pytest.approx(4.0 / 3.0, rel=0.03)
    assert correlation[0] == 1.0
    assert correlation[1] == pytest.approx(0.5, abs=0.02)
    assert correlation[2] == pytest.approx(0.25, abs=0.02)
    with pytest.raises(InsufficientDataError):
        autocovariance(np.zeros(50), 5)


def test_series_stats_validation():
    with pytest.raises(InsufficientDataError):
        SeriesStats(n=0, mean=0.0, variance=0.0, autocov={})
    with pytest.raises(ValueError):
        SeriesStats(n=5, mean=0.0, variance=1.0, autocov={0: 2.0})
    assert SeriesStats(n=5, mean=1.0, variance=0.0, autocov={0: 0.0, 1: 0.0}).autocorrelation() == {0: 0.0, 1: 0.0}


def test_long_run_variance_of_ar1():
    """σ² = 1/(1 − 1/2)² = 4 for the unit-noise AR(1) with coefficient 1/2."""

    series = ar1_series(1000000, seed=1)

    batch = batch_means_se(series)
    assert batch.batch == 1000 and batch.n_batches == 1000
    assert batch.sigma2 == pytest.approx(4.0, rel=0.15)
    assert batch.se == pytest.approx(batch.sigma2 * math.sqrt(2.0 / 999))
    assert long_run_variance(series, "truncated_sum", window=50) == pytest.approx(4.0, rel=0.15)
    with pytest.raises(ValueError):
        long_run_variance(series, "spectral")
    with pytest.raises(InsufficientDataError):
        batch_means_se(np.zeros(3), batch=2)


def test_partial_sum_decomposition():
    """S_n²/n splits into its diagonal and cross terms."""

    direct, diagonal, cross = partial_sum_decomposition([1.0, 2.0, 3.0])

    assert direct == pytest.approx(12.0)
    assert diagonal == pytest.approx(14.0 / 3.0)
    assert cross == pytest.approx(22.0 / 3.0)
    assert diagonal + cross == pytest.approx(direct)


@pytest.mark.parametrize("seed, n, shift", [(1, 10, 0.0), (2, 1000, 0.0), (3, 10000, 0.0), (4, 10000, 3.0)])
def test_partial_sum_decomposition_identity(seed, n, shift):
    """Diagonal plus cross terms reproduce S_n²/n to 1e-10 on generated series."""

    direct, diagonal, cross = partial_sum_decomposition(ar1_series(n, seed=seed) + shift)

    assert abs(diagonal + cross - direct) <= 1e-10 * max(1.0, direct)


def test_donsker_path():
    path = donsker_path([1.0, -1.0, 1.0, 1.0], 2.0)

    assert path.values == pytest.approx([0.0, 0.5, 0.0, 0.5, 1.0])
    assert path.at(0.5) == 0.0
    assert path.endpoint == 1.0
    assert path.studentized == pytest.approx([0.0, 0.25, 0.0, 0.25, 0.5])
    assert donsker_path([1.0], 0.0).studentized is None
    with pytest.raises(ValueError):
        path.at(1.5)


def test_ks_normality():
    rng = np.random.default_rng(3)

    _, p_normal = ks_normality(rng.standard_normal(2000))
    _, p_shifted = ks_normality(rng.standard_normal(2000) + 1.0)

    assert p_normal > 0.001
    assert p_shifted < 1e-6
    with pytest.raises(InsufficientDataError):
        ks_normality(np.zeros(99))


def test_tv_distance():
    edges = [0.0, 1.0, 2.0]
    p = EmpiricalLaw.from_masses(edges, [0.5, 0.5])
    q = EmpiricalLaw.from_masses(edges, [1.0, 0.0])
    outside = EmpiricalLaw.from_masses(edges, [0.5, 0.0], below=0.5)

    assert tv_distance(p, q) == pytest.approx(0.5)
    assert tv_distance(q, outside) == pytest.approx(0.5)
    assert tv_distance(p, p) == 0.0
    with pytest.raises(BinningMismatchError):
        tv_distance(p, EmpiricalLaw.from_masses([0.0, 1.0, 3.0], [0.5, 0.5]))


def test_empirical_law_from_samples():
    law = EmpiricalLaw.from_samples([-1.0, 0.25, 0.75, 0.75, 3.0], 0.0, 1.0, 2)

    assert law.masses == pytest.approx([0.2, 0.4])
    assert law.below == pytest.approx(0.2) and law.above == pytest.approx(0.2)
    assert law.total == 5
    with pytest.raises(InsufficientDataError):
        EmpiricalLaw.from_samples([], 0.0, 1.0, 2)
    with pytest.raises(ValueError):
        EmpiricalLaw.from_masses([0.0, 1.0], [0.5])


def test_exp_rate_fit():
    fit = exp_rate_fit({n: 2.0 * math.exp(-0.1 * n) for n in (0, 10, 20, 30, 40)})

    assert fit.rate == pytest.approx(0.1)
    assert fit.intercept == pytest.approx(math.log(2.0))
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.n_points == 5
    with pytest.raises(RateFitError):
        exp_rate_fit({0: 1.0, 1: 0.5, 2: 0.25, 3: 0.0})


def test_autocov_window_agreement():
    """Two windows of one stationary series give matching autocovariances."""

    result = autocov_window_agreement(ar1_series(40000, seed=4), 0, 20000, 20000, 3)

    assert result["pass"]
    assert [row["lag"] for row in result["rows"]] == [0, 1, 2, 3]
    with pytest.raises(InsufficientDataError):
        autocov_window_agreement(np.zeros(100), 0, 60, 50, 1)
