import numpy as np
import pytest

from conftest import LOGISTIC_P, LOGISTIC_STATES
from src.langevinmix.environment import (FiniteMarkovParams, FiniteMarkovStream, FrozenTrajectory,
                                         IIDBoundedStream, InsufficientDataError, InvalidStreamError,
                                         MixingCurve, MovingAverageStream, PartitionSpec, TooManyStatesError,
                                         TrajectoryRangeError, empirical_alpha_partition, exact_alpha_finite,
                                         max_event_gap, record_trajectory, shift_trajectory, stream_next,
                                         summability_report)


def test_finite_markov_params_validation():
    """Rows must sum to one and π must be stationary."""

    with pytest.raises(InvalidStreamError):
        FiniteMarkovParams(states=[[0.0], [1.0]], P=[[0.5, 0.6], [0.5, 0.5]], pi0=[0.5, 0.5])
    with pytest.raises(InvalidStreamError):
        FiniteMarkovParams(states=[[0.0], [1.0]], P=[[0.9, 0.1], [0.5, 0.5]], pi0=[0.5, 0.5])


def test_from_matrix_solves_stationary_law():
    params = FiniteMarkovParams.from_matrix([[0.0], [1.0]], [[0.9, 0.1], [0.3, 0.7]])

    assert params.pi0 == pytest.approx([0.75, 0.25])


def test_two_state_exact_alpha():
    """The symmetric ±1 chain has α(n) = (2p − 1)^n / 4."""

    params = FiniteMarkovParams.symmetric_two_state(0.9)

    for n in (0, 1, 2, 5, 10):
        assert exact_alpha_finite(params, n) == pytest.approx(0.8 ** n / 4.0, abs=1e-14)


def test_exact_alpha_refuses_large_chains():
    size = 17
    params = FiniteMarkovParams.iid(np.arange(size, dtype=float)[:, None], np.ones(size))

    with pytest.raises(TooManyStatesError):
        exact_alpha_finite(params, 1)


def test_max_event_gap_uses_unions():
    """Joint events may group several states."""

    block = np.array([[1.0, 1.0, -1.0, -1.0]] * 2 + [[-1.0, -1.0, 1.0, 1.0]] * 2)
    gap = 0.05 * block

    assert np.max(np.abs(gap)) == pytest.approx(0.05)
    assert max_event_gap(gap) == pytest.approx(0.2)


def test_mixing_curve_lookups():
    curve = MixingCurve({0: 0.25, 1: 0.1, 2: 0.05}, exact=True)

    assert curve(1) == 0.1
    assert curve(10) == 0.05
    with pytest.raises(InvalidStreamError):
        MixingCurve({0: 0.1, 1: 0.2}, exact=True)
    with pytest.raises(InvalidStreamError):
        MixingCurve({0: 0.3}, exact=True)


def test_stream_moments_and_autocorrelation(two_state_stream, uniform_stream):
    mean, cov = two_state_stream.moments()

    assert mean == pytest.approx([0.0])
    assert cov == pytest.approx([[1.0]])
    assert two_state_stream.autocorrelation(3) == pytest.approx({1: 0.8, 2: 0.64, 3: 0.512})
    assert uniform_stream.moments()[1] == pytest.approx([[1.0 / 3.0]])
    assert uniform_stream.autocorrelation(2) == {1: 0.0, 2: 0.0}


def test_two_state_paths_are_stationary(two_state_stream):
    """Sampled paths keep the ±1 marginal and the lag-1 correlation."""

    paths = two_state_stream.sample_paths(np.random.default_rng(4), 200, 500)[..., 0]

    assert paths.shape == (200, 500)
    assert set(np.unique(paths)) == {-1.0, 1.0}
    assert paths.mean() == pytest.approx(0.0, abs=0.03)
    assert np.mean(paths[:, 1:] * paths[:, :-1]) == pytest.approx(0.8, abs=0.02)


def test_stream_next_advances_state(two_state_stream):
    rng = np.random.default_rng(1)
    state = two_state_stream.initial_state(rng)

    point, following = stream_next(two_state_stream, state, rng)

    assert point.shape == (1,)
    assert following in (0, 1)


def test_iid_quadrature_matches_variance(uniform_stream):
    params = uniform_stream.quadrature(16)

    assert params.n_states == 16
    assert params.pi0 @ params.states[:, 0] ** 2 == pytest.approx(1.0 / 3.0, rel=0.01)
    assert uniform_stream.mixing_curve(3).values == {0: 0.25, 1: 0.0, 2: 0.0, 3: 0.0}


STREAMS = {
    "iid_bounded": lambda: IIDBoundedStream(m=1, half_width=1.0),
    "two_state": lambda: FiniteMarkovStream(FiniteMarkovParams.symmetric_two_state(0.9, 1.0)),
    "finite_markov": lambda: FiniteMarkovStream(FiniteMarkovParams.from_matrix(LOGISTIC_STATES, LOGISTIC_P)),
    "bounded_moving_average": lambda: MovingAverageStream(m=1, window=3),
}


def moment_features(points):
    """Coordinates and their pairwise products, the inputs of a mean and covariance."""
    m = points.shape[-1]
    products = [points[..., i] * points[..., j] for i in range(m) for j in range(i, m)]
    return np.concatenate([points, np.stack(products, axis=-1)], axis=-1)


@pytest.mark.parametrize("kind", sorted(STREAMS))
def test_stream_paths_are_stationary(kind):
    """Moments over t in [0, 1000) agree with those over t in [10^5, 10^5 + 1000)."""

    paths = STREAMS[kind]().sample_paths(np.random.default_rng(31), 40, 101000)
    early = moment_features(paths[:, :1000]).mean(axis=1)
    late = moment_features(paths[:, 100000:]).mean(axis=1)

    gap = np.abs(early.mean(axis=0) - late.mean(axis=0))
    se = np.sqrt(early.var(axis=0, ddof=1) / 40 + late.var(axis=0, ddof=1) / 40)

    assert np.all(gap <= 4.0 * se + 1e-12)


@pytest.mark.parametrize("kind", sorted(STREAMS))
def test_stream_starts_in_stationary_law(kind):
    """The first point after `initial_state` has the stationary mean and second moments."""

    stream = STREAMS[kind]()
    rng = np.random.default_rng(5)
    points = np.array([stream.next(stream.initial_state(rng), rng)[0] for _ in range(2000)])
    mean, cov = stream.moments()
    second = cov + np.outer(mean, mean)
    expected = np.concatenate([mean, [second[i, j] for i in range(stream.m) for j in range(i, stream.m)]])

    features = moment_features(points)
    se = features.std(axis=0, ddof=1) / np.sqrt(len(points))

    assert np.all(np.abs(features.mean(axis=0) - expected) <= 4.0 * se + 1e-12)


def test_moving_average_stream():
    """Window averages are bounded and uncorrelated beyond the window."""

    stream = MovingAverageStream(m=1, window=3, half_width=1.0)
    paths = stream.sample_paths(np.random.default_rng(2), 100, 1000)[..., 0]

    assert np.all(np.abs(paths) <= stream.M + 1e-12)
    assert np.var(paths) == pytest.approx(1.0 / 9.0, rel=0.05)
    assert stream.autocorrelation(4) == pytest.approx({1: 2 / 3, 2: 1 / 3, 3: 0.0, 4: 0.0})
    curve = stream.mixing_curve(5)
    assert curve(3) == 0.25 and curve(4) == 0.0
    assert not curve.exact
    assert curve.exact_from == 4
    assert curve.exact_at(4) and not curve.exact_at(3)


def test_empirical_alpha_partition_tracks_exact(two_state_stream):
    """On a long two-state trace the estimate approaches (0.8)^n/4."""

    trace = two_state_stream.sample_paths(np.random.default_rng(9), 1, 200000)[0]
    partition = PartitionSpec(0, (0.0,))

    for n in (1, 3, 6):
        estimate = empirical_alpha_partition(trace, partition, n)
        assert estimate == pytest.approx(0.8 ** n / 4.0, abs=0.012)

    with pytest.raises(InsufficientDataError):
        empirical_alpha_partition(trace[:50], partition, 6)


def test_partition_quantiles_merge_ties(two_state_stream):
    trace = two_state_stream.sample_paths(np.random.default_rng(1), 1, 1000)[0]

    partition = PartitionSpec.quantiles(trace, 8)

    assert partition.n_cells == 2


def test_summability_report():
    curve = MixingCurve.geometric(0.5, 60, exact=True)

    report = summability_report(curve, eps=0.5, tol=1e-6)

    assert report["converged"]
    assert report["partial_sum"] == pytest.approx(0.5 * sum(0.5 ** (n / 2) for n in range(1, 61)))


def test_frozen_trajectory_save_load(tmp_path, uniform_stream):
    """The binary file keeps m, M, length and every value."""

    trajectory = record_trajectory(uniform_stream, np.random.default_rng(0), 25)
    path = tmp_path / "env.bin"

    trajectory.save(path)
    loaded = FrozenTrajectory.load(path)

    assert path.stat().st_size == 24 + 25 * 8
    assert loaded.m == 1 and loaded.M == trajectory.M and len(loaded) == 25
    assert np.array_equal(loaded.points, trajectory.points)


def test_frozen_trajectory_is_immutable_and_shiftable(uniform_stream):
    trajectory = record_trajectory(uniform_stream, np.random.default_rng(0), 10)

    with pytest.raises(ValueError):
        trajectory.points[0, 0] = 5.0
    shifted = shift_trajectory(trajectory, 3)
    assert np.array_equal(shifted.at(0), trajectory.at(3))
    with pytest.raises(TrajectoryRangeError):
        trajectory.at(10)
    assert trajectory.covers(0, 10) and not trajectory.covers(0, 11)


def test_invalid_stream_parameters():
    with pytest.raises(InvalidStreamError):
        IIDBoundedStream(m=1, half_width=0.0)
    with pytest.raises(InvalidStreamError):
        MovingAverageStream(m=1, window=0)
    with pytest.raises(InvalidStreamError):
        MovingAverageStream(m=2, window=2).autocorrelation(1)
