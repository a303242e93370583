import numpy as np
import pytest

from src.langevinmix.rng import (derive_keys, generator, key_uniform, seed_sequence, substream,
                                 uniform_ball)


def test_derive_keys_is_deterministic():
    """Same seed and path give the same keys; other paths differ."""

    first = derive_keys(11, 64, 1)
    second = derive_keys(11, 64, 1)
    other = derive_keys(11, 64, 2)

    assert first.dtype == np.uint64
    assert np.array_equal(first, second)
    assert not np.array_equal(first, other)
    assert derive_keys(11, 0, 1).size == 0


def test_key_uniform_range():
    """Uniforms come from the top 53 bits and stay in [0, 1)."""

    assert key_uniform(0) == 0.0
    assert key_uniform(2 ** 64 - 1) == pytest.approx(1.0 - 2.0 ** -53, abs=0)
    assert key_uniform(2 ** 63) == 0.5


def test_substream_repeats_for_a_key():
    """Two generators keyed by the same integer draw the same values."""

    key = int(derive_keys(3, 1)[0])

    assert np.array_equal(substream(key).standard_normal(5), substream(key).standard_normal(5))
    assert not np.array_equal(substream(key).standard_normal(5), substream(key + 1).standard_normal(5))


def test_generator_children_are_independent_of_order():
    """A child generator depends on its path only."""

    a = generator(5, 0).random(3)
    generator(5, 1).random(100)
    b = generator(5, 0).random(3)

    assert np.array_equal(a, b)
    assert seed_sequence(5, 2).spawn_key == (2,)


def test_uniform_ball_stays_inside():
    """Uniform ball draws lie in the ball with E∥x∥ = dR/(d+1)."""

    rng = np.random.default_rng(0)
    draws = uniform_ball(rng, 2.0, 3, (20000,))
    norms = np.linalg.norm(draws, axis=1)

    assert draws.shape == (20000, 3)
    assert np.all(norms <= 2.0 + 1e-12)
    assert norms.mean() == pytest.approx(1.5, abs=0.02)
