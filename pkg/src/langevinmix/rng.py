"""Seed trees and keyed random substreams.

Every per-step random input of the chain is a 64-bit key. The uniform used
for the regeneration test is read off the key bits, and everything else a
step needs is drawn from a Philox substream keyed by the same integer, so
two chains fed the same key see the same draws whatever their state.
"""
from typing import Tuple

import numpy as np

_UNIFORM_SCALE = 2.0 ** -53


def seed_sequence(seed: int, *path: int) -> np.random.SeedSequence:
    """Child of the master seed addressed by ``path``.

    Params:
        seed (int): Master seed.
        path (int): Spawn key, e.g. ``(STREAM_ENV, replica)``.

    Returns:
        seq (np.random.SeedSequence): Deterministic child sequence.
    """
    return np.random.SeedSequence(seed, spawn_key=tuple(path))


def generator(seed: int, *path: int) -> np.random.Generator:
    """A `Generator` on the child sequence ``path`` of ``seed``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *path)))


def derive_keys(seed: int, count: int, *path: int) -> np.ndarray:
    """Draw ``count`` 64-bit step keys from the child sequence ``path``."""
    if count == 0:
        return np.zeros(0, dtype=np.uint64)
    return seed_sequence(seed, *path).generate_state(count, dtype=np.uint64)


def key_uniform(key: int) -> float:
    """Uniform on [0, 1) taken from the top 53 bits of the key."""
    return (int(key) >> 11) * _UNIFORM_SCALE


def substream(key: int) -> np.random.Generator:
    """Counter-based generator keyed by one step key."""
    return np.random.Generator(np.random.Philox(key=int(key)))


def uniform_ball(rng: np.random.Generator, radius: float, d: int,
                 size: Tuple[int, ...] = ()) -> np.ndarray:
    """Uniform draws on the closed ``radius``-ball of R^d.

    Direction is a normalised Gaussian vector, the radius comes from the
    d-th root inverse CDF of ``r^d``.
    """
    direction = rng.standard_normal(size + (d,))
    norms = np.linalg.norm(direction, axis=-1, keepdims=True)
    # zero Gaussian vectors occur with probability zero
    norms = np.where(norms == 0.0, 1.0, norms)
    u = rng.random(size + (1,))
    return radius * u ** (1.0 / d) * direction / norms
