"""SGLD recursion, its split-kernel representation, and coupled pairs.

A single chain is strictly sequential and driven by one 64-bit key per
step: the regeneration uniform comes from the key bits and all other draws
from a Philox substream keyed by it. Replica ensembles run in fixed-size
blocks, each block with its own child seed, so results do not depend on
the number of worker threads.
"""
import csv
import logging
import math
import pathlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import beta as beta_law

from . import LangevinMixError
from .environment import DataStream, FrozenTrajectory, TrajectoryRangeError, record_trajectory
from .model import ModelSpec, NonFiniteOutputError
from .rng import derive_keys, generator, key_uniform, seed_sequence, substream, uniform_ball
from .stats import RateFitError, exp_rate_fit
from .theory import log_ball_volume, minorization_constants, noise_scale

logger = logging.getLogger(__name__)

STREAM_ENV = 0
STREAM_EPS = 1
STREAM_ENSEMBLE = 2
STREAM_PILOT = 3

MAX_REJECTIONS = 10 ** 6
DEFAULT_BLOCK = 256
RESIDUAL_CANDIDATES = 8


class TheoryHypothesisError(LangevinMixError):
    """Step size above Δ/K² without the out-of-theory override."""
    pass


class SplitKernelError(LangevinMixError):
    """Split-kernel parameters are inconsistent with the step kernel."""
    pass


class CouplingInvariantError(LangevinMixError):
    """Two coalesced chains separated again."""
    pass


@dataclass(frozen=True)
class ChainConfig:
    """Step size, temperature, start point, horizon and master seed of a chain.

    ``out_of_theory`` allows λ > Δ/K²; every report of such a run is marked.
    ``split_radius`` is the radius R of the split kernel's small set.
    """

    lam: float
    theta0: Tuple[float, ...]
    horizon: int
    seed: int
    beta: float = 1.0
    out_of_theory: bool = False
    split_radius: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta0", tuple(float(v) for v in self.theta0))
        if not (self.lam > 0 and self.beta > 0 and self.split_radius > 0):
            raise ValueError("lam, beta and split_radius must be positive")
        if self.horizon < 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}")

    def check_hypothesis(self, model: ModelSpec) -> bool:
        """Return True when λ ≤ Δ/K²; otherwise raise unless overridden.

        Raises:
            TheoryHypothesisError: λ > Δ/K² and ``out_of_theory`` is False.
        """
        if len(self.theta0) != model.d:
            raise ValueError(f"theta0 has {len(self.theta0)} entries, model d={model.d}")
        if self.lam <= model.max_step:
            return True
        if not self.out_of_theory:
            raise TheoryHypothesisError(
                f"lambda={self.lam} exceeds Delta/K^2={model.max_step:.6g} for {model.name}: "
                "the step-size hypothesis of the ergodic theorems fails")
        logger.warning("lambda=%g above Delta/K^2=%g: results are out of theory", self.lam, model.max_step)
        return False


@dataclass(frozen=True)
class SplitKernelParams:
    """Small set B_R, regeneration mass α̃_R and ν_R = uniform law on B_R."""

    R: float
    log_alpha_tilde: float
    lam: float
    beta: float
    d: int
    nu_R: str = "uniform_ball"

    def __post_init__(self) -> None:
        if not (self.R > 0 and math.isfinite(self.log_alpha_tilde) and self.log_alpha_tilde < 0):
            raise SplitKernelError(f"need R > 0 and 0 < alpha_tilde < 1, got R={self.R}")

    @classmethod
    def for_model(cls, model: ModelSpec, lam: float, R: float, beta: Optional[float] = None) -> "SplitKernelParams":
        beta = model.beta if beta is None else beta
        minor = minorization_constants(model, lam, R, beta)
        return cls(R=R, log_alpha_tilde=minor.log_alpha_tilde, lam=lam, beta=beta, d=model.d)

    @property
    def alpha_tilde(self) -> float:
        return math.exp(self.log_alpha_tilde)

    @property
    def log_nu_density(self) -> float:
        """ln of m′ = α̃_R / Vol(B_R)."""
        return self.log_alpha_tilde - log_ball_volume(self.d, self.R)

    @property
    def scale(self) -> float:
        return noise_scale(self.lam, self.beta)


@dataclass(eq=False)
class ChainRun:
    """θ_0..θ_n with the environment and per-step keys that produced them."""

    thetas: np.ndarray
    env_trace: FrozenTrajectory
    eps_seed_trace: np.ndarray
    regeneration_flags: np.ndarray
    mode: str = "plain"
    start_time: int = 0
    out_of_theory: bool = False

    def __post_init__(self) -> None:
        steps = self.thetas.shape[0] - 1
        if not (len(self.eps_seed_trace) == steps == len(self.regeneration_flags)) or len(self.env_trace) < steps:
            raise TrajectoryRangeError("chain run arrays have inconsistent lengths")

    @property
    def final(self) -> np.ndarray:
        return self.thetas[-1]

    def to_csv(self, path: Union[str, pathlib.Path]) -> None:
        """Columns t, theta_1..theta_d, regenerated; the first row has no step."""
        d = self.thetas.shape[1]
        with open(path, "w", newline="") as file:
            writer = csv.writer(file)
            writer.writerow(["t"] + [f"theta_{i + 1}" for i in range(d)] + ["regenerated"])
            for index, theta in enumerate(self.thetas):
                flag = int(self.regeneration_flags[index - 1]) if index else 0
                writer.writerow([self.start_time + index] + [repr(float(v)) for v in theta] + [flag])


class CoupledRun(NamedTuple):
    tau: Optional[int]
    runs: Tuple[ChainRun, ChainRun]
    small_set_visits: int


def _checked(theta: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(theta)):
        raise NonFiniteOutputError(f"step produced a non-finite state {theta.tolist()}")
    return theta


def step_plain(model: ModelSpec, lam: float, beta: float, theta, y, xi) -> np.ndarray:
    """θ − λH(θ, y) + √(2λ/β)ξ for a supplied standard normal ξ."""
    theta = np.asarray(theta, dtype=float)
    drift = theta - lam * np.asarray(model.H(theta, np.asarray(y, dtype=float)), dtype=float)
    return _checked(drift + noise_scale(lam, beta) * np.asarray(xi, dtype=float))


def step_split(model: ModelSpec, lam: float, split: SplitKernelParams, theta, y, eps: float,
               substream: np.random.Generator) -> Tuple[np.ndarray, bool]:
    """One step of the split kernel; the marginal law equals the plain kernel's.

    Inside B_R with ε ≤ α̃_R the output is a ν_R draw from the substream only,
    the same for every θ in the ball. Inside B_R otherwise the residual
    (Q − α̃_R ν_R)/(1 − α̃_R) is sampled by rejection from the Gaussian step.

    Params:
        model (ModelSpec): Model supplying H.
        lam (float): Step size; must match ``split.lam``.
        split (SplitKernelParams): Small set and regeneration mass.
        theta (array): Current state.
        y (array): Current data point.
        eps (float): Regeneration uniform.
        substream (np.random.Generator): Every other draw of the step.

    Returns:
        (theta, regenerated) (Tuple[np.ndarray, bool]): Next state and
            whether the ν_R branch fired.

    Raises:
        SplitKernelError: λ mismatch or residual rejection did not accept.
    """
    if not math.isclose(lam, split.lam):
        raise SplitKernelError(f"split kernel built for lambda={split.lam}, stepped with {lam}")
    theta = np.asarray(theta, dtype=float)
    in_ball = float(np.linalg.norm(theta)) <= split.R
    if in_ball and eps <= split.alpha_tilde:
        return uniform_ball(substream, split.R, split.d), True
    s = split.scale
    mean = theta - lam * np.asarray(model.H(theta, np.asarray(y, dtype=float)), dtype=float)
    if not in_ball:
        return _checked(mean + s * substream.standard_normal(split.d)), False
    log_normaliser = -split.d * math.log(s) - (split.d / 2.0) * math.log(2.0 * math.pi)
    for _ in range(MAX_REJECTIONS):
        xi = substream.standard_normal(split.d)
        proposal = mean + s * xi
        u = substream.random()
        if float(np.linalg.norm(proposal)) > split.R:
            return _checked(proposal), False
        log_q = log_normaliser - 0.5 * float(xi @ xi)
        if u < -math.expm1(split.log_nu_density - log_q):
            return _checked(proposal), False
    raise SplitKernelError(f"residual rejection exceeded {MAX_REJECTIONS} proposals")


def quenched_run(model: ModelSpec, frozen: FrozenTrajectory, start_time: int, theta_start,
                 end_time: int, eps_keys: Sequence[int], split: SplitKernelParams) -> ChainRun:
    """Z_{s,t}: the split-kernel chain from ``theta_start`` at time s against a frozen path.

    ``eps_keys[i]`` drives the step from time s+i to s+i+1.

    Raises:
        TrajectoryRangeError: The trajectory or the keys do not cover [s, t).
    """
    steps = end_time - start_time
    if steps < 0 or not frozen.covers(start_time, end_time):
        raise TrajectoryRangeError(f"frozen trajectory does not cover [{start_time}, {end_time})")
    keys = np.asarray(eps_keys, dtype=np.uint64)
    if len(keys) != steps:
        raise TrajectoryRangeError(f"{len(keys)} keys supplied for {steps} steps")
    thetas = np.empty((steps + 1, model.d))
    thetas[0] = np.asarray(theta_start, dtype=float)
    flags = np.zeros(steps, dtype=bool)
    for i in range(steps):
        key = int(keys[i])
        thetas[i + 1], flags[i] = step_split(model, split.lam, split, thetas[i],
                                             frozen.at(start_time + i), key_uniform(key), substream(key))
    window = FrozenTrajectory(frozen.points[start_time - frozen.offset:end_time - frozen.offset],
                              frozen.M, start_time)
    return ChainRun(thetas, window, keys, flags, mode="split", start_time=start_time)


def run_chain(model: ModelSpec, stream: DataStream, cfg: ChainConfig, mode: str = "plain") -> ChainRun:
    """Run one chain, recording the environment and the per-step keys.

    The run is a pure function of (model, stream, cfg): the environment comes
    from child seed ``STREAM_ENV`` and the keys from ``STREAM_EPS``.
    """
    in_theory = cfg.check_hypothesis(model)
    if mode not in ("plain", "split"):
        raise ValueError(f"mode must be 'plain' or 'split', got {mode!r}")
    env = record_trajectory(stream, generator(cfg.seed, STREAM_ENV), cfg.horizon)
    keys = derive_keys(cfg.seed, cfg.horizon, STREAM_EPS)
    if mode == "split":
        split = SplitKernelParams.for_model(model, cfg.lam, cfg.split_radius, cfg.beta)
        run = quenched_run(model, env, 0, cfg.theta0, cfg.horizon, keys, split)
        run.out_of_theory = not in_theory
        return run
    thetas = np.empty((cfg.horizon + 1, model.d))
    thetas[0] = cfg.theta0
    for t in range(cfg.horizon):
        xi = substream(int(keys[t])).standard_normal(model.d)
        thetas[t + 1] = step_plain(model, cfg.lam, cfg.beta, thetas[t], env.points[t], xi)
    return ChainRun(thetas, env, keys, np.zeros(cfg.horizon, dtype=bool), mode="plain",
                    out_of_theory=not in_theory)


def coupled_run(model: ModelSpec, frozen: FrozenTrajectory, theta1, theta2, horizon: int,
                eps_keys: Sequence[int], split: SplitKernelParams) -> CoupledRun:
    """Two quenched chains sharing the environment and every step key.

    Returns:
        coupled (CoupledRun): first time τ with bitwise-equal states (None if
            none within the horizon), both runs, and the number of steps
            where both chains sat in B_R.

    Raises:
        CouplingInvariantError: The chains separated after τ.
    """
    first = quenched_run(model, frozen, frozen.offset, theta1, frozen.offset + horizon, eps_keys, split)
    second = quenched_run(model, frozen, frozen.offset, theta2, frozen.offset + horizon, eps_keys, split)
    equal = np.all(first.thetas == second.thetas, axis=1)
    tau = int(np.argmax(equal)) if equal.any() else None
    if tau is not None and not equal[tau:].all():
        raise CouplingInvariantError(f"chains coalesced at {tau} and separated later")
    norms1 = np.linalg.norm(first.thetas[:-1], axis=1)
    norms2 = np.linalg.norm(second.thetas[:-1], axis=1)
    visits = int(np.sum((norms1 <= split.R) & (norms2 <= split.R)))
    return CoupledRun(tau, (first, second), visits)


def block_seeds(seed: int, n_blocks: int, *path: int) -> List[np.random.SeedSequence]:
    return seed_sequence(seed, *path).spawn(n_blocks)


def block_sizes(n_replicas: int, block_size: int) -> List[int]:
    full, rest = divmod(n_replicas, block_size)
    return [block_size] * full + ([rest] if rest else [])


def simulate_block(model: ModelSpec, stream: DataStream, lam: float, beta: float, theta0,
                   n_replicas: int, horizon: int, rng: np.random.Generator,
                   burn_in: int = 0) -> np.ndarray:
    """Independent plain-kernel chains, each on its own stationary environment path.

    Params:
        theta0 (array): ``(d,)`` start shared by all replicas or ``(n, d)``.
        burn_in (int): Steps run before time 0 and not returned.

    Returns:
        thetas (np.ndarray): ``(n_replicas, horizon + 1, d)``.
    """
    ys = stream.sample_paths(rng, n_replicas, burn_in + horizon)
    s = noise_scale(lam, beta)
    current = np.array(np.broadcast_to(np.asarray(theta0, dtype=float), (n_replicas, model.d)))
    for t in range(burn_in):
        current = current - lam * model.H(current, ys[:, t]) + s * rng.standard_normal(current.shape)
    thetas = np.empty((n_replicas, horizon + 1, model.d))
    thetas[:, 0] = current
    for t in range(horizon):
        current = current - lam * model.H(current, ys[:, burn_in + t]) + s * rng.standard_normal(current.shape)
        thetas[:, t + 1] = current
    if not np.all(np.isfinite(current)):
        raise NonFiniteOutputError("replica block produced non-finite states")
    return thetas


def run_ensemble(model: ModelSpec, stream: DataStream, cfg: ChainConfig, n_replicas: int,
                 reducer: Callable[[np.ndarray], np.ndarray], block_size: int = DEFAULT_BLOCK,
                 threads: int = 1, burn_in: int = 0) -> np.ndarray:
    """Run replicas in blocks over a thread pool and concatenate the reductions.

    ``reducer`` maps a ``(n, horizon + 1, d)`` block to a per-replica array
    with leading dimension n. Output order follows block order.
    """
    cfg.check_hypothesis(model)
    sizes = block_sizes(n_replicas, block_size)
    seeds = block_seeds(cfg.seed, len(sizes), STREAM_ENSEMBLE)

    def work(job):
        size, seq = job
        rng = np.random.Generator(np.random.Philox(seq))
        block = simulate_block(model, stream, cfg.lam, cfg.beta, cfg.theta0, size, cfg.horizon, rng, burn_in)
        return np.asarray(reducer(block))

    logger.info("ensemble of %d replicas in %d blocks on %d threads", n_replicas, len(sizes), threads)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(work, zip(sizes, seeds)))
    return np.concatenate(parts, axis=0)


def _coupled_block(model: ModelSpec, split: SplitKernelParams, theta1: np.ndarray,
                   theta2: np.ndarray, ys: np.ndarray, horizon: int,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised coupled pairs; every draw of a step is shared within a pair.

    Returns per-pair coupling times (horizon + 1 when not coupled) and the
    number of steps with both chains in B_R.
    """
    n, d = theta1.shape
    s, R, lam = split.scale, split.R, split.lam
    log_normaliser = -d * math.log(s) - (d / 2.0) * math.log(2.0 * math.pi)
    states = np.stack([theta1, theta2])
    tau = np.full(n, horizon + 1)
    coupled = np.all(states[0] == states[1], axis=1)
    tau[coupled] = 0
    visits = np.zeros(n, dtype=np.int64)
    for t in range(horizon):
        u = rng.random(n)
        nu = uniform_ball(rng, R, d, (n,))
        xi = rng.standard_normal((n, RESIDUAL_CANDIDATES, d))
        v = rng.random((n, RESIDUAL_CANDIDATES))
        in_ball = np.linalg.norm(states, axis=2) <= R
        visits += in_ball[0] & in_ball[1]
        mean = states - lam * model.H(states, np.broadcast_to(ys[:, t], (2,) + ys[:, t].shape))
        proposals = mean[:, :, None, :] + s * xi[None]
        outside = np.linalg.norm(proposals, axis=3) > R
        log_q = log_normaliser - 0.5 * np.sum(xi * xi, axis=2)
        accept = outside | (v < -np.expm1(split.log_nu_density - log_q))[None]
        chosen = np.argmax(accept, axis=2)
        found = accept.any(axis=2)
        residual = np.take_along_axis(proposals, chosen[:, :, None, None], axis=2)[:, :, 0]
        plain = proposals[:, :, 0]
        regenerate = in_ball & (u <= split.alpha_tilde)[None]
        needs_retry = in_ball & ~regenerate & ~found
        if needs_retry.any():
            residual = _retry_residual(split, mean, residual, needs_retry, log_normaliser, rng)
        states = np.where(regenerate[..., None], nu[None],
                          np.where(in_ball[..., None], residual, plain))
        if not np.all(np.isfinite(states)):
            raise NonFiniteOutputError("coupled block produced non-finite states")
        equal = np.all(states[0] == states[1], axis=1)
        if np.any(coupled & ~equal):
            raise CouplingInvariantError(f"coalesced pairs separated at step {t + 1}")
        tau[equal & ~coupled] = t + 1
        coupled = equal
    return tau, visits


def _retry_residual(split, mean, residual, needs_retry, log_normaliser, rng):
    """Redraw residual proposals, shared across the pair, until each flagged row accepts."""
    s, R, d = split.scale, split.R, split.d
    residual = residual.copy()
    pending = needs_retry.any(axis=0)
    for _ in range(MAX_REJECTIONS):
        rows = np.flatnonzero(pending)
        if rows.size == 0:
            return residual
        xi = rng.standard_normal((rows.size, d))
        v = rng.random(rows.size)
        proposal = mean[:, rows] + s * xi[None]
        log_q = log_normaliser - 0.5 * np.sum(xi * xi, axis=1)
        accept = (np.linalg.norm(proposal, axis=2) > R) | (v < -np.expm1(split.log_nu_density - log_q))[None]
        for chain in range(2):
            take = needs_retry[chain, rows] & accept[chain]
            residual[chain, rows[take]] = proposal[chain, take]
            needs_retry[chain, rows[take]] = False
        pending = needs_retry.any(axis=0)
    raise SplitKernelError(f"residual rejection exceeded {MAX_REJECTIONS} proposals")


@dataclass
class CouplingCurve:
    """Empirical P(τ > n) with Clopper-Pearson limits at each horizon."""

    horizons: List[int]
    probabilities: List[float]
    lower: List[float]
    upper: List[float]
    counts: List[int]
    replicas: int
    confidence: float
    mean_small_set_visits: float
    burn_in: int = 0
    details: dict = field(default_factory=dict)

    def rows(self):
        return [
            {"n": n, "p": p, "lower": lo, "upper": hi, "count": k}
            for n, p, lo, hi, k in zip(self.horizons, self.probabilities, self.lower, self.upper, self.counts)
        ]


def clopper_pearson(count: int, total: int, confidence: float) -> Tuple[float, float]:
    tail = (1.0 - confidence) / 2.0
    lower = 0.0 if count == 0 else float(beta_law.ppf(tail, count, total - count + 1))
    upper = 1.0 if count == total else float(beta_law.ppf(1.0 - tail, count + 1, total - count))
    return lower, upper


def _pilot_burn_in(model, stream, theta1, lam, beta, split_radius, seed, fallback) -> int:
    pilot_horizons = list(range(0, 4 * max(fallback, 10) + 1, max(1, fallback // 10)))
    theta2 = np.asarray(theta1, dtype=float) + 2.0 * split_radius
    curve = annealed_coupling_curve(model, stream, theta1, "point", pilot_horizons, 200,
                                    int(seed_sequence(seed, STREAM_PILOT).generate_state(1)[0]),
                                    lam, beta, theta2=theta2, split_radius=split_radius)
    try:
        rate = exp_rate_fit(dict(zip(curve.horizons, curve.probabilities))).rate
    except RateFitError:
        logger.warning("pilot coupling curve too flat to fit; burn-in falls back to %d", fallback)
        return fallback
    return int(math.ceil(10.0 / rate)) if rate > 0 else fallback


def annealed_coupling_curve(model: ModelSpec, stream: DataStream, theta1, theta2_law: str,
                            horizons: Sequence[int], replicas: int, seed: int, lam: float,
                            beta: Optional[float] = None, theta2=None, split_radius: float = 1.0,
                            burn_in: Optional[int] = None, block_size: int = DEFAULT_BLOCK,
                            threads: int = 1, confidence: float = 0.99) -> CouplingCurve:
    """Empirical no-coupling probabilities of the annealed pair.

    Each pair shares its environment path and step draws; distinct pairs are
    independent. With ``theta2_law="stationary"`` the second chain is burnt
    in along the environment path before time 0; the default burn-in is
    10/κ̂ from a pilot fit of a point-start curve.

    Params:
        theta1 (array): Start of the first chain.
        theta2_law (str): ``"point"`` (uses ``theta2``) or ``"stationary"``.
        horizons (Sequence[int]): Times n at which P(τ > n) is reported.
        replicas (int): Number of pairs, at least 100.
        seed (int): Master seed.
        lam (float): Step size.
        split_radius (float): R of the split kernel.

    Returns:
        curve (CouplingCurve): Probabilities with binomial limits.
    """
    if replicas < 100:
        raise ValueError(f"need at least 100 replicas, got {replicas}")
    if theta2_law not in ("point", "stationary"):
        raise ValueError(f"theta2_law must be 'point' or 'stationary', got {theta2_law!r}")
    beta = model.beta if beta is None else beta
    split = SplitKernelParams.for_model(model, lam, split_radius, beta)
    theta1 = np.asarray(theta1, dtype=float)
    if theta2_law == "point":
        if theta2 is None:
            raise ValueError("theta2 is required for a point start")
        burn_in = 0
        start2 = np.asarray(theta2, dtype=float)
    else:
        if burn_in is None:
            burn_in = _pilot_burn_in(model, stream, theta1, lam, beta, split_radius, seed, max(horizons))
        start2 = theta1
    horizon = max(horizons)
    sizes = block_sizes(replicas, block_size)
    seeds = block_seeds(seed, len(sizes), STREAM_ENSEMBLE)

    def work(job):
        size, seq = job
        rng = np.random.Generator(np.random.Philox(seq))
        ys = stream.sample_paths(rng, size, burn_in + horizon)
        second = np.broadcast_to(start2, (size, model.d)).copy()
        s = split.scale
        for t in range(burn_in):
            second = second - lam * model.H(second, ys[:, t]) + s * rng.standard_normal(second.shape)
        first = np.broadcast_to(theta1, (size, model.d)).copy()
        return _coupled_block(model, split, first, second, ys[:, burn_in:], horizon, rng)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(work, zip(sizes, seeds)))
    taus = np.concatenate([part[0] for part in parts])
    visits = np.concatenate([part[1] for part in parts])
    counts = [int(np.sum(taus > n)) for n in horizons]
    limits = [clopper_pearson(k, replicas, confidence) for k in counts]
    logger.info("coupling curve: %d pairs, burn-in %d, P(tau > %d) = %.4f",
                replicas, burn_in, horizon, counts[-1] / replicas)
    return CouplingCurve(
        horizons=list(horizons),
        probabilities=[k / replicas for k in counts],
        lower=[lo for lo, _ in limits],
        upper=[hi for _, hi in limits],
        counts=counts,
        replicas=replicas,
        confidence=confidence,
        mean_small_set_visits=float(np.mean(visits)),
        burn_in=burn_in,
        details={"split_radius": split_radius, "alpha_tilde": split.alpha_tilde},
    )
