"""Updating functions, potentials, test functions and their structural checks."""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit, ndtri
from scipy.stats import qmc

from . import LangevinMixError

logger = logging.getLogger(__name__)

ArrayMap = Callable[..., np.ndarray]


class DimensionMismatchError(LangevinMixError):
    """Input vector does not match the model's dimensions."""
    pass


class NonFiniteOutputError(LangevinMixError):
    """The updating function returned NaN or infinity."""
    pass


class InvalidModelError(LangevinMixError):
    """Model constants violate the dissipativity or growth requirements."""
    pass


class MissingPotentialError(LangevinMixError):
    """An operation needs the potential U but the model has none."""
    pass


@dataclass(frozen=True)
class ModelSpec:
    """An updating function H with its certified constants.

    ``H(theta, y)`` must broadcast over leading batch dimensions: theta has
    shape ``(..., d)``, y has shape ``(..., m)`` and the result ``(..., d)``.
    ``U`` maps ``(..., d)`` to ``(...)`` and ``h`` is its gradient.
    """

    name: str
    d: int
    m: int
    H: ArrayMap
    delta: float
    b: float
    K: float
    M: float
    beta: float = 1.0
    U: Optional[ArrayMap] = None
    h: Optional[ArrayMap] = None
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.d < 1 or self.m < 1:
            raise InvalidModelError(f"dimensions must be positive, got d={self.d}, m={self.m}")
        for label in ("delta", "b", "K", "M", "beta"):
            value = getattr(self, label)
            if not (math.isfinite(value) and value > 0):
                raise InvalidModelError(f"{label} must be finite and positive, got {value}")
        if not self.K > self.delta / math.sqrt(2.0):
            raise InvalidModelError(
                f"K={self.K} must exceed delta/sqrt(2)={self.delta / math.sqrt(2.0):.6g}"
            )

    @property
    def max_step(self) -> float:
        """Largest step size covered by the limit theorems, Δ/K²."""
        return self.delta / self.K ** 2

    def describe(self) -> Dict[str, float]:
        body = {"name": self.name, "d": self.d, "m": self.m, "delta": self.delta,
                "b": self.b, "K": self.K, "M": self.M, "beta": self.beta}
        body.update(self.params)
        return body


@dataclass(frozen=True)
class GrowthProfile:
    """A test function φ with its polynomial growth certificate."""

    name: str
    c_phi: float
    r: float
    phi: ArrayMap

    def bound(self, theta: np.ndarray) -> np.ndarray:
        return self.c_phi * (1.0 + np.linalg.norm(theta, axis=-1) ** self.r)


@dataclass
class ValidationReport:
    """Outcome of one numerical check.

    ``statistic`` is the worst margin found (negative means violated) or the
    worst error, depending on the check.
    """

    check: str
    passed: bool
    statistic: float
    n_checked: int
    n_violations: int = 0
    witness: Optional[Dict[str, List[float]]] = None
    details: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "check": self.check,
            "pass": bool(self.passed),
            "statistic": float(self.statistic),
            "n_checked": int(self.n_checked),
            "n_violations": int(self.n_violations),
            "witness": self.witness,
            "details": {k: float(v) for k, v in self.details.items()},
        }


def _as_vector(values: Sequence[float], size: int, label: str) -> np.ndarray:
    vector = np.asarray(values, dtype=float)
    if vector.shape != (size,):
        raise DimensionMismatchError(f"{label} has shape {vector.shape}, expected ({size},)")
    return vector


def evaluate_H(spec: ModelSpec, theta: Sequence[float], y: Sequence[float]) -> np.ndarray:
    """Evaluate H(θ, y) for a single pair.

    Params:
        spec (ModelSpec): Model to evaluate.
        theta (Sequence[float]): Parameter point of length ``spec.d``.
        y (Sequence[float]): Data point of length ``spec.m``.

    Returns:
        value (np.ndarray): H(θ, y), shape ``(d,)``.

    Raises:
        DimensionMismatchError: Wrong input length.
        NonFiniteOutputError: The model produced NaN or infinity.
    """
    theta = _as_vector(theta, spec.d, "theta")
    y = _as_vector(y, spec.m, "y")
    value = np.asarray(spec.H(theta, y), dtype=float)
    if value.shape != (spec.d,):
        raise DimensionMismatchError(f"H returned shape {value.shape}, expected ({spec.d},)")
    if not np.all(np.isfinite(value)):
        raise NonFiniteOutputError(f"H({theta.tolist()}, {y.tolist()}) = {value.tolist()}")
    return value


def make_linear_model(d: int, M: float, young_eps: float = 0.5, beta: float = 1.0) -> ModelSpec:
    """Canonical test model H(θ, y) = θ − y with U(θ) = ∥θ∥²/2.

    Young's inequality ``M∥θ∥ ≤ ε∥θ∥² + M²/(4ε)`` gives Δ = 1 − ε and
    b = M²/(4ε); ε = 1/2 yields Δ = 1/2, b = M²/2. K = 1 by the triangle
    inequality.
    """
    if d < 1 or M <= 0:
        raise InvalidModelError(f"need d >= 1 and M > 0, got d={d}, M={M}")
    if not 0.0 < young_eps < 1.0:
        raise InvalidModelError(f"young_eps must lie in (0, 1), got {young_eps}")

    def H(theta, y):
        return theta - y

    def U(theta):
        return 0.5 * np.sum(theta * theta, axis=-1)

    def h(theta):
        return np.array(theta, dtype=float, copy=True)

    return ModelSpec(
        name="linear",
        d=d,
        m=d,
        H=H,
        delta=1.0 - young_eps,
        b=M ** 2 / (4.0 * young_eps),
        K=1.0,
        M=M,
        beta=beta,
        U=U,
        h=h,
        params={"young_eps": young_eps},
    )


def make_logistic_model(d: int, c: float, M_z: float, env=None, beta: float = 1.0) -> ModelSpec:
    """Regularised logistic regression on (q, z) data.

    A data point is encoded as ``y = (q, z_1, ..., z_d)`` with q in {0, 1}
    and ∥z∥ ≤ M_z. With |q − σ| ≤ 1 and Young's inequality,
    ⟨H, θ⟩ ≥ c∥θ∥² − M_z²/(4c), and ∥H∥ ≤ 2c∥θ∥ + ∥z∥ gives K = max(1, 2c).

    Params:
        d (int): Parameter dimension.
        c (float): Ridge coefficient.
        M_z (float): Bound on the feature norm.
        env (FiniteMarkovParams|None): Finite (q, z) law. When supplied,
            the exact potential U and mean field h are attached.
        beta (float): Inverse temperature.

    Returns:
        spec (ModelSpec): The logistic model.
    """
    if d < 1 or c <= 0 or M_z <= 0:
        raise InvalidModelError(f"need d >= 1, c > 0, M_z > 0, got d={d}, c={c}, M_z={M_z}")

    def H(theta, y):
        q = y[..., 0]
        z = y[..., 1:]
        s = expit(np.sum(theta * z, axis=-1))
        return -(q - s)[..., None] * z + 2.0 * c * theta

    U = h = None
    if env is not None:
        states = np.asarray(env.states, dtype=float)
        if states.shape[1] != d + 1:
            raise DimensionMismatchError(f"environment states have width {states.shape[1]}, expected {d + 1}")
        weights = np.asarray(env.pi0, dtype=float)
        qs = states[:, 0]
        zs = states[:, 1:]
        if np.any(np.linalg.norm(zs, axis=1) > M_z * (1 + 1e-12)):
            raise InvalidModelError("environment feature exceeds M_z")

        def U(theta):
            theta = np.asarray(theta, dtype=float)
            u = theta @ zs.T
            loss = -(qs * log_expit(u) + (1.0 - qs) * log_expit(-u))
            return loss @ weights + c * np.sum(theta * theta, axis=-1)

        def h(theta):
            theta = np.asarray(theta, dtype=float)
            s = expit(theta @ zs.T)
            return -((qs - s) * weights) @ zs + 2.0 * c * theta

    return ModelSpec(
        name="logistic",
        d=d,
        m=d + 1,
        H=H,
        delta=c,
        b=M_z ** 2 / (4.0 * c),
        K=max(1.0, 2.0 * c),
        M=math.sqrt(1.0 + M_z ** 2),
        beta=beta,
        U=U,
        h=h,
        params={"c": c, "M_z": M_z},
    )


def builtin_profiles() -> Dict[str, GrowthProfile]:
    """The coordinate, squared-norm and cubic test functions."""
    return {
        "coordinate": GrowthProfile("coordinate", 1.0, 1.0, lambda theta: theta[..., 0]),
        "squared_norm": GrowthProfile("squared_norm", 1.0, 2.0,
                                      lambda theta: np.sum(theta * theta, axis=-1)),
        "cubic": GrowthProfile("cubic", 1.0, 3.0, lambda theta: theta[..., 0] ** 3),
    }


def get_profile(name: str) -> GrowthProfile:
    profiles = builtin_profiles()
    if name == "identity":
        name = "coordinate"
    if name not in profiles:
        raise KeyError(f"unknown test function {name!r}; choose from {sorted(profiles)}")
    return profiles[name]


def ball_grid(d: int, radius: float, n_points: int) -> np.ndarray:
    """Deterministic low-discrepancy points filling the ``radius``-ball.

    A Halton sequence in d+1 dimensions is mapped to a direction (first d
    coordinates through the normal quantile) and a radius (last coordinate,
    d-th root). The origin is always the first point.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    sampler = qmc.Halton(d=d + 1, scramble=False)
    sampler.fast_forward(1)
    u = sampler.random(max(n_points - 1, 0))
    if d == 1:
        direction = np.where(u[:, :1] < 0.5, -1.0, 1.0)
    else:
        direction = ndtri(np.clip(u[:, :d], 1e-12, 1 - 1e-12))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radii = radius * u[:, d:] ** (1.0 / d)
    return np.vstack([np.zeros((1, d)), radii * direction])


def _sample_pairs(spec: ModelSpec, stream, n_samples: int, grid_radius: float, seed: int):
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if stream.m != spec.m:
        raise DimensionMismatchError(f"stream width {stream.m} != model m {spec.m}")
    thetas = ball_grid(spec.d, grid_radius, n_samples)
    ys = stream.sample_marginal(np.random.default_rng(seed), n_samples)
    return thetas, ys


def _report_from_margins(check: str, margins: np.ndarray, thetas: np.ndarray,
                         ys: np.ndarray, tolerance: float) -> ValidationReport:
    worst = int(np.argmin(margins))
    violations = int(np.sum(margins < -tolerance))
    witness = None
    if violations:
        witness = {"theta": thetas[worst].tolist(), "y": ys[worst].tolist()}
        logger.warning("%s violated at theta=%s y=%s (margin %.3g)",
                       check, witness["theta"], witness["y"], margins[worst])
    return ValidationReport(
        check=check,
        passed=violations == 0,
        statistic=float(margins[worst]),
        n_checked=len(margins),
        n_violations=violations,
        witness=witness,
        details={"tolerance": tolerance},
    )


def check_dissipativity(spec: ModelSpec, stream, n_samples: int, grid_radius: float,
                        seed: int, tolerance: float = 1e-9) -> ValidationReport:
    """Check ⟨H(θ, y), θ⟩ ≥ Δ∥θ∥² − b on grid θ and stream draws y.

    Params:
        spec (ModelSpec): Model with its claimed constants.
        stream (DataStream): Source of y draws.
        n_samples (int): Number of (θ, y) pairs.
        grid_radius (float): Radius of the θ ball.
        seed (int): Seed for the y draws.
        tolerance (float): Slack below zero tolerated before failing.

    Returns:
        report (ValidationReport): Minimum margin and witness if violated.
    """
    thetas, ys = _sample_pairs(spec, stream, n_samples, grid_radius, seed)
    values = spec.H(thetas, ys)
    margins = (np.sum(values * thetas, axis=1)
               - spec.delta * np.sum(thetas * thetas, axis=1) + spec.b)
    return _report_from_margins("dissipativity", margins, thetas, ys, tolerance)


def check_linear_growth(spec: ModelSpec, stream, n_samples: int, grid_radius: float,
                        seed: int, tolerance: float = 1e-9) -> ValidationReport:
    """Check ∥H(θ, y)∥ ≤ K(∥θ∥ + ∥y∥ + 1) on grid θ and stream draws y."""
    thetas, ys = _sample_pairs(spec, stream, n_samples, grid_radius, seed)
    values = spec.H(thetas, ys)
    margins = (spec.K * (np.linalg.norm(thetas, axis=1) + np.linalg.norm(ys, axis=1) + 1.0)
               - np.linalg.norm(values, axis=1))
    return _report_from_margins("linear_growth", margins, thetas, ys, tolerance)


def finite_difference_gradient(U: ArrayMap, theta: np.ndarray, step: float) -> np.ndarray:
    """Central finite-difference gradient of U at one point."""
    d = theta.shape[-1]
    offsets = step * np.eye(d)
    return (U(theta + offsets) - U(theta - offsets)) / (2.0 * step)


def check_gradient_consistency(spec: ModelSpec, stream, theta_grid: Sequence[Sequence[float]],
                               n_mc: int, fd_step: float, seed: int,
                               threshold: float = 1e-3) -> ValidationReport:
    """Compare the mean field E H(θ, Y) with ∇U by finite differences.

    The error at each θ is ``∥h − fd∥ / max(∥fd∥, 1)``: relative where the
    gradient is large, absolute near stationary points.

    Params:
        spec (ModelSpec): Model with a potential attached.
        stream (DataStream): Source of Y.
        theta_grid (Sequence): Points to check.
        n_mc (int): Monte Carlo draws per point. Finite-state streams give
            the mean field exactly and ignore it.
        fd_step (float): Central-difference step.
        seed (int): Seed of the Monte Carlo draws.
        threshold (float): Allowed error; Monte Carlo checks widen it by
            four standard errors.

    Raises:
        MissingPotentialError: The model has no U.
        ValueError: Fewer than two draws for a Monte Carlo check.
    """
    if spec.U is None:
        raise MissingPotentialError(f"model {spec.name!r} has no potential attached")
    rng = np.random.default_rng(seed)
    exact = getattr(stream, "params", None)
    if exact is None and n_mc < 2:
        raise ValueError(f"a Monte Carlo mean field needs n_mc >= 2, got {n_mc}")
    errors, allowed = [], []
    for theta in theta_grid:
        theta = _as_vector(theta, spec.d, "theta")
        if exact is not None:
            values = spec.H(np.broadcast_to(theta, (exact.n_states, spec.d)), exact.states)
            h = exact.pi0 @ values
            se = 0.0
        else:
            ys = stream.sample_marginal(rng, n_mc)
            values = spec.H(np.broadcast_to(theta, (n_mc, spec.d)), ys)
            h = np.mean(values, axis=0)
            se = float(np.linalg.norm(np.std(values, axis=0) / math.sqrt(n_mc)))
        fd = finite_difference_gradient(spec.U, theta, fd_step)
        scale = max(float(np.linalg.norm(fd)), 1.0)
        error = float(np.linalg.norm(h - fd) / scale)
        errors.append(error)
        allowed.append(threshold + 4.0 * se / scale)
    excess = np.subtract(errors, allowed)
    worst_index = int(np.argmax(excess))
    worst_theta = _as_vector(list(theta_grid)[worst_index], spec.d, "theta")
    passed = bool(np.all(excess < 0))
    return ValidationReport(
        check="gradient_consistency",
        passed=passed,
        statistic=max(errors),
        n_checked=len(errors),
        n_violations=int(np.sum(excess >= 0)),
        witness=None if passed else {"theta": worst_theta.tolist()},
        details={"threshold": threshold, "n_mc": 0 if exact is not None else n_mc,
                 "fd_step": fd_step, "exact_mean_field": exact is not None},
    )


def check_growth_profile(profile: GrowthProfile, grid: np.ndarray) -> ValidationReport:
    """Check |φ(θ)| ≤ c_φ(1 + ∥θ∥^r) on every grid point."""
    margins = profile.bound(grid) - np.abs(profile.phi(grid))
    worst = int(np.argmin(margins))
    violations = int(np.sum(margins < 0))
    return ValidationReport(
        check=f"growth_{profile.name}",
        passed=violations == 0,
        statistic=float(margins[worst]),
        n_checked=len(margins),
        n_violations=violations,
        witness={"theta": grid[worst].tolist()} if violations else None,
    )
