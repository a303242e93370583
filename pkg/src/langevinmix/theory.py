"""Constants of the drift, minorization and coupling arguments, and the
conservative bound curves built from them.

V(θ) = exp(a∥θ∥²) throughout. Every constant uses the kernel noise scale
s = √(2λ/β); β = 1 gives s = √(2λ).
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from . import LangevinMixError
from .environment import MixingCurve, max_event_gap
from .model import GrowthProfile, ModelSpec, ValidationReport

logger = logging.getLogger(__name__)

ALPHA_TILDE_CAP = 0.999
R_SEARCH_START = 2.0 ** -4
LOG_FLOAT_MAX = 700.0


class StepSizeError(LangevinMixError):
    """Step size outside (0, Δ/K²)."""
    pass


class BoundDomainError(LangevinMixError):
    """A bound was requested where it is not asserted."""
    pass


class TheoryInvariantError(LangevinMixError):
    """A computed constant bundle violates its own invariants."""
    pass


class DriftConstants(NamedTuple):
    a: float
    gamma: float
    C: float
    rho: float
    r: float
    c1: float
    c2: float


class Minorization(NamedTuple):
    """Density floor and regeneration mass, both kept as logarithms."""

    log_m_floor: float
    log_alpha_tilde: float
    r_star: float

    @property
    def m_floor(self) -> float:
        return math.exp(self.log_m_floor)

    @property
    def alpha_tilde(self) -> float:
        return math.exp(self.log_alpha_tilde)


@dataclass(frozen=True)
class TheoryConstants:
    """Everything the coupling argument needs for one (model, λ, β)."""

    model: str
    d: int
    lam: float
    beta: float
    a: float
    rho: float
    gamma: float
    C: float
    r: float
    R: float
    log_m_floor: float
    log_alpha_tilde: float
    c_m: float
    kappa: float
    kappa_corrected: float
    N: int
    gamma1: float
    gamma2: float
    gamma3: float

    def __post_init__(self) -> None:
        checks = {
            "0 < rho < 1": 0.0 < self.rho < 1.0,
            "0 < gamma < 1": 0.0 < self.gamma < 1.0,
            "C >= 1": self.C >= 1.0,
            "0 < alpha_tilde < 1": self.log_alpha_tilde < 0.0 and math.isfinite(self.log_alpha_tilde),
            "gamma < gamma1 < gamma2 < gamma3 < 1":
                self.gamma < self.gamma1 < self.gamma2 < self.gamma3 < 1.0,
            "2C < (gamma1 - gamma) exp(aR^2/2)":
                math.log(2.0 * self.C) < math.log(self.gamma1 - self.gamma) + self.a * self.R ** 2 / 2.0,
            "kappa > 0": self.kappa > 0.0,
            "kappa_corrected >= 0": self.kappa_corrected >= 0.0,
            "N >= 1": self.N >= 1,
        }
        failed = [name for name, ok in checks.items() if not ok]
        if failed:
            raise TheoryInvariantError(f"constant bundle for {self.model} violates: {', '.join(failed)}")

    @property
    def m_floor(self) -> float:
        return math.exp(self.log_m_floor)

    @property
    def alpha_tilde(self) -> float:
        return math.exp(self.log_alpha_tilde)

    def log_V(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.a * np.sum(theta * theta, axis=-1)

    def V(self, theta) -> float:
        return float(np.exp(self.log_V(theta)))

    def rate(self, corrected: bool = False) -> float:
        return self.kappa_corrected if corrected else self.kappa

    def to_dict(self) -> Dict:
        body = asdict(self)
        body["lambda"] = body.pop("lam")
        body["m_floor"] = self.m_floor
        body["alpha_tilde"] = self.alpha_tilde
        return body


def noise_scale(lam: float, beta: float) -> float:
    return math.sqrt(2.0 * lam / beta)


def _check_step(model: ModelSpec, lam: float) -> None:
    if not 0.0 < lam < model.max_step:
        raise StepSizeError(f"lambda={lam} outside (0, {model.max_step:.6g}) for {model.name}")


def drift_constants(model: ModelSpec, lam: float, beta: float = None) -> DriftConstants:
    """Constants of [Q(y)V](θ) ≤ γV(θ) + C.

    The one-step contraction ∥θ − λH∥² ≤ ρ∥θ∥² + 2(λb + λ²K²(1+M)²) and
    the Gaussian integral of V give [Q(y)V](θ) ≤ c1·exp(c2∥θ∥²). The
    threshold r is chosen so that γ = e^{−1} beyond it.

    Params:
        model (ModelSpec): Model with Δ, b, K, M.
        lam (float): Step size, strictly inside (0, Δ/K²).
        beta (float): Inverse temperature; defaults to the model's.

    Returns:
        drift (DriftConstants): a, γ, C, ρ and the auxiliary r, c1, c2.

    Raises:
        StepSizeError: λ outside (0, Δ/K²).
        TheoryInvariantError: c2 ≥ a, or C overflows.
    """
    _check_step(model, lam)
    beta = model.beta if beta is None else beta
    s2 = 2.0 * lam / beta
    K, M = model.K, model.M
    rho = 2.0 * K ** 2 * lam ** 2 - 2.0 * model.delta * lam + 1.0
    a = (1.0 - rho) / (4.0 * s2)
    shrink = 1.0 - 2.0 * a * s2
    c2 = a * rho / shrink
    log_c1 = (-model.d / 2.0) * math.log(shrink) \
        + 2.0 * a * (lam * model.b + lam ** 2 * K ** 2 * (1.0 + M) ** 2) / shrink
    if not c2 < a:
        raise TheoryInvariantError(f"c2={c2} >= a={a}")
    r2 = (1.0 + log_c1) / (a - c2)
    gamma = math.exp(log_c1 - (a - c2) * r2)
    log_C = log_c1 + c2 * r2
    if log_C > LOG_FLOAT_MAX:
        raise TheoryInvariantError(f"drift constant C = exp({log_C:.4g}) overflows a float")
    C = max(1.0, math.exp(log_C))
    return DriftConstants(a=a, gamma=gamma, C=C, rho=rho, r=math.sqrt(max(r2, 0.0)),
                          c1=math.exp(log_c1), c2=c2)


def iterated_drift_bound(constants: TheoryConstants, V0: float, t: int) -> float:
    """E V(θ_t) ≤ γ^t V(θ_0) + C/(1−γ)."""
    if t < 0:
        raise BoundDomainError("t must be non-negative")
    return constants.gamma ** t * V0 + constants.C / (1.0 - constants.gamma)


def log_ball_volume(d: int, R: float) -> float:
    return (d / 2.0) * math.log(math.pi) + d * math.log(R) - gammaln(d / 2.0 + 1.0)


def minorization_constants(model: ModelSpec, lam: float, R: float, beta: float = None) -> Minorization:
    """Density floor of the step kernel on the R-ball and the mass α̃_R.

    For ∥θ∥ ≤ R and ∥z∥ ≤ R the Gaussian increment needed to move θ to z
    has norm at most ((λK+2)R + λK(M+1))/s, so the kernel density there is
    at least s^{−d}·φ_d(r*).
    """
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")
    beta = model.beta if beta is None else beta
    s = noise_scale(lam, beta)
    d = model.d
    r_star = ((lam * model.K + 2.0) * R + lam * model.K * (model.M + 1.0)) / s
    log_m_floor = -d * math.log(s) - (d / 2.0) * math.log(2.0 * math.pi) - r_star ** 2 / 2.0
    log_alpha_tilde = min(math.log(ALPHA_TILDE_CAP), log_m_floor + log_ball_volume(d, R))
    return Minorization(log_m_floor, log_alpha_tilde, r_star)


def coupling_rate(model: ModelSpec, lam: float, beta: float = None) -> TheoryConstants:
    """Assemble the full constant bundle for (model, λ, β).

    γ′ < γ″ < γ‴ split [γ, 1] evenly, R is the smallest point of the
    doubling grid with 2C < (γ′ − γ)e^{aR²/2}. κ uses −ln α̃_R per
    regeneration attempt; ``kappa_corrected`` uses −ln(1 − α̃_R).

    Raises:
        StepSizeError: λ outside (0, Δ/K²).
        TheoryInvariantError: The assembled bundle is inconsistent.
    """
    beta = model.beta if beta is None else beta
    drift = drift_constants(model, lam, beta)
    gamma = drift.gamma
    gamma1 = gamma + (1.0 - gamma) / 4.0
    gamma2 = gamma + (1.0 - gamma) / 2.0
    gamma3 = gamma + 3.0 * (1.0 - gamma) / 4.0
    threshold = math.log(2.0 * drift.C) - math.log(gamma1 - gamma)
    R = R_SEARCH_START
    while not threshold < drift.a * R ** 2 / 2.0:
        R *= 2.0
    logger.info("small-set radius R=%g for %s at lambda=%g", R, model.name, lam)
    minor = minorization_constants(model, lam, R, beta)
    c_m = (math.log(gamma3) - math.log(gamma2)) / (math.log(2.0) - math.log(gamma2 - gamma1))
    kappa = min(-math.log(gamma3), c_m * -minor.log_alpha_tilde)
    kappa_corrected = min(-math.log(gamma3), c_m * -math.log1p(-minor.alpha_tilde))
    N = max(1, math.ceil(1.0 / c_m))
    while math.floor(N * c_m) < 1:
        N += 1
    while N > 1 and math.floor((N - 1) * c_m) >= 1:
        N -= 1
    return TheoryConstants(
        model=model.name, d=model.d, lam=lam, beta=beta, a=drift.a, rho=drift.rho,
        gamma=gamma, C=drift.C, r=drift.r, R=R, log_m_floor=minor.log_m_floor,
        log_alpha_tilde=minor.log_alpha_tilde, c_m=c_m, kappa=kappa,
        kappa_corrected=kappa_corrected, N=N, gamma1=gamma1, gamma2=gamma2, gamma3=gamma3,
    )


def coupling_bound(constants: TheoryConstants, V1: float, V2: float, n: int,
                   corrected: bool = False) -> float:
    """P(no coupling by n) ≤ (V1 + V2 + 3)/2 · e^{−κn}, clamped to [0, 1].

    Raises:
        BoundDomainError: n < N.
    """
    if n < constants.N:
        raise BoundDomainError(f"coupling bound holds for n >= N={constants.N}, got {n}")
    log_value = math.log((V1 + V2 + 3.0) / 2.0) - constants.rate(corrected) * n
    return min(1.0, max(0.0, math.exp(min(log_value, 0.0))))


def mixing_transfer_bound(constants: TheoryConstants, V0: float, alphaY: MixingCurve, n: int,
                          corrected: bool = False) -> float:
    """α^θ(n) ≤ α^Y(⌊n/2⌋) + (V0 + 3/2 + C/(2(1−γ)))e^{−κn/2}.

    Raises:
        BoundDomainError: n < 2N.
    """
    if n < 2 * constants.N:
        raise BoundDomainError(f"mixing bound holds for n >= 2N={2 * constants.N}, got {n}")
    weight = V0 + 1.5 + constants.C / (2.0 * (1.0 - constants.gamma))
    return alphaY(n // 2) + weight * math.exp(-constants.rate(corrected) * n / 2.0)


def _moment_constant(constants: TheoryConstants, profile: GrowthProfile, V0: float, p: float,
                     lyapunov_scale: bool) -> float:
    if p < 1:
        raise BoundDomainError(f"moment order must be >= 1, got {p}")
    log_gamma_term = gammaln(profile.r * p / 2.0 + 1.0) / p
    if lyapunov_scale:
        log_gamma_term -= (profile.r / 2.0) * math.log(constants.a)
    stationary = V0 + constants.C / (1.0 - constants.gamma)
    return profile.c_phi * (1.0 + math.exp(log_gamma_term + math.log(stationary) / p))


def moment_bound(model: ModelSpec, constants: TheoryConstants, profile: GrowthProfile,
                 V0: float, p: float, lyapunov_scale: bool = False) -> float:
    """Uniform bound c_p on E^{1/p}|φ(θ_t)|^p.

    Params:
        model (ModelSpec): Model the constants were computed for.
        constants (TheoryConstants): Constant bundle.
        profile (GrowthProfile): φ with c_φ and r.
        V0 (float): V(θ_0).
        p (float): Moment order, at least 1.
        lyapunov_scale (bool): Multiply the Γ term by a^{−r/2}, which the
            substitution x = a∥θ∥² requires when a < 1.

    Returns:
        c_p (float): c_φ(1 + Γ(rp/2+1)^{1/p}(V0 + C/(1−γ))^{1/p}).
    """
    if model.name != constants.model:
        raise TheoryInvariantError(f"constants belong to {constants.model}, not {model.name}")
    return _moment_constant(constants, profile, V0, p, lyapunov_scale)


def ibragimov_bound(c: float, alpha: float, eps: float) -> float:
    """|Cov(Ψ1, Ψ2)| ≤ (4 + 5c)α^{1−ε} when E|Ψ_i|^{2/ε+1} ≤ c."""
    if not 0.0 < eps < 1.0:
        raise BoundDomainError(f"eps must lie in (0, 1), got {eps}")
    if not 0.0 <= alpha <= 0.25 or c < 0:
        raise BoundDomainError(f"need 0 <= alpha <= 1/4 and c >= 0, got alpha={alpha}, c={c}")
    return (4.0 + 5.0 * c) * alpha ** (1.0 - eps)


def two_point_dependence(joint) -> Dict[str, float]:
    """Covariance and α-mixing coefficient of two ±1-valued variables.

    Params:
        joint (array): 2×2 law, ``joint[i][j] = P(ζ1 = s_i, ζ2 = s_j)``
            with s = (−1, +1).

    Returns:
        dependence (Dict[str, float]): ``cov`` and ``alpha``, the latter
            maximised over every event pair of σ(ζ1) × σ(ζ2).
    """
    joint = np.asarray(joint, dtype=float)
    if joint.shape != (2, 2) or np.any(joint < 0) or abs(joint.sum() - 1.0) > 1e-12:
        raise ValueError("joint must be a 2x2 probability table")
    signs = np.array([-1.0, 1.0])
    first, second = joint.sum(axis=1), joint.sum(axis=0)
    cov = signs @ joint @ signs - (signs @ first) * (signs @ second)
    alpha = max_event_gap(joint - np.outer(first, second))
    return {"cov": float(cov), "alpha": float(alpha)}


def autocov_bound(constants: TheoryConstants, profile: GrowthProfile, alphaY: MixingCurve,
                  eps: float, l: int, V0: float, corrected: bool = False,
                  lyapunov_scale: bool = False) -> float:
    """|Cov(φ(θ_k), φ(θ_{k+l}))| ≤ Λ(α^Y(⌊l/2⌋)^{1−ε} + e^{−κ⌊l/2⌋/4}).

    Raises:
        BoundDomainError: l < 2N or ε outside (0, 1).
    """
    if l < 2 * constants.N:
        raise BoundDomainError(f"autocovariance bound holds for l >= 2N={2 * constants.N}, got {l}")
    if not 0.0 < eps < 1.0:
        raise BoundDomainError(f"eps must lie in (0, 1), got {eps}")
    q = 2.0 / eps + 1.0
    c_tilde = _moment_constant(constants, profile, V0, q, lyapunov_scale) ** q
    c2 = _moment_constant(constants, profile, V0, 2.0, lyapunov_scale)
    c4 = _moment_constant(constants, profile, V0, 4.0, lyapunov_scale)
    weight = V0 + 1.5 + constants.C / (2.0 * (1.0 - constants.gamma))
    scale = max(4.0 + 5.0 * c_tilde, 2.0 * c2 * c4 * weight ** 0.25)
    half = l // 2
    return scale * (alphaY(half) ** (1.0 - eps) + math.exp(-constants.rate(corrected) * half / 4.0))


def radial_grid(d: int, radius: float, n_points: int = 21) -> np.ndarray:
    """Points t·radius·u for t evenly spaced in [0, 1] along the diagonal u."""
    direction = np.ones(d) / math.sqrt(d)
    return np.linspace(0.0, radius, n_points)[:, None] * direction


def verify_drift(model: ModelSpec, stream, constants: TheoryConstants, theta_grid: Sequence,
                 n_mc: int, seed: int) -> ValidationReport:
    """Monte Carlo check of [QV](θ) ≤ γV(θ) + C with a 3-SE one-sided slack.

    V is evaluated in log space and rescaled by its largest sample before
    averaging, so the check works at ∥θ∥ where V itself overflows.

    Params:
        model (ModelSpec): Model the constants belong to.
        stream (DataStream): Source of the y draws.
        constants (TheoryConstants): Bundle to check.
        theta_grid (Sequence): θ points, e.g. ``radial_grid(d, 3 * r)``.
        n_mc (int): Joint (y, ξ) draws per point.
        seed (int): Seed for the draws.

    Returns:
        report (ValidationReport): ``statistic`` is the smallest
            ln(γV + C) − ln(estimate).
    """
    rng = np.random.default_rng(seed)
    s = noise_scale(constants.lam, constants.beta)
    margins, witness = [], None
    violations = 0
    for theta in np.atleast_2d(np.asarray(theta_grid, dtype=float)):
        ys = stream.sample_marginal(rng, n_mc)
        xi = rng.standard_normal((n_mc, model.d))
        moved = theta - constants.lam * model.H(np.broadcast_to(theta, (n_mc, model.d)), ys) + s * xi
        log_values = constants.log_V(moved)
        peak = float(np.max(log_values))
        scaled = np.exp(log_values - peak)
        mean, se = float(np.mean(scaled)), float(np.std(scaled, ddof=1) / math.sqrt(n_mc))
        log_rhs = float(np.logaddexp(math.log(constants.gamma) + constants.log_V(theta),
                                     math.log(constants.C)))
        rhs = math.exp(min(log_rhs - peak, 700.0))
        log_estimate = float(logsumexp(log_values) - math.log(n_mc))
        margins.append(log_rhs - log_estimate)
        if mean > rhs + 3.0 * se:
            violations += 1
            if witness is None:
                witness = {"theta": theta.tolist()}
                logger.warning("drift inequality violated at theta=%s", witness["theta"])
    worst = min(margins)
    return ValidationReport(
        check="drift",
        passed=violations == 0,
        statistic=worst,
        n_checked=len(margins),
        n_violations=violations,
        witness=witness,
        details={"n_mc": n_mc, "gamma": constants.gamma, "C": constants.C, "a": constants.a},
    )


def lambda_sweep(model: ModelSpec, lambdas: Sequence[float]) -> List[Dict]:
    """Rows (λ, a, γ, C, κ, N) for each step size; invalid λ rows carry the error."""
    rows = []
    for lam in lambdas:
        try:
            constants = coupling_rate(model, lam)
        except (StepSizeError, TheoryInvariantError) as error:
            rows.append({"lambda": lam, "valid": False, "error": str(error)})
            continue
        rows.append({
            "lambda": lam, "valid": True, "a": constants.a, "gamma": constants.gamma,
            "C": constants.C, "R": constants.R, "kappa": constants.kappa,
            "kappa_corrected": constants.kappa_corrected, "N": constants.N,
        })
    return rows
