"""Estimators and limit-theorem diagnostics over chain output."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, NamedTuple, Optional, Tuple

import numpy as np
from scipy import stats as sps

from . import LangevinMixError

logger = logging.getLogger(__name__)


class InsufficientDataError(LangevinMixError):
    """Not enough samples for the requested estimate."""
    pass


class BinningMismatchError(LangevinMixError):
    """Two empirical laws do not share their binning."""
    pass


class RateFitError(LangevinMixError):
    """Too few positive points to fit an exponential rate."""
    pass


@dataclass
class SeriesStats:
    n: int
    mean: float
    variance: float
    autocov: Dict[int, float]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InsufficientDataError("empty series")
        if abs(self.autocov.get(0, self.variance) - self.variance) > 1e-12:
            raise ValueError("lag-0 autocovariance must equal the variance")

    def autocorrelation(self) -> Dict[int, float]:
        if self.variance == 0:
            return {lag: 0.0 for lag in self.autocov}
        return {lag: value / self.variance for lag, value in self.autocov.items()}


@dataclass
class DonskerPath:
    """B_n(k/n) = S_k/√n for k = 0..n, optionally divided by σ̂."""

    n: int
    sigma_hat: float
    values: np.ndarray
    studentized: Optional[np.ndarray] = None

    def at(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        return float(self.values[int(math.floor(self.n * t))])

    @property
    def endpoint(self) -> float:
        return float(self.values[-1])


@dataclass
class EmpiricalLaw:
    """Histogram masses on fixed edges plus the mass below and above the box."""

    edges: np.ndarray
    masses: np.ndarray
    below: float = 0.0
    above: float = 0.0
    total: int = 0

    def __post_init__(self) -> None:
        self.edges = np.asarray(self.edges, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        if self.masses.shape != (len(self.edges) - 1,):
            raise BinningMismatchError("need one mass per bin")
        if abs(self.masses.sum() + self.below + self.above - 1.0) > 1e-9:
            raise ValueError("masses must sum to 1")

    @classmethod
    def from_samples(cls, samples, lo: float, hi: float, bins: int) -> "EmpiricalLaw":
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            raise InsufficientDataError("no samples")
        edges = np.linspace(lo, hi, bins + 1)
        counts, _ = np.histogram(samples, bins=edges)
        total = samples.size
        below = float(np.sum(samples < lo)) / total
        above = float(np.sum(samples > hi)) / total
        if below + above > 1e-3:
            logger.warning("%.3g of the samples fall outside [%g, %g]", below + above, lo, hi)
        return cls(edges, counts / total, below, above, total)

    @classmethod
    def from_masses(cls, edges, masses, below: float = 0.0, above: float = 0.0) -> "EmpiricalLaw":
        masses = np.asarray(masses, dtype=float)
        return cls(edges, masses, below, above, 0)

    @property
    def outside(self) -> float:
        return self.below + self.above

    def same_binning(self, other: "EmpiricalLaw") -> bool:
        return self.edges.shape == other.edges.shape and np.allclose(self.edges, other.edges, rtol=0, atol=1e-12)


class RateFit(NamedTuple):
    rate: float
    intercept: float
    r_squared: float
    n_points: int


class BatchMeans(NamedTuple):
    sigma2: float
    se: float
    batch: int
    n_batches: int


def _series(values) -> np.ndarray:
    series = np.asarray(values, dtype=float)
    if series.ndim != 1:
        raise ValueError("expected a one-dimensional series")
    return series


def time_average(run, profile, burn_in: int = 0) -> float:
    """Mean of φ(θ_t) over t ≥ burn_in with compensated summation.

    Params:
        run (ChainRun|np.ndarray): A chain run or an array of states.
        profile (GrowthProfile): Test function φ.
        burn_in (int): Number of leading states to drop.

    Returns:
        average (float): (1/(n − burn_in)) Σ φ(θ_t).

    Raises:
        InsufficientDataError: Nothing is left after the burn-in.
    """
    thetas = np.asarray(getattr(run, "thetas", run), dtype=float)
    if burn_in < 0 or burn_in >= len(thetas):
        raise InsufficientDataError(f"burn-in {burn_in} leaves no samples out of {len(thetas)}")
    values = np.asarray(profile.phi(thetas[burn_in:]), dtype=float)
    return math.fsum(values.tolist()) / len(values)


def autocovariance(series, max_lag: int) -> SeriesStats:
    """Mean-centred autocovariances, normalised by n, up to ``max_lag``."""
    x = _series(series)
    n = len(x)
    if n <= 10 * max_lag or n < 2:
        raise InsufficientDataError(f"series of length {n} too short for max_lag={max_lag}")
    mean = math.fsum(x.tolist()) / n
    centred = x - mean
    autocov = {lag: float(np.dot(centred[: n - lag], centred[lag:]) / n) for lag in range(max_lag + 1)}
    return SeriesStats(n=n, mean=mean, variance=autocov[0], autocov=autocov)


def batch_means_se(series, batch: Optional[int] = None) -> BatchMeans:
    """Batch-means σ̂² with its chi-square standard error.

    The default batch is ⌊√n⌋.
    """
    x = _series(series)
    batch = batch or max(1, int(math.isqrt(len(x))))
    n_batches = len(x) // batch
    if n_batches < 2:
        raise InsufficientDataError(f"{len(x)} samples give fewer than two batches of {batch}")
    means = x[: n_batches * batch].reshape(n_batches, batch).mean(axis=1)
    sigma2 = float(np.var(means, ddof=1) * batch)
    return BatchMeans(sigma2, sigma2 * math.sqrt(2.0 / (n_batches - 1)), batch, n_batches)


def long_run_variance(series, method: str = "batch_means", window: Optional[int] = None) -> float:
    """σ² = lim E S_n²/n by batch means or by a truncated autocovariance sum.

    ``window`` is the batch size for batch means (default ⌊√n⌋) and the
    truncation lag for the sum (default ⌊n^{1/3}⌋).
    """
    x = _series(series)
    if method == "batch_means":
        return batch_means_se(x, window).sigma2
    if method != "truncated_sum":
        raise ValueError(f"unknown long-run variance method {method!r}")
    window = window or max(1, int(round(len(x) ** (1.0 / 3.0))))
    stats = autocovariance(x, window)
    value = stats.autocov[0] + 2.0 * sum(stats.autocov[lag] for lag in range(1, window + 1))
    if value < 0:
        logger.warning("truncated autocovariance sum %.3g < 0 floored at 0", value)
        value = 0.0
    return float(value)


def partial_sum_decomposition(series) -> Tuple[float, float, float]:
    """(S_n²/n, (1/n)Σ X_k², (2/n)Σ_{k<l} X_k X_l) of a finite series."""
    x = _series(series)
    n = len(x)
    if n == 0:
        raise InsufficientDataError("empty series")
    direct = float(np.sum(x)) ** 2 / n
    diagonal = float(np.dot(x, x)) / n
    preceding = np.concatenate([[0.0], np.cumsum(x)[:-1]])
    cross = 2.0 * float(np.dot(x, preceding)) / n
    return direct, diagonal, cross


def donsker_path(series, sigma_hat: float) -> DonskerPath:
    """Partial-sum process S_{⌊nt⌋}/√n of an already centred series."""
    x = _series(series)
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be non-negative")
    n = len(x)
    values = np.concatenate([[0.0], np.cumsum(x)]) / math.sqrt(max(n, 1))
    studentized = values / sigma_hat if sigma_hat > 0 else None
    return DonskerPath(n=n, sigma_hat=float(sigma_hat), values=values, studentized=studentized)


def ks_normality(samples) -> Tuple[float, float]:
    """Two-sided KS statistic against N(0, 1) and its asymptotic p-value."""
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 100:
        raise InsufficientDataError(f"KS test needs at least 100 samples, got {len(x)}")
    result = sps.kstest(x, "norm", method="asymp")
    return float(result.statistic), float(result.pvalue)


def tv_distance(p: EmpiricalLaw, q: EmpiricalLaw) -> float:
    """Half the L1 distance of bin masses, the out-of-box mass included."""
    if not p.same_binning(q):
        raise BinningMismatchError("laws are binned differently")
    l1 = np.sum(np.abs(p.masses - q.masses)) + abs(p.below - q.below) + abs(p.above - q.above)
    return float(min(1.0, 0.5 * l1))


def exp_rate_fit(curve: Mapping[int, float]) -> RateFit:
    """Least-squares line through (n, ln value); rate = −slope.

    Raises:
        RateFitError: Fewer than four positive values.
    """
    points = sorted((n, v) for n, v in curve.items() if v > 0)
    if len(points) < 4:
        raise RateFitError(f"{len(points)} positive points; need at least 4")
    ns = np.array([n for n, _ in points], dtype=float)
    logs = np.log([v for _, v in points])
    if np.ptp(logs) == 0:
        return RateFit(0.0, float(logs[0]), 1.0, len(points))
    fit = sps.linregress(ns, logs)
    return RateFit(float(-fit.slope), float(fit.intercept), float(fit.rvalue ** 2), len(points))


def autocov_window_agreement(series, start1: int, start2: int, width: int,
                             max_lag: int) -> Dict[str, object]:
    """Compare lag autocovariances on two windows of one trajectory.

    The standard error of each estimate is the batch-means error of the lag
    products within its window; a lag agrees when the two estimates differ
    by at most 4 combined standard errors.
    """
    x = _series(series)
    if max(start1, start2) + width > len(x):
        raise InsufficientDataError("windows run past the end of the series")
    rows = []
    for lag in range(max_lag + 1):
        estimates, errors = [], []
        for start in (start1, start2):
            window = x[start:start + width]
            centred = window - window.mean()
            products = centred[: width - lag] * centred[lag:]
            estimates.append(float(products.mean()))
            errors.append(math.sqrt(batch_means_se(products).sigma2 / len(products)))
        combined = math.hypot(*errors)
        rows.append({
            "lag": lag,
            "first": estimates[0],
            "second": estimates[1],
            "se": combined,
            "agree": abs(estimates[0] - estimates[1]) <= 4.0 * combined,
        })
    return {"rows": rows, "pass": all(row["agree"] for row in rows)}
