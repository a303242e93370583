"""Stationary, almost-surely bounded data streams and their mixing coefficients.

Streams are value-semantic: ``next`` takes a state and returns a new one.
Every stream starts from its stationary law, so a path sampled here is a
window of a strictly stationary process.
"""
import logging
import math
import pathlib
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.linalg import null_space

from . import LangevinMixError

logger = logging.getLogger(__name__)

MAX_EXACT_STATES = 16
MAX_PARTITION_CELLS = 16
ALPHA_CEILING = 0.25

TRAJECTORY_HEADER = np.dtype([("m", "<u8"), ("M", "<f8"), ("length", "<u8")])


class InvalidStreamError(LangevinMixError):
    """Stream parameters are inconsistent."""
    pass


class TooManyStatesError(LangevinMixError):
    """Exact enumeration requested for too many states."""
    pass


class InsufficientDataError(LangevinMixError):
    """The trace is too short for the requested lag."""
    pass


class TrajectoryRangeError(LangevinMixError):
    """Index outside of a frozen trajectory."""
    pass


def _subset_masks(size: int) -> np.ndarray:
    codes = np.arange(2 ** size)[:, None]
    return ((codes >> np.arange(size)) & 1).astype(float)


def max_event_gap(gap: np.ndarray) -> float:
    """max over unions A, B of cells of |Σ_{i∈A, j∈B} gap_ij|.

    Rows are enumerated exhaustively; for a fixed A the best B takes every
    positive (or every negative) column sum.
    """
    column_sums = _subset_masks(gap.shape[0]) @ gap
    positive = np.clip(column_sums, 0.0, None).sum(axis=1)
    negative = np.clip(-column_sums, 0.0, None).sum(axis=1)
    return float(max(positive.max(), negative.max()))


@dataclass(frozen=True, eq=False)
class FiniteMarkovParams:
    """Finite-state stationary Markov environment.

    Params:
        states (np.ndarray): ``(S, m)`` embedding of each state.
        P (np.ndarray): Row-stochastic transition matrix.
        pi0 (np.ndarray): Stationary distribution of ``P``.
    """

    states: np.ndarray
    P: np.ndarray
    pi0: np.ndarray

    def __post_init__(self) -> None:
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        P = np.asarray(self.P, dtype=float)
        pi0 = np.asarray(self.pi0, dtype=float)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "pi0", pi0)
        S = states.shape[0]
        if P.shape != (S, S) or pi0.shape != (S,):
            raise InvalidStreamError(f"shape mismatch: states {states.shape}, P {P.shape}, pi0 {pi0.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise InvalidStreamError("rows of P must be non-negative and sum to 1")
        if np.any(pi0 < 0) or abs(pi0.sum() - 1.0) > 1e-12:
            raise InvalidStreamError("pi0 must be a probability vector")
        if np.max(np.abs(pi0 @ P - pi0)) > 1e-10:
            raise InvalidStreamError("pi0 is not stationary for P")

    @classmethod
    def from_matrix(cls, states, P) -> "FiniteMarkovParams":
        """Build the parameters, solving ``π P = π`` for the stationary law."""
        P = np.asarray(P, dtype=float)
        kernel = null_space(P.T - np.eye(P.shape[0]))
        if kernel.shape[1] != 1:
            raise InvalidStreamError(f"P has {kernel.shape[1]} stationary laws; need exactly one")
        pi0 = np.abs(kernel[:, 0])
        return cls(states=states, P=P, pi0=pi0 / pi0.sum())

    @classmethod
    def symmetric_two_state(cls, p: float, value: float = 1.0) -> "FiniteMarkovParams":
        """The ±value chain that stays put with probability p."""
        return cls(
            states=[[-value], [value]],
            P=[[p, 1.0 - p], [1.0 - p, p]],
            pi0=[0.5, 0.5],
        )

    @classmethod
    def iid(cls, states, weights) -> "FiniteMarkovParams":
        weights = np.asarray(weights, dtype=float)
        weights = weights / weights.sum()
        return cls(states=states, P=np.tile(weights, (len(weights), 1)), pi0=weights)

    @property
    def n_states(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class MixingCurve:
    """α(n) for a range of lags.

    Lookups past the last tabulated lag return the last value, which is an
    upper bound for a non-increasing curve. ``exact_from`` marks the first
    lag from which an otherwise conservative curve is exact.
    """

    values: Dict[int, float]
    exact: bool
    exact_from: Optional[int] = None

    def __post_init__(self) -> None:
        lags = sorted(self.values)
        previous = ALPHA_CEILING
        for n in lags:
            value = self.values[n]
            if not -1e-15 <= value <= ALPHA_CEILING + 1e-15:
                raise InvalidStreamError(f"alpha({n}) = {value} outside [0, 1/4]")
            if value > previous + 1e-12:
                raise InvalidStreamError(f"mixing curve increases at n={n}")
            previous = value

    def __call__(self, n: int) -> float:
        if n in self.values:
            return self.values[n]
        lags = sorted(self.values)
        if not lags or n < lags[0]:
            return ALPHA_CEILING
        earlier = [lag for lag in lags if lag <= n]
        return self.values[earlier[-1]]

    def exact_at(self, n: int) -> bool:
        return self.exact or (self.exact_from is not None and n >= self.exact_from)

    @classmethod
    def geometric(cls, rate: float, max_n: int, scale: float = ALPHA_CEILING,
                  exact: bool = False) -> "MixingCurve":
        return cls({n: scale * rate ** n for n in range(max_n + 1)}, exact)

    def to_rows(self):
        return [(n, self.values[n]) for n in sorted(self.values)]


class DataStream:
    """Base class of the stationary bounded streams."""

    kind = "abstract"

    def __init__(self, m: int, M: float) -> None:
        if m < 1 or not M > 0:
            raise InvalidStreamError(f"need m >= 1 and M > 0, got m={m}, M={M}")
        self.m = m
        self.M = float(M)

    def initial_state(self, rng: np.random.Generator) -> Any:
        raise NotImplementedError

    def next(self, state: Any, rng: np.random.Generator) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def sample_paths(self, rng: np.random.Generator, n_paths: int, length: int) -> np.ndarray:
        """Independent stationary paths, shape ``(n_paths, length, m)``."""
        raise NotImplementedError

    def sample_marginal(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Independent draws from the one-dimensional marginal, ``(n, m)``."""
        raise NotImplementedError

    def mixing_curve(self, max_n: int) -> MixingCurve:
        raise NotImplementedError

    def moments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Stationary mean vector and covariance matrix."""
        raise NotImplementedError

    def autocorrelation(self, max_lag: int) -> Dict[int, float]:
        """Lag correlations of a scalar stream (lags ≥ 1)."""
        raise NotImplementedError

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "m": self.m, "M": self.M}

    def _require_scalar(self) -> None:
        if self.m != 1:
            raise InvalidStreamError("autocorrelation is defined for scalar streams only")


class FiniteMarkovStream(DataStream):
    """Stationary finite-state Markov chain on embedded points."""

    kind = "finite_markov"

    def __init__(self, params: FiniteMarkovParams) -> None:
        self.params = params
        self._cumulative = np.cumsum(params.P, axis=1)
        self._cumulative_pi = np.cumsum(params.pi0)
        super().__init__(params.states.shape[1], float(np.max(np.linalg.norm(params.states, axis=1))) or 1.0)

    def _draw(self, cumulative: np.ndarray, u: np.ndarray) -> np.ndarray:
        index = (u[..., None] >= cumulative).sum(axis=-1)
        return np.minimum(index, self.params.n_states - 1)

    def initial_state(self, rng: np.random.Generator) -> int:
        return int(self._draw(self._cumulative_pi, np.asarray(rng.random())))

    def next(self, state: int, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
        point = self.params.states[state].copy()
        following = int(self._draw(self._cumulative[state], np.asarray(rng.random())))
        return point, following

    def sample_state_paths(self, rng: np.random.Generator, n_paths: int, length: int) -> np.ndarray:
        indices = np.empty((n_paths, length), dtype=np.int64)
        if length == 0:
            return indices
        uniforms = rng.random((length, n_paths))
        current = self._draw(self._cumulative_pi, rng.random(n_paths))
        for t in range(length):
            indices[:, t] = current
            current = self._draw(self._cumulative[current], uniforms[t])
        return indices

    def sample_paths(self, rng, n_paths, length):
        return self.params.states[self.sample_state_paths(rng, n_paths, length)]

    def sample_marginal(self, rng, n):
        return self.params.states[self._draw(self._cumulative_pi, rng.random(n))]

    def mixing_curve(self, max_n: int) -> MixingCurve:
        return MixingCurve({n: exact_alpha_finite(self.params, n) for n in range(max_n + 1)}, True)

    def moments(self):
        states, pi0 = self.params.states, self.params.pi0
        mean = pi0 @ states
        cov = states.T @ (pi0[:, None] * states) - np.outer(mean, mean)
        return mean, cov

    def autocorrelation(self, max_lag: int) -> Dict[int, float]:
        self._require_scalar()
        values = self.params.states[:, 0]
        pi0 = self.params.pi0
        mean = pi0 @ values
        var = pi0 @ values ** 2 - mean ** 2
        if var <= 0:
            return {lag: 0.0 for lag in range(1, max_lag + 1)}
        result = {}
        propagated = values.copy()
        for lag in range(1, max_lag + 1):
            propagated = self.params.P @ propagated
            result[lag] = float((pi0 @ (values * propagated) - mean ** 2) / var)
        return result

    def describe(self):
        body = super().describe()
        body.update({"states": self.params.states.tolist(), "P": self.params.P.tolist(),
                     "pi0": self.params.pi0.tolist()})
        return body


class IIDBoundedStream(DataStream):
    """I.i.d. uniform draws on the box [−half_width, half_width]^m."""

    kind = "iid_bounded"

    def __init__(self, m: int, half_width: float = 1.0) -> None:
        if not half_width > 0:
            raise InvalidStreamError(f"half_width must be positive, got {half_width}")
        self.half_width = float(half_width)
        super().__init__(m, self.half_width * math.sqrt(m))

    def initial_state(self, rng):
        return None

    def next(self, state, rng):
        return rng.uniform(-self.half_width, self.half_width, self.m), None

    def sample_paths(self, rng, n_paths, length):
        return rng.uniform(-self.half_width, self.half_width, (n_paths, length, self.m))

    def sample_marginal(self, rng, n):
        return rng.uniform(-self.half_width, self.half_width, (n, self.m))

    def mixing_curve(self, max_n):
        return MixingCurve({n: (ALPHA_CEILING if n == 0 else 0.0) for n in range(max_n + 1)}, True)

    def moments(self):
        return np.zeros(self.m), np.eye(self.m) * self.half_width ** 2 / 3.0

    def autocorrelation(self, max_lag):
        self._require_scalar()
        return {lag: 0.0 for lag in range(1, max_lag + 1)}

    def quadrature(self, n_nodes: int) -> FiniteMarkovParams:
        """Equiprobable midpoint nodes approximating the scalar marginal."""
        self._require_scalar()
        width = 2.0 * self.half_width / n_nodes
        nodes = -self.half_width + width * (np.arange(n_nodes) + 0.5)
        return FiniteMarkovParams.iid(nodes[:, None], np.ones(n_nodes))

    def describe(self):
        body = super().describe()
        body["half_width"] = self.half_width
        return body


class MovingAverageStream(DataStream):
    """Window average of i.i.d. box innovations, clamped to norm ``clamp``.

    Y_t and Y_{t+n} share no innovation once n ≥ window, so the stream is
    exactly stationary after ``window`` steps and α(n) = 0 beyond the window.
    """

    kind = "bounded_moving_average"

    def __init__(self, m: int, window: int, half_width: float = 1.0,
                 clamp: Optional[float] = None) -> None:
        if window < 1 or not half_width > 0:
            raise InvalidStreamError(f"need window >= 1 and half_width > 0, got {window}, {half_width}")
        self.window = int(window)
        self.half_width = float(half_width)
        natural = self.half_width * math.sqrt(m)
        self.clamp = float(clamp) if clamp is not None else natural
        super().__init__(m, min(self.clamp, natural))

    def _clamp(self, points: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(points, axis=-1, keepdims=True)
        scale = np.where(norms > self.clamp, self.clamp / np.where(norms == 0, 1.0, norms), 1.0)
        return points * scale

    def _innovations(self, rng, size):
        return rng.uniform(-self.half_width, self.half_width, size + (self.m,))

    def initial_state(self, rng):
        state = np.zeros((self.window, self.m))
        for _ in range(10 * self.window):
            _, state = self.next(state, rng)
        return state

    def next(self, state, rng):
        state = np.vstack([state[1:], self._innovations(rng, ())[None, :]])
        return self._clamp(state.mean(axis=0)), state

    def sample_paths(self, rng, n_paths, length):
        innovations = self._innovations(rng, (n_paths, length + self.window - 1))
        cumulative = np.concatenate(
            [np.zeros((n_paths, 1, self.m)), np.cumsum(innovations, axis=1)], axis=1)
        averages = (cumulative[:, self.window:] - cumulative[:, :-self.window]) / self.window
        return self._clamp(averages)

    def sample_marginal(self, rng, n):
        return self._clamp(self._innovations(rng, (n, self.window)).mean(axis=1))

    def mixing_curve(self, max_n):
        """Exact zeros beyond the window; the 1/4 ceiling up to it.

        Within the window α(n) depends on the innovation law and is not
        computed, so those lags carry the ceiling and the curve is exact
        only from ``window + 1`` on.
        """
        values = {n: (0.0 if n > self.window else ALPHA_CEILING) for n in range(max_n + 1)}
        return MixingCurve(values, False, exact_from=self.window + 1)

    def moments(self):
        # unclamped values; exact whenever the clamp never binds
        return np.zeros(self.m), np.eye(self.m) * self.half_width ** 2 / (3.0 * self.window)

    def autocorrelation(self, max_lag):
        self._require_scalar()
        return {lag: max(self.window - lag, 0) / self.window for lag in range(1, max_lag + 1)}

    def describe(self):
        body = super().describe()
        body.update({"window": self.window, "half_width": self.half_width, "clamp": self.clamp})
        return body


def stream_next(stream: DataStream, state: Any, rng: np.random.Generator) -> Tuple[np.ndarray, Any]:
    """Emit the current data point and advance the stream state."""
    return stream.next(state, rng)


def exact_alpha_finite(params: FiniteMarkovParams, n: int) -> float:
    """α(σ(Y_0), σ(Y_n)) of a stationary finite Markov chain.

    Every event pair (A, B) of subsets of the state space is covered: rows
    are enumerated over all 2^S subsets and the optimal column set is read
    off the signs of the row sums.

    Params:
        params (FiniteMarkovParams): Chain parameters.
        n (int): Lag.

    Returns:
        alpha (float): The dependence coefficient, reported as α^Y(n).

    Raises:
        TooManyStatesError: More than 16 states.
    """
    if params.n_states > MAX_EXACT_STATES:
        raise TooManyStatesError(f"{params.n_states} states; exact enumeration supports at most {MAX_EXACT_STATES}")
    if n < 0:
        raise ValueError("lag must be non-negative")
    pi0 = params.pi0
    transition = np.linalg.matrix_power(params.P, n)
    joint = pi0[:, None] * transition
    gap = joint - np.outer(pi0, pi0 @ transition)
    return min(max_event_gap(gap), ALPHA_CEILING)


@dataclass(frozen=True)
class PartitionSpec:
    """Cells of one coordinate cut at the interior ``edges``."""

    coordinate: int = 0
    edges: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def n_cells(self) -> int:
        return len(self.edges) + 1

    @classmethod
    def quantiles(cls, trace, n_cells: int = 8, coordinate: int = 0) -> "PartitionSpec":
        """Equiprobable cells from the empirical quantiles of the trace.

        Ties (discrete traces) merge cells, so fewer may come back.
        """
        values = _coordinate(trace, coordinate)
        levels = np.linspace(0.0, 1.0, n_cells + 1)[1:-1]
        edges = np.unique(np.quantile(values, levels, method="higher"))
        edges = edges[edges > values.min()]
        return cls(coordinate, tuple(float(edge) for edge in edges))

    def cells(self, values: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.edges), values, side="right")


def _coordinate(trace, coordinate: int) -> np.ndarray:
    trace = np.asarray(trace, dtype=float)
    return trace if trace.ndim == 1 else trace[:, coordinate]


def empirical_alpha_partition(trace, partition: PartitionSpec, n: int) -> float:
    """Plug-in lower bound of α(n) over events generated by a partition.

    Params:
        trace (array): ``(T,)`` or ``(T, k)`` observations of a stationary
            process.
        partition (PartitionSpec): Cells of one coordinate.
        n (int): Lag.

    Returns:
        alpha (float): max over unions A, B of cells of
            |P̂(W_0∈A, W_n∈B) − P̂(W_0∈A)P̂(W_n∈B)|.

    Raises:
        InsufficientDataError: Trace shorter than 10·n.
    """
    values = _coordinate(trace, partition.coordinate)
    length = len(values)
    if length < max(10 * n, 2) or length - n < 1:
        raise InsufficientDataError(f"trace of length {length} is too short for lag {n}")
    if partition.n_cells < 2:
        raise InvalidStreamError("partition needs at least two cells")
    cells = partition.cells(values)
    count = partition.n_cells
    head, tail = cells[: length - n], cells[n:]
    joint = np.bincount(head * count + tail, minlength=count * count).reshape(count, count)
    joint = joint / float(length - n)
    gap = joint - np.outer(joint.sum(axis=1), joint.sum(axis=0))
    if count > MAX_PARTITION_CELLS:
        logger.warning("partition has %d cells; falling back to single-cell events", count)
        return float(np.max(np.abs(gap)))
    return max_event_gap(gap)


def summability_report(curve: MixingCurve, eps: float, tol: float = 1e-10) -> Dict[str, Any]:
    """Partial sums of α(n)^{1−ε} and the first lag whose increment is below tol."""
    partial = 0.0
    converged_at = None
    for n in sorted(lag for lag in curve.values if lag >= 1):
        increment = curve.values[n] ** (1.0 - eps)
        partial += increment
        if increment < tol and converged_at is None:
            converged_at = n
    return {
        "eps": eps,
        "partial_sum": partial,
        "converged": converged_at is not None,
        "converged_at": converged_at,
        "exact": curve.exact,
        "exact_from": curve.exact_from,
    }


@dataclass(frozen=True, eq=False)
class FrozenTrajectory:
    """An immutable recorded environment path starting at time ``offset``."""

    points: np.ndarray
    M: float
    offset: int = 0

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=float, copy=True)
        if points.ndim == 1:
            points = points[:, None]
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]

    def at(self, t: int) -> np.ndarray:
        """Point at absolute time t."""
        index = t - self.offset
        if not 0 <= index < len(self):
            raise TrajectoryRangeError(f"time {t} outside [{self.offset}, {self.offset + len(self)})")
        return self.points[index]

    def covers(self, start: int, end: int) -> bool:
        return self.offset <= start and end <= self.offset + len(self)

    def save(self, path: Union[str, pathlib.Path]) -> None:
        """Write the binary trajectory file (header, then row-major float64)."""
        header = np.array([(self.m, self.M, len(self))], dtype=TRAJECTORY_HEADER)
        with open(path, "wb") as file:
            header.tofile(file)
            np.ascontiguousarray(self.points, dtype="<f8").tofile(file)

    @classmethod
    def load(cls, path: Union[str, pathlib.Path]) -> "FrozenTrajectory":
        with open(path, "rb") as file:
            header = np.fromfile(file, dtype=TRAJECTORY_HEADER, count=1)
            if header.size != 1:
                raise TrajectoryRangeError(f"{path} has no trajectory header")
            m, M, length = int(header["m"][0]), float(header["M"][0]), int(header["length"][0])
            data = np.fromfile(file, dtype="<f8", count=m * length)
        if data.size != m * length:
            raise TrajectoryRangeError(f"{path} holds {data.size} values, header says {m * length}")
        return cls(data.reshape(length, m), M)


def shift_trajectory(traj: FrozenTrajectory, m: int) -> FrozenTrajectory:
    """Left shift: (S^m y)_k = y_{k+m}."""
    if not 0 <= m <= len(traj):
        raise TrajectoryRangeError(f"cannot shift a trajectory of length {len(traj)} by {m}")
    return FrozenTrajectory(traj.points[m:], traj.M, traj.offset)


def record_trajectory(stream: DataStream, rng: np.random.Generator, length: int) -> FrozenTrajectory:
    """Freeze one stationary path of the stream."""
    return FrozenTrajectory(stream.sample_paths(rng, 1, length)[0], stream.M)
