"""Closed-form and brute-force references for the engine and the estimators."""
import csv
import logging
import math
import pathlib
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from . import LangevinMixError
from .environment import FiniteMarkovParams
from .model import DimensionMismatchError, MissingPotentialError, ModelSpec
from .stats import EmpiricalLaw
from .theory import noise_scale

logger = logging.getLogger(__name__)

AUTOCORR_TAIL = 1e-12


class OracleConvergenceError(LangevinMixError):
    """A fixed-point or descent iteration did not converge."""
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform 1-D θ grid of ``n_cells`` cells on [lo, hi]."""

    lo: float
    hi: float
    n_cells: int

    def __post_init__(self) -> None:
        if not (self.hi > self.lo and self.n_cells >= 2):
            raise ValueError(f"invalid grid [{self.lo}, {self.hi}] with {self.n_cells} cells")

    @classmethod
    def covering(cls, width: float, lo: float, hi: float) -> "GridSpec":
        """Grid with cells of the given width, extended to contain [lo, hi]."""
        n_cells = int(math.ceil((hi - lo) / width))
        return cls(lo, lo + n_cells * width, n_cells)

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.lo + self.width * (np.arange(self.n_cells) + 0.5)

    def cell_of(self, theta: float) -> int:
        if not self.lo <= theta <= self.hi:
            raise ValueError(f"theta={theta} outside the grid [{self.lo}, {self.hi}]")
        return min(int((theta - self.lo) / self.width), self.n_cells - 1)


@dataclass
class GridLaw:
    """Joint mass over θ-cell × environment state."""

    grid: GridSpec
    weights: np.ndarray
    contraction_log: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if np.any(self.weights < -1e-15) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("grid law weights must be a probability table")

    def marginal(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def to_empirical_law(self, first_cell: int = 0, n_cells: Optional[int] = None) -> EmpiricalLaw:
        """θ-marginal as a histogram on cells [first_cell, first_cell + n_cells).

        Mass in the cells left out becomes the below/above mass of the law.
        """
        marginal = self.marginal() / self.marginal().sum()
        n_cells = self.grid.n_cells - first_cell if n_cells is None else n_cells
        last = first_cell + n_cells
        if first_cell < 0 or n_cells < 1 or last > self.grid.n_cells:
            raise ValueError(f"cells [{first_cell}, {last}) outside a grid of {self.grid.n_cells}")
        masses = marginal[first_cell:last]
        below = float(marginal[:first_cell].sum())
        above = max(0.0, 1.0 - below - float(masses.sum()))
        return EmpiricalLaw.from_masses(self.grid.edges[first_cell:last + 1], masses, below, above)

    def mean(self) -> float:
        return float(self.grid.centers @ self.marginal())

    def to_csv(self, path: Union[str, pathlib.Path]) -> None:
        with open(path, "w", newline="") as file:
            writer = csv.writer(file)
            writer.writerow(["cell_center", "state", "mass"])
            for i, center in enumerate(self.grid.centers):
                for state, mass in enumerate(self.weights[i]):
                    writer.writerow([repr(float(center)), state, repr(float(mass))])


def _cell_kernels(model: ModelSpec, env: FiniteMarkovParams, lam: float, beta: float,
                  grid: GridSpec) -> np.ndarray:
    """K[s, i, j]: probability of moving from cell i to cell j when Y = state s.

    Cells are represented by their centers; mass beyond the grid goes to the
    boundary cells.
    """
    if model.d != 1:
        raise DimensionMismatchError(f"grid oracle needs d=1, model has d={model.d}")
    if env.states.shape[1] != model.m:
        raise DimensionMismatchError(f"environment width {env.states.shape[1]} != model m {model.m}")
    s = noise_scale(lam, beta)
    centers = grid.centers[:, None]
    edges = grid.edges
    kernels = np.empty((env.n_states, grid.n_cells, grid.n_cells))
    for index, y in enumerate(env.states):
        means = centers - lam * model.H(centers, np.broadcast_to(y, (grid.n_cells, model.m)))
        cdf = ndtr((edges[None, :] - means) / s)
        cdf[:, 0] = 0.0
        cdf[:, -1] = 1.0
        kernels[index] = np.diff(cdf, axis=1)
    return kernels


def _propagate(kernels: np.ndarray, P: np.ndarray, weights: np.ndarray) -> np.ndarray:
    moved = np.einsum("sij,is->js", kernels, weights)
    return moved @ P


def _point_mass(grid: GridSpec, env: FiniteMarkovParams, theta0: float) -> np.ndarray:
    weights = np.zeros((grid.n_cells, env.n_states))
    weights[grid.cell_of(theta0)] = env.pi0
    return weights


def grid_stationary_law(model: ModelSpec, env: FiniteMarkovParams, lam: float, grid: GridSpec,
                        iters: int = 10000, tol: float = 1e-10, beta: Optional[float] = None,
                        theta0: float = 0.0) -> GridLaw:
    """Fixed point of the discretised joint (θ, Y) transition.

    Params:
        model (ModelSpec): One-dimensional model.
        env (FiniteMarkovParams): Finite environment.
        lam (float): Step size.
        grid (GridSpec): θ grid, covering at least six stationary deviations.
        iters (int): Iteration cap.
        tol (float): L1 change at which the iteration stops.
        beta (float): Inverse temperature; defaults to the model's.
        theta0 (float): Start of the point mass.

    Returns:
        law (GridLaw): Fixed point with the per-iteration L1 change log.

    Raises:
        OracleConvergenceError: No convergence within ``iters``.
    """
    beta = model.beta if beta is None else beta
    kernels = _cell_kernels(model, env, lam, beta, grid)
    weights = _point_mass(grid, env, theta0)
    log = []
    for _ in range(iters):
        following = _propagate(kernels, env.P, weights)
        change = float(np.abs(following - weights).sum())
        log.append(change)
        weights = following
        if change < tol:
            logger.info("grid law converged after %d iterations", len(log))
            return GridLaw(grid, weights / weights.sum(), log)
    raise OracleConvergenceError(f"grid law still moving by {log[-1]:.3g} after {iters} iterations")


def grid_transient_laws(model: ModelSpec, env: FiniteMarkovParams, lam: float, grid: GridSpec,
                        theta0: float, times: Sequence[int],
                        beta: Optional[float] = None) -> Dict[int, GridLaw]:
    """Discretised law of θ_n for each requested n, started from θ_0 = theta0."""
    beta = model.beta if beta is None else beta
    kernels = _cell_kernels(model, env, lam, beta, grid)
    weights = _point_mass(grid, env, theta0)
    wanted = set(int(t) for t in times)
    laws = {}
    for t in range(max(wanted) + 1):
        if t in wanted:
            laws[t] = GridLaw(grid, weights / weights.sum())
        weights = _propagate(kernels, env.P, weights)
    return laws


class AR1Moments(NamedTuple):
    mean: float
    var: float
    long_run_var: float


def ar1_closed_form(lam: float, env_mean: float, env_var: float,
                    env_autocorr: Optional[Mapping[int, float]] = None,
                    beta: float = 1.0) -> AR1Moments:
    """Stationary moments of θ' = (1−λ)θ + λY + √(2λ/β)ξ with scalar Y.

    With r = 1−λ and s² = 2λ/β:
        var = (λ²σ_Y²(1 + 2Σ_l r^l ρ(l)) + s²)/(1 − r²)
        long-run variance = (λ²σ_Y²(1 + 2Σ_l ρ(l)) + s²)/(1 − r)²
    The correlation sums stop once r^l |ρ(l)| and |ρ(l)| both drop below
    1e-12 or the supplied lags run out.
    """
    if not 0.0 < lam < 2.0:
        raise ValueError(f"lambda must lie in (0, 2), got {lam}")
    r = 1.0 - lam
    s2 = 2.0 * lam / beta
    weighted = plain = 0.0
    for lag in sorted(env_autocorr or {}):
        if lag < 1:
            continue
        rho = env_autocorr[lag]
        if abs(rho) < AUTOCORR_TAIL:
            break
        weighted += r ** lag * rho
        plain += rho
    var = (lam ** 2 * env_var * (1.0 + 2.0 * weighted) + s2) / (1.0 - r ** 2)
    long_run = (lam ** 2 * env_var * (1.0 + 2.0 * plain) + s2) / (1.0 - r) ** 2
    return AR1Moments(env_mean, var, long_run)


def logistic_minimizer(model: ModelSpec, env: FiniteMarkovParams, tol: float = 1e-10,
                       theta_start: Optional[Sequence[float]] = None,
                       max_iter: int = 200000) -> np.ndarray:
    """θ† = argmin U by full-gradient descent with step 1/L on the exact mean field.

    L = M_z²/4 + 2c bounds the Hessian of U, so the iteration is monotone.
    """
    if "c" not in model.params or "M_z" not in model.params:
        raise MissingPotentialError(f"model {model.name!r} is not a logistic model")
    c, M_z = model.params["c"], model.params["M_z"]
    states, weights = env.states, env.pi0
    step = 1.0 / (M_z ** 2 / 4.0 + 2.0 * c)
    theta = np.zeros(model.d) if theta_start is None else np.asarray(theta_start, dtype=float).copy()
    for _ in range(max_iter):
        gradient = weights @ model.H(np.broadcast_to(theta, (env.n_states, model.d)), states)
        if np.linalg.norm(gradient) < tol:
            return theta
        theta = theta - step * gradient
    raise OracleConvergenceError(f"gradient norm {np.linalg.norm(gradient):.3g} after {max_iter} steps")


def gibbs_mean_quadrature(model: ModelSpec, beta: float, half_width: float, n_per_axis: int) -> np.ndarray:
    """E_π θ for π ∝ exp(−βU) by midpoint quadrature on [−half_width, half_width]^d, d ≤ 2."""
    if model.U is None:
        raise MissingPotentialError(f"model {model.name!r} has no potential attached")
    if model.d > 2:
        raise DimensionMismatchError("quadrature is limited to d <= 2")
    width = 2.0 * half_width / n_per_axis
    axis = -half_width + width * (np.arange(n_per_axis) + 0.5)
    mesh = np.stack(np.meshgrid(*([axis] * model.d), indexing="ij"), axis=-1).reshape(-1, model.d)
    log_density = -beta * model.U(mesh)
    density = np.exp(log_density - np.max(log_density))
    return density @ mesh / density.sum()
