"""Experiment configuration files.

One JSON document describes a whole experiment: the model, the data
stream, the chain, the experiment knobs and the output location.
"""
import hashlib
import json
import pathlib
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import LangevinMixError
from .engine import ChainConfig
from .environment import (DataStream, FiniteMarkovParams, FiniteMarkovStream, IIDBoundedStream,
                          MovingAverageStream)
from .model import GrowthProfile, ModelSpec, get_profile, make_linear_model, make_logistic_model


class ConfigError(LangevinMixError):
    """The configuration file is missing, malformed or inconsistent."""
    pass


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class LinearModelConfig(_Block):
    name: Literal["linear"] = "linear"
    d: int = Field(1, ge=1)
    young_eps: float = Field(0.25, gt=0, lt=1)


class LogisticModelConfig(_Block):
    name: Literal["logistic"] = "logistic"
    d: int = Field(1, ge=1)
    c: float = Field(0.1, gt=0)
    M_z: float = Field(1.0, gt=0)


class IIDStreamConfig(_Block):
    kind: Literal["iid_bounded"] = "iid_bounded"
    m: int = Field(1, ge=1)
    half_width: float = Field(1.0, gt=0)


class TwoStateStreamConfig(_Block):
    kind: Literal["two_state"] = "two_state"
    p: float = Field(0.9, ge=0, le=1)
    value: float = Field(1.0, gt=0)


class FiniteMarkovStreamConfig(_Block):
    kind: Literal["finite_markov"] = "finite_markov"
    states: List[List[float]]
    P: List[List[float]]


class MovingAverageStreamConfig(_Block):
    kind: Literal["bounded_moving_average"] = "bounded_moving_average"
    m: int = Field(1, ge=1)
    window: int = Field(3, ge=1)
    half_width: float = Field(1.0, gt=0)
    clamp: Optional[float] = Field(None, gt=0)


class ChainBlock(_Block):
    lam: float = Field(alias="lambda", gt=0)
    beta: float = Field(1.0, gt=0)
    theta0: List[float]
    horizon: int = Field(ge=0)
    replicas: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    threads: Optional[int] = Field(None, ge=1)
    mode: Literal["plain", "split"] = "plain"
    out_of_theory: bool = False
    split_radius: float = Field(1.0, gt=0)


class LLNExperiment(_Block):
    kind: Literal["lln"] = "lln"
    profile: str = "coordinate"
    burn_in: int = Field(0, ge=0)
    mean_sigmas: float = Field(3.0, gt=0)
    second_moment_rel_tol: float = Field(0.02, gt=0)
    logistic_tolerance: float = Field(0.1, gt=0)
    quadrature_half_width: float = Field(8.0, gt=0)
    quadrature_points: int = Field(401, ge=3)


class CLTExperiment(_Block):
    kind: Literal["clt"] = "clt"
    profile: str = "coordinate"
    burn_in: int = Field(50, ge=0)
    batch: Optional[int] = Field(None, ge=1)
    ks_level: float = Field(0.01, gt=0, lt=1)
    variance_rel_tol: float = Field(0.10, gt=0)
    half_variance_tol: float = Field(0.05, gt=0)


class CouplingExperiment(_Block):
    kind: Literal["coupling"] = "coupling"
    theta2_law: Literal["point", "stationary"] = "point"
    theta2: Optional[List[float]] = None
    horizons: List[int] = Field(min_length=1)
    split_radius: float = Field(0.5, gt=0)
    burn_in: Optional[int] = Field(None, ge=0)
    confidence: float = Field(0.99, gt=0, lt=1)
    min_r_squared: float = Field(0.95, ge=0, le=1)
    block_size: int = Field(256, ge=1)


class MixingExperiment(_Block):
    kind: Literal["mixing"] = "mixing"
    lags: List[int] = Field(min_length=1)
    burn_in: int = Field(200, ge=0)
    partition_cells: int = Field(8, ge=2, le=16)
    eps: float = Field(0.5, gt=0, lt=1)
    profile: str = "coordinate"


class TVExperiment(_Block):
    kind: Literal["tv"] = "tv"
    check_time: int = Field(50, ge=1)
    threshold: float = Field(0.05, gt=0)
    fit_times: List[int] = Field(default_factory=lambda: [5, 10, 20, 40])
    transient_theta0: float = 10.0
    bins: int = Field(200, ge=2)
    box_sigmas: float = Field(6.0, gt=0)
    quadrature_nodes: int = Field(16, ge=2)
    min_r_squared: float = Field(0.9, ge=0, le=1)


class OutputBlock(_Block):
    directory: str = "out"
    trajectory: bool = True


ModelBlock = Annotated[Union[LinearModelConfig, LogisticModelConfig], Field(discriminator="name")]
StreamBlock = Annotated[
    Union[IIDStreamConfig, TwoStateStreamConfig, FiniteMarkovStreamConfig, MovingAverageStreamConfig],
    Field(discriminator="kind"),
]
ExperimentBlock = Annotated[
    Union[LLNExperiment, CLTExperiment, CouplingExperiment, MixingExperiment, TVExperiment],
    Field(discriminator="kind"),
]


class ExperimentConfig(_Block):
    """The whole experiment file."""

    model: ModelBlock
    stream: StreamBlock
    chain: ChainBlock
    experiment: Optional[ExperimentBlock] = None
    output: OutputBlock = OutputBlock()

    @model_validator(mode="after")
    def _consistent_dimensions(self) -> "ExperimentConfig":
        d = self.model.d
        m = d if self.model.name == "linear" else d + 1
        if len(self.chain.theta0) != d:
            raise ValueError(f"chain.theta0 has {len(self.chain.theta0)} entries, model d={d}")
        width = stream_width(self.stream)
        if width != m:
            raise ValueError(f"stream width {width} does not match model m={m}")
        if self.model.name == "logistic" and self.stream.kind != "finite_markov":
            raise ValueError("the logistic model needs a finite_markov (q, z) stream")
        if isinstance(self.experiment, CouplingExperiment):
            if self.experiment.theta2_law == "point" and self.experiment.theta2 is None:
                raise ValueError("a point coupling start needs experiment.theta2")
        return self


def stream_width(stream) -> int:
    if stream.kind == "two_state":
        return 1
    if stream.kind == "finite_markov":
        return len(stream.states[0]) if stream.states else 0
    return stream.m


def load_config(path: Union[str, pathlib.Path]) -> ExperimentConfig:
    """Read and validate a config file.

    Raises:
        ConfigError: The file is unreadable or fails validation.
    """
    try:
        text = pathlib.Path(path).read_text(encoding="utf-8")
    except OSError as error:
        raise ConfigError(f"cannot read {path}: {error}") from error
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as error:
        raise ConfigError(f"{path} is not a valid experiment config:\n{error}") from error


def with_overrides(config: ExperimentConfig, seed: Optional[int] = None,
                   threads: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    """Apply CLI overrides and re-validate."""
    chain = config.chain.model_dump(by_alias=True)
    output = config.output.model_dump()
    if seed is not None:
        chain["seed"] = seed
    if threads is not None:
        chain["threads"] = threads
    if out is not None:
        output["directory"] = out
    body = config.model_dump(by_alias=True)
    body.update(chain=chain, output=output)
    try:
        return ExperimentConfig.model_validate(body)
    except ValidationError as error:
        raise ConfigError(str(error)) from error


def canonical_json(config: ExperimentConfig) -> str:
    return json.dumps(config.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))


def config_digest(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON of the validated config."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def build_stream(config: ExperimentConfig) -> DataStream:
    block = config.stream
    try:
        if block.kind == "iid_bounded":
            return IIDBoundedStream(block.m, block.half_width)
        if block.kind == "two_state":
            return FiniteMarkovStream(FiniteMarkovParams.symmetric_two_state(block.p, block.value))
        if block.kind == "finite_markov":
            return FiniteMarkovStream(FiniteMarkovParams.from_matrix(block.states, block.P))
        return MovingAverageStream(block.m, block.window, block.half_width, block.clamp)
    except LangevinMixError as error:
        raise ConfigError(f"invalid stream block: {error}") from error


def build_model(config: ExperimentConfig, stream: Optional[DataStream] = None) -> ModelSpec:
    block = config.model
    beta = config.chain.beta
    stream = stream or build_stream(config)
    try:
        if block.name == "linear":
            return make_linear_model(block.d, stream.M, block.young_eps, beta)
        return make_logistic_model(block.d, block.c, block.M_z, env=stream.params, beta=beta)
    except LangevinMixError as error:
        raise ConfigError(f"invalid model block: {error}") from error


def build_profile(name: str) -> GrowthProfile:
    try:
        return get_profile(name)
    except KeyError as error:
        raise ConfigError(str(error)) from error


def chain_config(config: ExperimentConfig, split_radius: Optional[float] = None) -> ChainConfig:
    block = config.chain
    return ChainConfig(
        lam=block.lam,
        theta0=tuple(block.theta0),
        horizon=block.horizon,
        seed=block.seed,
        beta=block.beta,
        out_of_theory=block.out_of_theory,
        split_radius=split_radius or block.split_radius,
    )


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema(by_alias=True)
