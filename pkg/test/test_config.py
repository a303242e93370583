import json

import pytest
from pydantic import ValidationError

from src.langevinmix.config import (ConfigError, ExperimentConfig, LLNExperiment, build_model, build_profile,
                                    build_stream, canonical_json, chain_config, config_digest, config_schema,
                                    load_config, with_overrides)
from src.langevinmix.environment import FiniteMarkovStream, MovingAverageStream


def test_desk_config(desk_config):
    """Defaults fill the optional blocks."""

    assert desk_config.model.name == "linear"
    assert desk_config.chain.lam == 0.5
    assert desk_config.chain.mode == "plain"
    assert desk_config.experiment is None
    assert desk_config.output.trajectory


def test_config_rejects_inconsistent_dimensions(desk_config_body):
    body = dict(desk_config_body, chain=dict(desk_config_body["chain"], theta0=[0.0, 0.0]))

    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(body)


def test_config_rejects_unknown_fields(desk_config_body):
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(dict(desk_config_body, extra_block={}))
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(dict(desk_config_body, stream={"kind": "gaussian", "m": 1}))


def test_logistic_needs_finite_stream(desk_config_body):
    body = dict(desk_config_body, model={"name": "logistic", "d": 1},
                stream={"kind": "iid_bounded", "m": 2})

    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(body)


def test_point_coupling_needs_second_start(desk_config_body):
    body = dict(desk_config_body, experiment={"kind": "coupling", "horizons": [10]})

    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(body)


def test_load_config(write_config, desk_config_body, tmp_path):
    """Files load; missing and malformed files raise `ConfigError`."""

    config = load_config(write_config(desk_config_body))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")

    assert config.chain.seed == 7
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        load_config(broken)


def test_overrides_and_digest(desk_config):
    """CLI overrides re-validate the config and change its digest."""

    same = with_overrides(desk_config)
    reseeded = with_overrides(desk_config, seed=99, threads=4, out="elsewhere")

    assert config_digest(same) == config_digest(desk_config)
    assert len(config_digest(desk_config)) == 64
    assert reseeded.chain.seed == 99 and reseeded.chain.threads == 4
    assert reseeded.output.directory == "elsewhere"
    assert config_digest(reseeded) != config_digest(desk_config)
    assert json.loads(canonical_json(desk_config))["chain"]["lambda"] == 0.5
    with pytest.raises(ConfigError):
        with_overrides(desk_config, threads=0)


def test_build_stream_and_model(desk_config, desk_config_body):
    stream = build_stream(desk_config)
    model = build_model(desk_config, stream)

    assert stream.M == 1.0
    assert model.delta == pytest.approx(0.75) and model.M == stream.M

    two_state = ExperimentConfig.model_validate(dict(desk_config_body, stream={"kind": "two_state", "p": 0.9}))
    assert isinstance(build_stream(two_state), FiniteMarkovStream)

    averaged = ExperimentConfig.model_validate(
        dict(desk_config_body, stream={"kind": "bounded_moving_average", "m": 1, "window": 4}))
    assert isinstance(build_stream(averaged), MovingAverageStream)


def test_build_stream_rejects_bad_matrix(desk_config_body):
    body = dict(desk_config_body, stream={"kind": "finite_markov", "states": [[0.0], [1.0]],
                                          "P": [[0.5, 0.6], [0.5, 0.5]]})

    with pytest.raises(ConfigError):
        build_stream(ExperimentConfig.model_validate(body))


def test_build_logistic_model(desk_config_body):
    from conftest import LOGISTIC_P, LOGISTIC_STATES

    body = dict(desk_config_body, model={"name": "logistic", "d": 1, "c": 0.1, "M_z": 1.0},
                stream={"kind": "finite_markov", "states": LOGISTIC_STATES, "P": LOGISTIC_P})
    config = ExperimentConfig.model_validate(body)

    model = build_model(config)

    assert model.name == "logistic" and model.U is not None


def test_chain_config_and_profiles(desk_config):
    chain = chain_config(desk_config)

    assert chain.theta0 == (0.0,)
    assert chain.split_radius == 1.0
    assert chain_config(desk_config, split_radius=0.5).split_radius == 0.5
    assert build_profile("cubic").r == 3.0
    with pytest.raises(ConfigError):
        build_profile("quartic")


def test_experiment_defaults_and_schema():
    assert LLNExperiment().mean_sigmas == 3.0
    schema = config_schema()

    assert set(schema["required"]) == {"model", "stream", "chain"}
    assert "lambda" in json.dumps(schema)
