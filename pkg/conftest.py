import json
import os

import pytest

from src.langevinmix.config import ExperimentConfig
from src.langevinmix.environment import FiniteMarkovParams, FiniteMarkovStream, IIDBoundedStream
from src.langevinmix.ledger import Ledger
from src.langevinmix.model import make_linear_model, make_logistic_model
from src.langevinmix.theory import coupling_rate

TEST_DB = "test.db"
TEST_CAMPAIGN = "test"

LOGISTIC_STATES = [[1.0, 1.0], [0.0, -1.0], [1.0, -0.5], [0.0, 0.5]]
LOGISTIC_P = [
    [0.7, 0.1, 0.1, 0.1],
    [0.1, 0.7, 0.1, 0.1],
    [0.1, 0.1, 0.7, 0.1],
    [0.1, 0.1, 0.1, 0.7],
]


@pytest.fixture()
def ledger_setup():
    """A ledger returning plain tuples, which are easy to compare."""
    ledger = Ledger(db_path=TEST_DB, row_factory=False)
    yield ledger
    ledger.close()


@pytest.fixture()
def ledger_setup_row_factory():
    """A ledger returning `sqlite3.Row` objects."""
    ledger = Ledger(db_path=TEST_DB, row_factory=True)
    yield ledger
    ledger.close()


@pytest.fixture()
def uniform_stream():
    """I.i.d. uniform Y on [-1, 1]."""
    return IIDBoundedStream(m=1, half_width=1.0)


@pytest.fixture()
def two_state_stream():
    """The ±1 chain that stays put with probability 0.9."""
    return FiniteMarkovStream(FiniteMarkovParams.symmetric_two_state(0.9, 1.0))


@pytest.fixture()
def linear_model():
    """Desk linear model: d=1, M=1, Δ=3/4, b=1, K=1."""
    return make_linear_model(d=1, M=1.0, young_eps=0.25)


@pytest.fixture()
def desk_constants(linear_model):
    return coupling_rate(linear_model, 0.5)


@pytest.fixture()
def logistic_env():
    return FiniteMarkovParams.from_matrix(LOGISTIC_STATES, LOGISTIC_P)


@pytest.fixture()
def logistic_model(logistic_env):
    return make_logistic_model(d=1, c=0.1, M_z=1.0, env=logistic_env)


@pytest.fixture()
def desk_config_body(tmp_path):
    """Config body of the desk linear model with a small chain block."""
    return {
        "model": {"name": "linear", "d": 1, "young_eps": 0.25},
        "stream": {"kind": "iid_bounded", "m": 1, "half_width": 1.0},
        "chain": {"lambda": 0.5, "theta0": [0.0], "horizon": 2000, "replicas": 1, "seed": 7, "threads": 2},
        "output": {"directory": str(tmp_path / "out")},
    }


@pytest.fixture()
def write_config(tmp_path):
    """Write a config body to a JSON file and return its path."""
    def write(body, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(body), encoding="utf-8")
        return path
    return write


@pytest.fixture()
def desk_config(desk_config_body):
    return ExperimentConfig.model_validate(desk_config_body)


@pytest.fixture(autouse=True)
def cleanup_run():
    """Removes ledgers on teardown."""
    yield
    if os.path.exists(TEST_DB):
        os.remove(TEST_DB)
