import json
from pathlib import Path

import pytest

from safeloco.config import RunConfig
from safeloco.trainer import train

MICRO_DOC = {
    "run_name": "micro",
    "seed": 7,
    "env": {"lidar": {"n_azimuth": 8, "range_noise_std": 0.005}},
    "train": {"n_envs": 2, "horizon": 32, "total_steps": 128, "epochs": 1,
              "minibatches": 1, "mode": "p3o_cbf"},
}


@pytest.fixture(scope="session")
def micro_config() -> dict:
    return json.loads(json.dumps(MICRO_DOC))


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory, micro_config) -> Path:
    """A tiny but complete training run shared across eval/CLI tests."""
    out = tmp_path_factory.mktemp("micro_run")
    cfg = RunConfig.from_dict(micro_config)
    ckpt = train(cfg, "cluttered_static", out, log=lambda *a, **k: None)
    return ckpt
