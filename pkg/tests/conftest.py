"""Shared fixtures.

`tiny_workspace` builds a real but deliberately small end-to-end
workspace (dataset + trained bundle) once per session so unit tests can
exercise the genuine artifacts without paying full training costs. The
models it contains are low quality by construction; tests that assert
quality thresholds belong in test_acceptance.py, which trains at the
shipped defaults.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from shapexplore.cli import main as cli_main

TINY_CONFIG = {
    "seed": 11,
    "dataset": {"num_shapes": 1400},
    "autoencoder": {"epochs": 4, "hidden": 96},
    "embedding": {"epochs": 6, "image_hidden": 96, "text_embed": 32},
    "mapper": {"epochs": 30, "hidden": 64},
    "coopt": {"iters": 60},
    "svm": {"epochs": 5},
}


@pytest.fixture(scope="session")
def tiny_workspace(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("tiny-ws")
    config = dict(TINY_CONFIG)
    config["paths"] = {
        "data_dir": str(root / "data"),
        "bundle_dir": str(root / "bundle"),
        "report_dir": str(root / "reports"),
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config))
    assert cli_main(["gen-data", "--config", str(cfg_path)]) == 0
    assert cli_main(["train", "spaces", "--config", str(cfg_path)]) == 0
    assert cli_main(["train", "mapper", "--config", str(cfg_path)]) == 0
    return root


@pytest.fixture(scope="session")
def tiny_config_path(tiny_workspace: Path) -> Path:
    return tiny_workspace / "config.json"


@pytest.fixture(scope="session")
def tiny_bundle(tiny_workspace: Path):
    from shapexplore.spaces import SpaceBundle

    return SpaceBundle.load(tiny_workspace / "bundle", require_mapper=True)


@pytest.fixture(scope="session")
def tiny_store(tiny_workspace: Path):
    from shapexplore.dataset import DataStore

    return DataStore(tiny_workspace / "data")


@pytest.fixture(scope="session")
def tiny_run_config(tiny_workspace: Path):
    from shapexplore.config import load_config

    return load_config(tiny_workspace / "config.json")
