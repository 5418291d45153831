import copy
import os
import time

import numpy as np
import pytest

from zoolab.grid import load_zoo_config
from zoolab.nn import ArchSpec, HeadSpec, init_model
from zoolab.zoo import generate_zoo

TINY_CONFIG = {
    "x_global_seed": 3,
    "pretraining": {
        "Architecture": {"input_dim": 8, "hidden_dims": [12, 6], "activation": "relu"},
        "Dataset": {
            "kind": "gaussian_blobs",
            "input_dim": 8,
            "n_classes": 4,
            "n_train": 128,
            "n_test": 64,
            "class_separation": 6.0,
            "seed": 1,
        },
        "Task": ["supervised", "contrastive"],
        "x_seeds": {"supervised": [1, 2], "contrastive": [1]},
        "Learning Rates": 0.003,
        "Weight Decay": 0.0001,
        "Optimiser": "adamw",
        "Epochs": 3,
        "x_batch_size": 32,
        "x_projection_dim": 4,
    },
    "finetuning": {
        "Architecture": {"Classification Head": ["linear"], "x_hidden": 4},
        "Dataset": {
            "kind": "gaussian_blobs",
            "input_dim": 8,
            "n_classes": 3,
            "n_train": 96,
            "n_test": 60,
            "class_separation": 6.0,
            "seed": 2,
        },
        "Learning Rates": [0.003, 0.0001],
        "Weight Decay": 0.0,
        "Optimiser": ["adamw", "sgd"],
        "Epochs": 4,
        "x_batch_size": 32,
        "x_head_seeds": [0],
        "x_momentum": 0.99,
    },
}


@pytest.fixture
def tiny_config():
    return copy.deepcopy(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_zoo(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_zoo")
    return generate_zoo(copy.deepcopy(TINY_CONFIG), root, workers=1)


def _workers():
    return int(os.environ.get("ZOOLAB_WORKERS", min(4, os.cpu_count() or 1)))


# filled by the demo zoo fixture and the acceptance suite
DEMO_TIMING: dict = {}
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def demo_zoo(tmp_path_factory):
    """The shipped demo zoo, trained once per test session."""
    root = tmp_path_factory.mktemp("demo_zoo")
    start = time.perf_counter()
    manifest = generate_zoo(load_zoo_config("demo"), root, workers=_workers())
    DEMO_TIMING["generate"] = time.perf_counter() - start
    return manifest


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_arch():
    return ArchSpec(input_dim=6, hidden_dims=(7, 5), head=HeadSpec("mlp", 3, 4))


@pytest.fixture
def small_model(small_arch):
    return init_model(small_arch, 0)
