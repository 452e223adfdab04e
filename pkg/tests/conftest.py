from __future__ import annotations

import pytest
from oracles import tiny_config

from matsubgoal.model import SubgoalModel
from matsubgoal.world import build_split


@pytest.fixture(scope="session")
def split():
    return build_split()


@pytest.fixture(scope="session")
def small_split():
    return build_split(num_scenes=8, unseen_scenes=2, counts={f: 12 for f in ("train", "valid_seen", "valid_unseen", "test_seen", "test_unseen")})


@pytest.fixture()
def tiny_model(split):
    return SubgoalModel(tiny_config(len(split.vocab)))


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
