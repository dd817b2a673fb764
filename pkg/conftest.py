import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run benchmark-scale tests"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: benchmark-scale test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
