import shutil

import numpy as np
import pytest

from cooprag.toy import build_workspace

from acceptance_log import RESULTS


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(RESULTS, key=lambda n: int(n[1:])):
        terminalreporter.write_line(f"{name} {RESULTS[name]}")


@pytest.fixture(scope="session")
def toy_template(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    build_workspace(root)
    return root


@pytest.fixture
def toy_workspace(toy_template, tmp_path):
    """Fresh copy of the recorded toy workspace; returns the config path."""
    dst = tmp_path / "ws"
    shutil.copytree(toy_template, dst)
    return dst / "config.yaml"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
