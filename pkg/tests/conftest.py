from __future__ import annotations

import subprocess
import sys

import pytest

from cspscale.ir import BlockKind, BlockSpec, NetworkSpec, Stage, TensorShape


def single_block(kind: BlockKind, w: int, k: int, b: int, g=None, h=None, **block_kw) -> NetworkSpec:
    """One-stage network whose block input width equals b."""
    block = BlockSpec(kind, k, b, growth=g, **block_kw)
    return NetworkSpec("one", TensorShape(w, h or w, b), (Stage(block),))


@pytest.fixture
def run_cli():
    def run(*args: str):
        return subprocess.run(
            [sys.executable, "-m", "cspscale", *args],
            capture_output=True,
            text=True,
            check=False,
            timeout=60,
        )

    return run


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
