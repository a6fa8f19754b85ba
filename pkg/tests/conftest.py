from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from carnot_nonlocal.group import abelian, heisenberg

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """``record(n, ok, detail)`` stores one acceptance line for the summary."""
    def _record(n: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[n] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}")


@pytest.fixture(params=["R1", "R2", "R3", "H1"])
def any_group(request):
    name = request.param
    return heisenberg() if name == "H1" else abelian(int(name[1]))


@pytest.fixture
def H():
    return heisenberg()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def load_json_config(name: str) -> dict:
    return json.loads((CONFIGS / name).read_text())
