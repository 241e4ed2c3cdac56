import subprocess
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def scan_dir(tmp_path_factory):
    """SCAN split files: ./data if present, otherwise generated from the grammar."""
    data = ROOT / "data"
    if (data / "tasks_train_addprim_jump.txt").is_file():
        return data
    out = tmp_path_factory.mktemp("scan")
    subprocess.run([sys.executable, str(ROOT / "scripts" / "make_scan.py"), str(out)], check=True, capture_output=True)
    return out


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
