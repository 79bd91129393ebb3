from __future__ import annotations

import os
import sys
import tempfile
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pkgbridge.fakepm import FakePackageManager, load_catalog  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: dict[str, str] = {}


def pytest_addoption(parser):
    parser.addoption(
        "--cran-snapshot",
        default=os.environ.get("PKGBRIDGE_CRAN_SNAPSHOT"),
        help="full CRAN PACKAGES file for the compilation-share sanity band",
    )


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1]
        if name not in _acceptance or report.outcome != "passed":
            _acceptance[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_acceptance.items()):
        verdict = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
        terminalreporter.write_line(f"{verdict}  {name}")


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def primer_catalog():
    return load_catalog((FIXTURES / "primer.catalog.tsv").read_text())


@pytest.fixture
def primer_pm(primer_catalog):
    return FakePackageManager(primer_catalog)


@pytest.fixture
def sock_dir():
    # AF_UNIX paths are limited to ~108 bytes; pytest's tmp_path can exceed that.
    with tempfile.TemporaryDirectory(prefix="pkgb") as d:
        yield Path(d)
