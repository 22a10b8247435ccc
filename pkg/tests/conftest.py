import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vidreplay.actions import parse_action
from vidreplay.device import load_sim_app
from vidreplay.recording import write_frame_cache
from vidreplay.synthetic import record_sim_session

settings.register_profile(
    "repo", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")

FIXTURES = Path(__file__).parent / "fixtures"
E2E = FIXTURES / "e2e"
E2E_APPS = ("notes", "shop", "gallery")

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "status": "PASS", "detail": ""})
    if report.skipped:
        entry["status"] = "SKIP"
        entry["detail"] = str(report.longrepr[2]) if isinstance(report.longrepr, tuple) else ""
    elif report.failed:
        entry["status"] = "FAIL"
    for key, value in report.user_properties:
        if key == "detail":
            entry["detail"] = value


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        c = _criteria[number]
        detail = f" ({c['detail']})" if c["detail"] else ""
        terminalreporter.write_line(f"criterion {number}: {c['status']} - {c['title']}{detail}")


def sim_session_recording(app_dir: Path):
    """Record the fixture's scripted user session on its simulated app."""
    app = load_sim_app(app_dir / "app.json")
    session = json.loads((app_dir / "session.json").read_text())
    return record_sim_session(app, [parse_action(a) for a in session["actions"]], start=session["start"])


@pytest.fixture
def e2e_frames(tmp_path):
    """Write each e2e app's recorded session as a directory of PNG frames."""

    def make(name: str) -> Path:
        return write_frame_cache(sim_session_recording(E2E / name), tmp_path / name / "recording")

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
