import json
from pathlib import Path

import pytest

from mmqs.backends import MockEmbeddingBackend, MockLlmBackend, mock_backends_from_fixtures
from mmqs.taxonomy import DisorderLabel, DisorderTaxonomy

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def demo_fixtures():
    return json.loads((DATA / "mock_fixtures.json").read_text(encoding="utf-8"))


@pytest.fixture
def demo_backends(demo_fixtures):
    return mock_backends_from_fixtures(demo_fixtures, strict=True)


@pytest.fixture
def small_taxonomy():
    return DisorderTaxonomy((
        DisorderLabel("swollen tonsils", "ENT"),
        DisorderLabel("mouth ulcers", "ENT"),
        DisorderLabel("lip swelling", "ENT"),
        DisorderLabel("skin rash", "SKIN"),
        DisorderLabel("edema", "LIMB"),
    ))


class FailingLlm(MockLlmBackend):
    """Raises BackendUnavailable on every call."""

    def complete(self, req):
        from mmqs.errors import BackendUnavailable

        self._bump()
        raise BackendUnavailable("down")


@pytest.fixture
def failing_llm():
    return FailingLlm()


@pytest.fixture
def embedder():
    return MockEmbeddingBackend(dim=8)


# Acceptance criteria report: tests/test_acceptance.py records one entry per criterion.
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        line = f"{status} [{number}] {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
