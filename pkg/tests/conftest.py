import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from saesense.model import HookPoint, Site
from saesense.toy import random_corpus, random_model, threshold_sae, toy_config

PROBE = HookPoint(1, Site.RESID_PRE)
READ = HookPoint(1, Site.RESID_POST)

_results: dict[str, str] = {}
_details: dict[str, str] = {}


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the current acceptance criterion."""
    key = request.node.get_closest_marker("criterion").args[0]

    def note(text: str) -> None:
        _details[key] = text

    return note


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key): acceptance criterion this test decides")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = mark.args[0]
    if rep.skipped:
        _results[key] = "SKIP"
        if isinstance(rep.longrepr, tuple):
            _details.setdefault(key, rep.longrepr[-1])
    elif rep.failed:
        _results[key] = "FAIL"
    elif rep.when == "call":
        _results[key] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_results, key=lambda k: int(k.split(".")[0])):
        line = f"[{_results[key]}] criterion {key}"
        if _details.get(key):
            line += f": {_details[key]}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_model():
    return random_model(toy_config(), seed=0)


@pytest.fixture(scope="session")
def toy_corpus():
    return random_corpus(64, seed=1)


@pytest.fixture(scope="session")
def toy_acts(toy_model, toy_corpus):
    rng = np.random.default_rng(2)
    return np.stack([toy_model.forward(toy_corpus.sample(rng)[1], capture=(PROBE,), logits=False).captured[PROBE]
                     for _ in range(1500)])


@pytest.fixture(scope="session")
def toy_sae(toy_acts):
    return threshold_sae(toy_acts, 256, seed=3)


@pytest.fixture(scope="session")
def toy_assets(tmp_path_factory):
    """Directory holding toy model/SAE/corpus files and ``run.toml``."""
    from saesense.toy import write_toy_assets
    return write_toy_assets(tmp_path_factory.mktemp("assets"))
