import numpy as np
import pytest

from specpipe.synth_corpus import CorpusSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Six participants, two clips each, written to disk once per session."""
    out = tmp_path_factory.mktemp("corpus")
    spec = CorpusSpec(n_train=4, n_test=2, n_fail_train=2, n_fail_test=1, clips_per_participant=2, seed=3)
    m = generate(spec, out)
    return spec, m, out


# One PASS/FAIL line per acceptance criterion, printed in the terminal summary.

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None and (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        detail = dict(item.user_properties).get("detail", "")
        _CRITERIA.append((m.args, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), outcome, detail in sorted(_CRITERIA):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number} ({title}): {status}" + (f"  [{detail}]" if detail else ""))
