import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ampseg.backbone import init_backbone  # noqa: E402
from ampseg.synthdata import GenSpec, gen_dataset  # noqa: E402


@pytest.fixture(scope="session")
def backbone():
    return init_backbone()


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    """The default 600-item benchmark, generated once per session."""
    return gen_dataset(GenSpec(), str(tmp_path_factory.mktemp("synth")))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    return gen_dataset(GenSpec(items_per_class=6, image_size=32),
                       str(tmp_path_factory.mktemp("synth_small")))


@pytest.fixture(scope="session")
def fold0():
    from ampseg.protocol import make_folds
    return make_folds()[0]


@pytest.fixture(scope="session")
def fold0_bank(dataset, backbone, fold0):
    """Head rows pretrained on the 15 training classes of fold 0."""
    from ampseg.protocol import pretrain
    return pretrain(backbone, dataset, fold0.train_classes)


ACCEPTANCE_LINES = []


@pytest.fixture
def report(request):
    """Record one pass/fail line per acceptance criterion."""
    class Reporter:
        def __init__(self):
            self.details = []

        def note(self, text):
            self.details.append(text)

    rep = Reporter()
    yield rep
    call = getattr(request.node, "rep_call", None)
    ok = call is not None and call.passed
    doc = (request.node.function.__doc__ or request.node.name).strip().splitlines()[0]
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {doc}  [{'; '.join(rep.details)}]")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
