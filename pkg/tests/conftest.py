import time
from dataclasses import dataclass

import pytest

from seaco.backbone import Schedule
from seaco.bias import BiasSchedule
from seaco.corpus import SyntheticCorpus, SyntheticSpec, generate_corpus
from seaco.hotwords import SamplingConfig
from seaco.pipeline import Model, train_asr, train_bias_stack

ASR_EPOCHS = 20
BIAS_EPOCHS = 20


@dataclass
class Trained:
    corpus: SyntheticCorpus
    asr: Model
    biased: Model
    backbone_snapshot: dict
    seconds: float


@pytest.fixture(scope="session")
def corpus() -> SyntheticCorpus:
    return generate_corpus(SyntheticSpec())


@pytest.fixture(scope="session")
def trained(corpus) -> Trained:
    """Backbone and default bias stack on the default synthetic corpus (a few minutes)."""
    start = time.perf_counter()
    asr, _ = train_asr(corpus, schedule=Schedule(epochs=ASR_EPOCHS, log_every=0))
    snapshot = asr.params.snapshot("backbone")
    biased, _ = train_bias_stack(corpus, asr, "default", SamplingConfig(),
                                 BiasSchedule(epochs=BIAS_EPOCHS, log_every=0))
    return Trained(corpus, asr, biased, snapshot, time.perf_counter() - start)


_RESULTS: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    """Remember one acceptance outcome for the end-of-run summary."""
    _RESULTS[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in _RESULTS.items():
        terminalreporter.write_line(f"{name:<7} {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_collection_modifyitems(items):
    for item in items:
        if "trained" in getattr(item, "fixturenames", ()):
            item.add_marker(pytest.mark.slow)
