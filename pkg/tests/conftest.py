"""Shared fixtures.

The memorization fixture trains the reference model once per session; the
acceptance tests, trace export and checkpoint round-trips all reuse it.
"""

import time

import pytest

from treenlg.model import save_checkpoint
from treenlg.synth import SynthSpec, synth_corpus
from treenlg.training import TrainConfig, train

# One line per acceptance criterion, replayed after the run summary where
# pytest's output capture cannot swallow them.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth_default():
    corpus, ontology = synth_corpus(SynthSpec.default(), seed=7)
    return corpus, ontology


@pytest.fixture(scope="session")
def memorized(synth_default, tmp_path_factory):
    """Reference-config training run on the default synthetic corpus."""
    corpus, ontology = synth_default
    config = TrainConfig(seed=0, max_length=40)
    started = time.time()
    outcome = train(corpus, config, ontology)
    train_seconds = time.time() - started
    path = tmp_path_factory.mktemp("memorized") / "checkpoint.ckpt"
    save_checkpoint(path, outcome.checkpoint.model, outcome.checkpoint.config,
                    outcome.checkpoint.epoch, outcome.checkpoint.dev_metrics)
    return {"outcome": outcome, "checkpoint_path": path,
            "corpus": corpus, "ontology": ontology, "config": config,
            "train_seconds": train_seconds}
