import pytest
import torch

from infohcvae.corpus import Vocabulary, featurize
from infohcvae.toydata import make_toy_records

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _deterministic():
    torch.use_deterministic_algorithms(True)
    yield


@pytest.fixture
def toy_records():
    return make_toy_records(4, 3, seed=1, max_records=10)


@pytest.fixture
def toy_vocab(toy_records):
    return Vocabulary.build([r.context for r in toy_records] + [r.question for r in toy_records])


@pytest.fixture
def toy_examples(toy_records, toy_vocab):
    return featurize(toy_records, toy_vocab)


class OverfitRun:
    def __init__(self, records, vocab, examples, cfg, result, sign_violations):
        self.records, self.vocab, self.examples = records, vocab, examples
        self.cfg, self.result, self.sign_violations = cfg, result, sign_violations

    @property
    def model(self):
        return self.result.model


@pytest.fixture(scope="session")
def overfit_run():
    """Full model, desk profile, 10-example corpus, 500 steps; sign invariants checked every step."""
    from infohcvae.config import TrainingConfig
    from infohcvae.training import train

    torch.use_deterministic_algorithms(True)
    records = make_toy_records(4, 3, seed=1, max_records=10)
    vocab = Vocabulary.build([r.context for r in records] + [r.question for r in records])
    examples = featurize(records, vocab)
    cfg = TrainingConfig(batch_size=10, max_steps=500, profile="desk", seed=0)
    violations = []

    def check(step, losses, aux):
        if not losses.check_signs():
            violations.append((step, losses.as_dict()))

    result = train(examples, vocab, cfg, on_step=check)
    result.model.eval()
    return OverfitRun(records, vocab, examples, cfg, result, violations)
