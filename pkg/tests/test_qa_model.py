import itertools
import math

import pytest
import torch

from infohcvae.evaluation import evaluate_qa
from infohcvae.qa_model import QAConfig, qa_predict, qa_predict_batch, qa_train
from infohcvae.toydata import make_toy_records


@pytest.fixture(scope="module")
def records():
    return make_toy_records(4, 3, seed=5, max_records=10)


@pytest.fixture(scope="module")
def overfit(records):
    return qa_train(records, QAConfig(epochs=60, batch_size=10, seed=0))


def test_default_epochs():
    assert QAConfig().epochs == 2


def test_overfit_ten_examples(overfit, records):
    em, f1 = evaluate_qa(overfit, records)
    assert em == 100.0 and f1 == 100.0


def test_deterministic(records):
    cfg = QAConfig(epochs=3, batch_size=4, seed=2)
    a, b = qa_train(records, cfg), qa_train(records, cfg)
    for (k, v), (_, w) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(v, w), k
    pairs = [(r.context, r.question) for r in records]
    assert qa_predict_batch(a, pairs) == qa_predict_batch(b, pairs)


def test_prediction_is_context_substring(overfit, records):
    for r in records:
        (s, e), text, start = qa_predict(overfit, r.context, r.question)
        assert s <= e and r.context[start:start + len(text)] == text
    (_, text, start) = qa_predict(overfit, "Nobody here knows anything .", "who founded a bank ?")
    assert text and text in "Nobody here knows anything ."


def test_matches_brute_force_span_search(overfit, records):
    for r in records:
        item = overfit.encode(r.context, r.question)
        with torch.no_grad():
            logits = overfit([item])
        start, end = logits.start[0].tolist(), logits.end[0].tolist()
        M = len(item.ids)
        assert M - item.ctx_start <= 50
        best, arg = -math.inf, None
        for s, e in itertools.product(range(item.ctx_start, M), repeat=2):
            if s <= e and e - s < overfit.cfg.max_answer_len and start[s] + end[e] > best:
                best, arg = start[s] + end[e], (s - item.ctx_start, e - item.ctx_start)
        assert qa_predict(overfit, r.context, r.question)[0] == arg


def test_empty_training_set():
    with pytest.raises(ValueError):
        qa_train([], QAConfig())
