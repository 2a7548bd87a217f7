import torch
import pytest

from infohcvae.config import TrainingConfig
from infohcvae.corpus import Context, Vocabulary
from infohcvae.generation import (GeneratedPair, QAGenerator, read_pairs, serialize_pairs,
                                  unique_contexts)
from infohcvae.training import build_model


@pytest.fixture
def gen(toy_vocab):
    return QAGenerator(build_model(toy_vocab, "tiny", seed=0), toy_vocab, TrainingConfig(profile="tiny"))


@pytest.fixture
def context(toy_records):
    return unique_contexts(toy_records)[0]


def test_generate_k(gen, context):
    pairs = gen.generate_qa(context, 10, seed=1)
    assert len(pairs) <= 10
    for p in pairs:
        assert p.question_text.strip()
        assert context.text[p.answer_start:p.answer_end] == p.answer_text
        assert len(p.z_x) == gen.model.cfg.z_x_dim and len(p.z_y) == gen.model.cfg.z_y_blocks
    assert gen.generate_qa(context, 0) == []


def test_generate_deterministic(gen, context):
    a = [p.to_json() for p in gen.generate_qa(context, 5, seed=4)]
    b = [p.to_json() for p in gen.generate_qa(context, 5, seed=4)]
    c = [p.to_json() for p in gen.generate_qa(context, 5, seed=5)]
    assert a == b and a != c


def test_generate_sample_zy(gen, context):
    a = gen.generate_qa(context, 5, seed=4, sample_zy=True)
    assert [p.to_json() for p in a] == [p.to_json() for p in gen.generate_qa(context, 5, seed=4, sample_zy=True)]


def test_one_to_many(gen, context):
    assert len(gen.one_to_many_questions(context, (2, 3), 1)) == 1
    z = torch.randn(1, gen.model.cfg.z_x_dim)
    assert gen.one_to_many_questions(context, (2, 3), 1, z_x=z) == gen.one_to_many_questions(context, (2, 3), 1, z_x=z)
    qs = gen.one_to_many_questions(context, (2, 3), 4, seed=9)
    assert qs == gen.one_to_many_questions(context, (2, 3), 4, seed=9)
    with pytest.raises(ValueError):
        gen.one_to_many_questions(context, (3, 500), 2)


def test_interpolation_contract(gen, toy_records, context):
    a, b = [r for r in toy_records if r.context_id == context.id][:2]
    mu_a = gen.posterior_mean(context, a.question, a.answer_text, a.answer_start)
    mu_b = gen.posterior_mean(context, b.question, b.answer_text, b.answer_start)
    pairs, z = gen.interpolate_pairs(a, b, context, 3, seed=0)
    assert z.shape[0] == 3
    assert torch.equal(z[0], mu_a[0]) and torch.equal(z[2], mu_b[0])
    assert torch.allclose(z[1], (mu_a[0] + mu_b[0]) / 2, atol=1e-6)
    for p in pairs:
        assert context.text[p.answer_start:p.answer_end] == p.answer_text


def test_serialize_round_trip(tmp_path, gen, context):
    pairs = gen.generate_qa(context, 3, seed=0)
    path = tmp_path / "p.jsonl"
    serialize_pairs(pairs, path)
    assert read_pairs(path) == pairs
    serialize_pairs([], tmp_path / "empty.jsonl")
    assert (tmp_path / "empty.jsonl").read_bytes() == b""


def test_serialize_non_ascii(tmp_path):
    ctx = "Zoë lives in Zürich ."
    pair = GeneratedPair("c", ctx, "where does zoë live ?", "Zürich", 13, 19, (3, 3), [0.5], [1], 0, "h")
    path = tmp_path / "u.jsonl"
    serialize_pairs([pair], path)
    raw = path.read_bytes()
    assert "Zürich".encode("utf-8") in raw
    raw.decode("utf-8")
    assert read_pairs(path) == [pair]


def test_to_record(gen, context):
    p = gen.generate_qa(context, 1, seed=0)[0]
    r = p.to_record(3)
    assert r.context[r.answer_start:r.answer_end] == r.answer_text and r.question == p.question_text


def test_empty_context_rejected(gen):
    with pytest.raises(ValueError):
        gen.generate_qa(Context("e", "   "), 2)
