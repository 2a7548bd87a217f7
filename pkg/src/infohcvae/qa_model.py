"""Small extractive QA model used by the evaluation harness (BERT-base stand-in).

Question and context are concatenated and encoded jointly by a 2-layer
self-attention stack, so every context token attends to the question.
Context tokens also carry a binary exact-match feature (the token occurs
in the question), which is computed on strings and so survives UNK.
"""

import dataclasses
import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .answer_decoder import MAX_ANSWER_LEN, SpanLogits, decode_span
from .corpus import (MAX_CONTEXT_LEN, QARecord, Vocabulary, align_answer_span,
                     split_words, tokenize_words)
from .encoding import Embedder

SEP = "[sep]"


@dataclass
class QAConfig:
    epochs: int = 2
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    max_answer_len: int = MAX_ANSWER_LEN
    max_context_len: int = MAX_CONTEXT_LEN
    max_question_len: int = 64
    vocab_size: int = 30000


@dataclass
class _Encoded:
    ids: List[int]
    types: List[int]
    match: List[int]
    ctx_start: int
    offsets: List[Tuple[int, int]]
    span: Optional[Tuple[int, int]] = None


class QAModel(nn.Module):
    def __init__(self, vocab: Vocabulary, cfg: QAConfig):
        super().__init__()
        self.vocab, self.cfg = vocab, cfg
        self.embed = Embedder(len(vocab), cfg.d_model,
                              cfg.max_context_len + cfg.max_question_len + 2)
        self.match = nn.Embedding(2, cfg.d_model)
        layer = nn.TransformerEncoderLayer(cfg.d_model, cfg.heads, 2 * cfg.d_model, dropout=0.0,
                                           batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)
        self.start = nn.Linear(cfg.d_model, 1)
        self.end = nn.Linear(cfg.d_model, 1)

    def encode(self, context: str, question: str) -> _Encoded:
        q_tokens = split_words(question)[: self.cfg.max_question_len]
        c_tokens, offsets = tokenize_words(context)
        c_tokens, offsets = c_tokens[: self.cfg.max_context_len], offsets[: self.cfg.max_context_len]
        q_set = set(q_tokens)
        tokens = q_tokens + [SEP] + c_tokens
        ctx_start = len(q_tokens) + 1
        return _Encoded(
            ids=[self.vocab.id(t) for t in tokens],
            types=[0] * ctx_start + [1] * len(c_tokens),
            match=[0] * ctx_start + [int(t in q_set) for t in c_tokens],
            ctx_start=ctx_start, offsets=offsets)

    def forward(self, items: Sequence[_Encoded]) -> SpanLogits:
        width = max(len(e.ids) for e in items)

        def pad(rows):
            return torch.tensor([r + [0] * (width - len(r)) for r in rows])

        ids, types, match = pad([e.ids for e in items]), pad([e.types for e in items]), pad([e.match for e in items])
        mask = torch.tensor([[1] * len(e.ids) + [0] * (width - len(e.ids)) for e in items])
        h = self.embed(ids, types) + self.match(match)
        h = self.encoder(h, src_key_padding_mask=mask == 0)
        ctx_mask = types * mask
        start = self.start(h).squeeze(-1).masked_fill(ctx_mask == 0, -1e30)
        end = self.end(h).squeeze(-1).masked_fill(ctx_mask == 0, -1e30)
        return SpanLogits(start, end, ctx_mask)

    def predict_batch(self, pairs: Sequence[Tuple[str, str]]):
        return qa_predict_batch(self, pairs)


def qa_config_dict(cfg: QAConfig) -> dict:
    return dataclasses.asdict(cfg)


def _encode_records(model: QAModel, records: Sequence[QARecord]) -> List[_Encoded]:
    out = []
    for r in records:
        e = model.encode(r.context, r.question)
        try:
            s, t = align_answer_span(r.answer_start, r.answer_text, e.offsets)
        except ValueError:
            continue
        if r.answer_end > e.offsets[-1][1]:
            continue
        e.span = (s + e.ctx_start, t + e.ctx_start)
        out.append(e)
    return out


def build_qa_vocab(records: Sequence[QARecord], cfg: QAConfig) -> Vocabulary:
    texts = []
    seen = set()
    for r in records:
        if r.context_id not in seen:
            seen.add(r.context_id)
            texts.append(r.context)
        texts.append(r.question)
    vocab = Vocabulary.build(texts, max_size=cfg.vocab_size)
    vocab.add(SEP)
    return vocab


def qa_train(records: Sequence[QARecord], cfg: QAConfig, model: Optional[QAModel] = None,
             epochs: Optional[int] = None, learning_rate: Optional[float] = None) -> QAModel:
    """Train (or continue training) the QA model; deterministic for a given cfg.seed."""
    if not records:
        raise ValueError("QA training set is empty")
    torch.use_deterministic_algorithms(True)
    if model is None:
        torch.manual_seed(cfg.seed)
        model = QAModel(build_qa_vocab(records, cfg), cfg)
    data = _encode_records(model, records)
    if not data:
        raise ValueError("no QA training record could be aligned")
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate if learning_rate is None else learning_rate)
    model.train()
    for epoch in range(cfg.epochs if epochs is None else epochs):
        order = list(range(len(data)))
        random.Random(cfg.seed * 7919 + epoch).shuffle(order)
        for k in range(0, len(order), cfg.batch_size):
            items = [data[i] for i in order[k:k + cfg.batch_size]]
            logits = model(items)
            spans = torch.tensor([e.span for e in items])
            loss = (F.cross_entropy(logits.start, spans[:, 0]) + F.cross_entropy(logits.end, spans[:, 1]))
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 5.0)
            opt.step()
    model.eval()
    return model


@torch.no_grad()
def qa_predict_batch(model: QAModel, pairs: Sequence[Tuple[str, str]],
                     batch_size: int = 64) -> List[Tuple[Tuple[int, int], str, int]]:
    """For each (context, question): ((y_s, y_e) token span, answer text, char start)."""
    model.eval()
    out = []
    for k in range(0, len(pairs), batch_size):
        chunk = pairs[k:k + batch_size]
        items = [model.encode(c, q) for c, q in chunk]
        spans = decode_span(model(items), model.cfg.max_answer_len)
        for (context, _), e, (s, t) in zip(chunk, items, spans.tolist()):
            s, t = s - e.ctx_start, t - e.ctx_start
            c0, c1 = e.offsets[s][0], e.offsets[t][1]
            out.append(((s, t), context[c0:c1], c0))
    return out


def qa_predict(model: QAModel, context: str, question: str) -> Tuple[Tuple[int, int], str, int]:
    return qa_predict_batch(model, [(context, question)])[0]
