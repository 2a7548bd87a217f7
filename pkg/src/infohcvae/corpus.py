"""SQuAD-format loading, word-level tokenization, span alignment and batching."""

import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import torch

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
RESERVED = (PAD, UNK, BOS, EOS)

MAX_CONTEXT_LEN = 384
MAX_QUESTION_LEN = 32

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class AlignmentError(ValueError):
    pass


@dataclass
class Context:
    id: str
    text: str

    @property
    def char_count(self) -> int:
        return len(self.text)


@dataclass
class QAPair:
    question_text: str
    answer_text: str
    answer_char_start: int
    id: str = ""


@dataclass
class QARecord:
    """One flat (context, question, answer) triple in text space."""

    id: str
    context_id: str
    context: str
    question: str
    answer_text: str
    answer_start: int

    @property
    def answer_end(self) -> int:
        return self.answer_start + len(self.answer_text)


@dataclass
class LoadStats:
    skipped_offsets: int = 0
    skipped_alignment: int = 0
    skipped_question_len: int = 0
    truncated_contexts: int = 0


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = list(RESERVED)
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int = 30000, min_freq: int = 1) -> "Vocabulary":
        counts = Counter()
        for text in texts:
            counts.update(split_words(text))
        ranked = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
                        key=lambda t: (-counts[t], t))
        return cls(ranked[: max(0, max_size - len(RESERVED))])

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def to_json(self) -> List[str]:
        return list(self.itos[len(RESERVED):])

    @classmethod
    def from_json(cls, tokens: Sequence[str]) -> "Vocabulary":
        return cls(tokens)


def split_words(text: str) -> List[str]:
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]


def tokenize_words(text: str) -> Tuple[List[str], List[Tuple[int, int]]]:
    """Lowercased word/punctuation tokens with their (start, end) char offsets."""
    matches = list(_TOKEN_RE.finditer(text))
    return [m.group(0).lower() for m in matches], [m.span() for m in matches]


def tokenize(text: str, vocab: Vocabulary) -> Tuple[List[int], List[Tuple[int, int]]]:
    tokens, offsets = tokenize_words(text)
    return [vocab.id(t) for t in tokens], offsets


def detokenize(ids: Sequence[int], vocab: Vocabulary, skip_unk: bool = True) -> str:
    out = []
    for i in ids:
        if i in (PAD_ID, BOS_ID, EOS_ID) or (skip_unk and i == UNK_ID):
            continue
        out.append(vocab.token(i))
    return " ".join(out)


def align_answer_span(answer_char_start: int, answer_text: str,
                      token_offsets: Sequence[Tuple[int, int]]) -> Tuple[int, int]:
    """Map a character span onto inclusive token indices (y_s, y_e).

    y_s is the first token ending after the answer start, y_e the last token
    starting before the answer end. Raises AlignmentError if the answer
    covers no token.
    """
    answer_end = answer_char_start + len(answer_text)
    if not answer_text.strip():
        raise AlignmentError("answer has no non-whitespace characters")
    inside = [i for i, (s, e) in enumerate(token_offsets)
              if e > answer_char_start and s < answer_end]
    if not inside:
        raise AlignmentError(f"answer at {answer_char_start} crosses no token")
    return inside[0], inside[-1]


def make_token_type_ids(length: int, span: Tuple[int, int]) -> List[int]:
    y_s, y_e = span
    if not 0 <= y_s <= y_e < length:
        raise ValueError(f"span {span} out of range for length {length}")
    return [1 if y_s <= i <= y_e else 0 for i in range(length)]


def load_squad_json(path, stats: Optional[LoadStats] = None) -> List[Tuple[Context, List[QAPair]]]:
    """Read a SQuAD v1.1 file, dropping records whose answer does not match its offset."""
    stats = stats if stats is not None else LoadStats()
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed SQuAD JSON in {path}: {e}") from e

    out = []
    for a_idx, article in enumerate(raw.get("data", [])):
        for p_idx, para in enumerate(article.get("paragraphs", [])):
            text = para["context"]
            ctx = Context(id=para.get("id", f"{a_idx}-{p_idx}"), text=text)
            pairs = []
            for q_idx, qa in enumerate(para.get("qas", [])):
                if not qa.get("answers"):
                    continue
                ans = qa["answers"][0]
                start, atext = int(ans["answer_start"]), ans["text"]
                if start < 0 or text[start:start + len(atext)] != atext:
                    stats.skipped_offsets += 1
                    logger.warning("skipping %s: answer %r not found at offset %d",
                                   qa.get("id", q_idx), atext, start)
                    continue
                pairs.append(QAPair(qa["question"], atext, start, id=qa.get("id", f"{ctx.id}-{q_idx}")))
            out.append((ctx, pairs))
    return out


def flatten(paragraphs: Sequence[Tuple[Context, Sequence[QAPair]]]) -> List[QARecord]:
    return [QARecord(qa.id, ctx.id, ctx.text, qa.question_text, qa.answer_text, qa.answer_char_start)
            for ctx, qas in paragraphs for qa in qas]


def write_squad_json(records: Sequence[QARecord], path) -> None:
    """Write flat records back out in SQuAD v1.1 layout, grouping by context id."""
    paras: Dict[str, dict] = {}
    for r in records:
        p = paras.setdefault(r.context_id, {"id": r.context_id, "context": r.context, "qas": []})
        p["qas"].append({"id": r.id, "question": r.question,
                         "answers": [{"text": r.answer_text, "answer_start": r.answer_start}]})
    data = {"version": "1.1", "data": [{"title": "corpus", "paragraphs": list(paras.values())}]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False)


@dataclass
class TokenizedExample:
    id: str
    context_id: str
    context: str
    context_ids: List[int]
    context_offsets: List[Tuple[int, int]]
    question_ids: List[int]
    answer_span: Tuple[int, int]
    token_type_ids: List[int]
    # copy-mechanism ids: OOV context words get ids >= len(vocab)
    context_ext_ids: List[int] = field(default_factory=list)
    question_ext_ids: List[int] = field(default_factory=list)
    oov_words: List[str] = field(default_factory=list)
    question: str = ""
    answer_text: str = ""


def context_ext_ids(tokens: Sequence[str], vocab: Vocabulary) -> Tuple[List[int], List[str]]:
    oovs: List[str] = []
    ext = []
    for t in tokens:
        if t in vocab:
            ext.append(vocab.id(t))
        else:
            if t not in oovs:
                oovs.append(t)
            ext.append(len(vocab) + oovs.index(t))
    return ext, oovs


def encode_context(text: str, vocab: Vocabulary, max_len: int = MAX_CONTEXT_LEN):
    """Token ids, offsets, extended ids and OOV list for a context, truncated to max_len."""
    tokens, offsets = tokenize_words(text)
    tokens, offsets = tokens[:max_len], offsets[:max_len]
    ext, oovs = context_ext_ids(tokens, vocab)
    return [vocab.id(t) for t in tokens], offsets, ext, oovs


def encode_question(text: str, vocab: Vocabulary, oovs: Sequence[str] = ()) -> Tuple[List[int], List[int]]:
    tokens = split_words(text)
    ids = [BOS_ID] + [vocab.id(t) for t in tokens] + [EOS_ID]
    ext = [BOS_ID]
    for t in tokens:
        if t in vocab:
            ext.append(vocab.id(t))
        elif t in oovs:
            ext.append(len(vocab) + list(oovs).index(t))
        else:
            ext.append(UNK_ID)
    ext.append(EOS_ID)
    return ids, ext


def featurize(records: Sequence[QARecord], vocab: Vocabulary, max_context_len: int = MAX_CONTEXT_LEN,
              max_question_len: int = MAX_QUESTION_LEN,
              stats: Optional[LoadStats] = None) -> List[TokenizedExample]:
    stats = stats if stats is not None else LoadStats()
    out = []
    for r in records:
        full_len = len(tokenize_words(r.context)[0])
        ids, offsets, ext, oovs = encode_context(r.context, vocab, max_context_len)
        if full_len > max_context_len:
            stats.truncated_contexts += 1
        try:
            span = align_answer_span(r.answer_start, r.answer_text, offsets)
        except AlignmentError as e:
            stats.skipped_alignment += 1
            logger.warning("skipping %s: %s", r.id, e)
            continue
        if r.answer_end > offsets[-1][1]:
            # answer runs past the truncation point
            stats.skipped_alignment += 1
            continue
        q_ids, q_ext = encode_question(r.question, vocab, oovs)
        if len(q_ids) > max_question_len:
            stats.skipped_question_len += 1
            continue
        out.append(TokenizedExample(
            id=r.id, context_id=r.context_id, context=r.context, context_ids=ids,
            context_offsets=offsets, question_ids=q_ids, answer_span=span,
            token_type_ids=make_token_type_ids(len(ids), span), context_ext_ids=ext,
            question_ext_ids=q_ext, oov_words=oovs, question=r.question, answer_text=r.answer_text))
    return out


@dataclass
class Batch:
    context_ids: torch.Tensor
    context_mask: torch.Tensor
    question_ids: torch.Tensor
    question_mask: torch.Tensor
    token_type_ids: torch.Tensor
    spans: torch.Tensor
    context_ext_ids: torch.Tensor
    question_ext_ids: torch.Tensor
    max_oov: int
    examples: List[TokenizedExample]

    def __len__(self) -> int:
        return self.context_ids.size(0)


def _pad(rows: Sequence[Sequence[int]], value: int = PAD_ID) -> torch.Tensor:
    width = max(len(r) for r in rows)
    return torch.tensor([list(r) + [value] * (width - len(r)) for r in rows], dtype=torch.long)


def collate(examples: Sequence[TokenizedExample]) -> Batch:
    ctx = _pad([e.context_ids for e in examples])
    q = _pad([e.question_ids for e in examples])
    return Batch(
        context_ids=ctx,
        context_mask=(ctx != PAD_ID).long(),
        question_ids=q,
        question_mask=(q != PAD_ID).long(),
        token_type_ids=_pad([e.token_type_ids for e in examples], 0),
        spans=torch.tensor([e.answer_span for e in examples], dtype=torch.long),
        context_ext_ids=_pad([e.context_ext_ids or e.context_ids for e in examples]),
        question_ext_ids=_pad([e.question_ext_ids or e.question_ids for e in examples]),
        max_oov=max(len(e.oov_words) for e in examples),
        examples=list(examples),
    )


def build_batches(examples: Sequence[TokenizedExample], batch_size: int,
                  shuffle_seed: Optional[int] = None) -> List[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(examples)))
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(order)
    return [collate([examples[i] for i in order[k:k + batch_size]])
            for k in range(0, len(order), batch_size)]
