"""Sampling QA pairs from a trained model, one-to-many QG, latent interpolation, JSONL I/O."""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import torch

from .answer_decoder import MAX_ANSWER_LEN, DecodeError, decode_span
from .config import TrainingConfig
from .corpus import (MAX_CONTEXT_LEN, MAX_QUESTION_LEN, Context, QARecord, Vocabulary,
                     align_answer_span, encode_context, encode_question)
from .latent import hard_categorical, sample_categorical
from .model import InfoHCVAE

logger = logging.getLogger(__name__)


@dataclass
class GeneratedPair:
    context_id: str
    context: str
    question_text: str
    answer_text: str
    answer_start: int                  # char offset, inclusive
    answer_end: int                    # char offset, exclusive
    answer_token_span: Tuple[int, int]
    z_x: List[float]
    z_y: List[int]                     # per-block argmax
    seed: int
    model_hash: str
    config_hash: str = ""

    def to_record(self, index: int = 0) -> QARecord:
        return QARecord(f"{self.context_id}-gen{index}", self.context_id, self.context,
                        self.question_text, self.answer_text, self.answer_start)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "GeneratedPair":
        d = json.loads(line)
        d["answer_token_span"] = tuple(d["answer_token_span"])
        return cls(**d)


def context_seed(seed: int, context_id: str) -> int:
    """Independent RNG stream per (seed, context)."""
    digest = hashlib.sha256(f"{seed}:{context_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


@dataclass
class _Prepared:
    ids: torch.Tensor
    mask: torch.Tensor
    ext: torch.Tensor
    offsets: List[Tuple[int, int]]
    oovs: List[str]


@dataclass
class GenerationStats:
    requested: int = 0
    emitted: int = 0
    skipped: int = 0


class QAGenerator:
    def __init__(self, model: InfoHCVAE, vocab: Vocabulary, tcfg: Optional[TrainingConfig] = None,
                 max_answer_len: int = MAX_ANSWER_LEN, max_question_len: int = MAX_QUESTION_LEN,
                 config_hash: str = ""):
        self.model = model.eval()
        self.vocab = vocab
        self.tcfg = tcfg or TrainingConfig()
        self.max_answer_len = max_answer_len
        self.max_question_len = max_question_len
        self.model_hash = model.model_hash()
        self.config_hash = config_hash
        self.stats = GenerationStats()

    def _prepare(self, text: str) -> _Prepared:
        ids, offsets, ext, oovs = encode_context(text, self.vocab, MAX_CONTEXT_LEN)
        if not ids:
            raise ValueError("context has no tokens")
        return _Prepared(torch.tensor([ids]), torch.ones(1, len(ids), dtype=torch.long),
                         torch.tensor([ext]), offsets, oovs)

    def _question_text(self, ids: Sequence[int], oovs: Sequence[str]) -> str:
        V = len(self.vocab)
        words = [oovs[i - V] if i >= V else self.vocab.token(i) for i in ids]
        return " ".join(words)

    def prior_z_x(self, prep: _Prepared, k: int, generator: torch.Generator, c_enc=None):
        if c_enc is None:
            c_enc = self.model.latent.encode_context(prep.ids.expand(k, -1), prep.mask.expand(k, -1))
        prior = self.model.latent.question_prior(c_enc)
        if not self.tcfg.enable_question_latent:
            return prior.mu, c_enc
        noise = torch.randn(prior.mu.shape, generator=generator)
        return prior.mu + prior.sigma * noise, c_enc

    def answer_latent(self, z_x, c_enc, generator, sample_zy: bool):
        prior = self.model.latent.answer_prior(z_x, c_enc)
        if not self.tcfg.enable_answer_latent:
            return prior.probs
        return sample_categorical(prior, generator) if sample_zy else hard_categorical(prior)

    def questions_for(self, prep: _Prepared, spans: torch.Tensor, z_x: torch.Tensor) -> List[str]:
        k = z_x.size(0)
        ids, mask = prep.ids.expand(k, -1), prep.mask.expand(k, -1)
        pos = torch.arange(ids.size(1)).unsqueeze(0)
        types = ((pos >= spans[:, :1]) & (pos <= spans[:, 1:])).long()
        H_hat = self.model.question_memory(ids, types, mask)
        out = self.model.question_decoder.greedy_decode(
            z_x, H_hat, mask, prep.ext.expand(k, -1), len(prep.oovs), self.max_question_len)
        return [self._question_text(q, prep.oovs) for q in out]

    def _pairs(self, context: Context, prep, z_x, z_y, spans, questions, seed) -> List[GeneratedPair]:
        pairs = []
        for i, q in enumerate(questions):
            self.stats.requested += 1
            if not q.strip():
                self.stats.skipped += 1
                continue
            s, e = int(spans[i, 0]), int(spans[i, 1])
            c0, c1 = prep.offsets[s][0], prep.offsets[e][1]
            zy = z_y[i].argmax(-1).tolist() if z_y is not None else []
            pairs.append(GeneratedPair(context.id, context.text, q, context.text[c0:c1], c0, c1,
                                       (s, e), z_x[i].tolist(), zy, seed, self.model_hash,
                                       self.config_hash))
            self.stats.emitted += 1
        return pairs

    @torch.no_grad()
    def _decode_from_latents(self, context: Context, prep: _Prepared, z_x, c_enc, generator,
                             sample_zy: bool, seed: int):
        k = z_x.size(0)
        z_y = self.answer_latent(z_x, c_enc, generator, sample_zy)
        logits, _ = self.model.answer_logits(prep.ids.expand(k, -1), prep.mask.expand(k, -1), z_y)
        try:
            spans = decode_span(logits, self.max_answer_len)
        except DecodeError:
            self.stats.requested += k
            self.stats.skipped += k
            return []
        questions = self.questions_for(prep, spans, z_x)
        return self._pairs(context, prep, z_x, z_y, spans, questions, seed)

    @torch.no_grad()
    def generate_qa(self, context: Context, k: int, seed: int = 0,
                    sample_zy: bool = False) -> List[GeneratedPair]:
        """k draws of z_x ~ p(z_x|c), z_y ~ p(z_y|z_x,c), then answer span and greedy question."""
        if k <= 0:
            return []
        prep = self._prepare(context.text)
        g = torch.Generator().manual_seed(context_seed(seed, context.id))
        z_x, c_enc = self.prior_z_x(prep, k, g)
        return self._decode_from_latents(context, prep, z_x, c_enc, g, sample_zy, seed)

    def generate_corpus(self, contexts: Iterable[Context], k: int, seed: int = 0,
                        sample_zy: bool = False) -> List[GeneratedPair]:
        out: List[GeneratedPair] = []
        for ctx in contexts:
            out.extend(self.generate_qa(ctx, k, seed, sample_zy))
        return out

    @torch.no_grad()
    def one_to_many_questions(self, context: Context, span: Tuple[int, int], k: int, seed: int = 0,
                              z_x: Optional[torch.Tensor] = None) -> List[str]:
        """k questions for a fixed token span, one per prior draw of z_x (or the given z_x rows)."""
        prep = self._prepare(context.text)
        if not 0 <= span[0] <= span[1] < prep.ids.size(1):
            raise ValueError(f"span {span} outside context of {prep.ids.size(1)} tokens")
        if z_x is None:
            g = torch.Generator().manual_seed(context_seed(seed, context.id))
            z_x, _ = self.prior_z_x(prep, k, g)
        spans = torch.tensor([span] * z_x.size(0))
        return self.questions_for(prep, spans, z_x)

    @torch.no_grad()
    def posterior_mean(self, context: Context, question: str, answer_text: str,
                       answer_start: int) -> torch.Tensor:
        prep = self._prepare(context.text)
        align_answer_span(answer_start, answer_text, prep.offsets)
        q_ids, _ = encode_question(question, self.vocab, prep.oovs)
        q = torch.tensor([q_ids])
        lat = self.model.latent
        c_enc = lat.encode_context(prep.ids, prep.mask)
        q_enc = lat.encode_question(q, torch.ones_like(q))
        return lat.question_posterior(q_enc, c_enc).mu

    @torch.no_grad()
    def interpolate_pairs(self, pair_a: QARecord, pair_b: QARecord, context: Context, steps: int,
                          seed: int = 0, sample_zy: bool = True) -> Tuple[List[GeneratedPair], torch.Tensor]:
        """Decode QA pairs along z_x(t) = (1-t) mu_a + t mu_b, t evenly spaced in [0, 1].

        Returns the pairs and the (steps, z_dim) tensor of interpolated z_x.
        """
        mu_a = self.posterior_mean(context, pair_a.question, pair_a.answer_text, pair_a.answer_start)
        mu_b = self.posterior_mean(context, pair_b.question, pair_b.answer_text, pair_b.answer_start)
        ts = torch.linspace(0, 1, steps).unsqueeze(1) if steps > 1 else torch.zeros(1, 1)
        z_x = (1 - ts) * mu_a + ts * mu_b
        prep = self._prepare(context.text)
        g = torch.Generator().manual_seed(context_seed(seed, context.id))
        c_enc = self.model.latent.encode_context(prep.ids.expand(steps, -1), prep.mask.expand(steps, -1))
        return self._decode_from_latents(context, prep, z_x, c_enc, g, sample_zy, seed), z_x


def serialize_pairs(pairs: Sequence[GeneratedPair], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            f.write(p.to_json() + "\n")


def read_pairs(path) -> List[GeneratedPair]:
    with open(path, encoding="utf-8") as f:
        return [GeneratedPair.from_json(line) for line in f if line.strip()]


def unique_contexts(records: Iterable[QARecord]) -> List[Context]:
    seen: Dict[str, Context] = {}
    for r in records:
        seen.setdefault(r.context_id, Context(r.context_id, r.context))
    return list(seen.values())
