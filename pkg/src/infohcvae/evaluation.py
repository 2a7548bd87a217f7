"""EM/F1, QAE and R-QAE, MI scores, answer refinement and the semi-supervised protocol."""

import collections
import dataclasses
import hashlib
import json
import re
import string
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch

from .config import config_hash
from .corpus import QARecord, Vocabulary, build_batches, featurize
from .infomax import summarize
from .model import InfoHCVAE
from .qa_model import QAConfig, QAModel, build_qa_vocab, qa_train

_ARTICLES = re.compile(r"\b(a|an|the)\b", re.UNICODE)
_PUNCT = set(string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    return " ".join(_ARTICLES.sub(" ", text).split())


def exact_match(prediction: str, gold: str) -> float:
    return 100.0 * (normalize_answer(prediction) == normalize_answer(gold))


def token_f1(prediction: str, gold: str) -> float:
    pred, ref = normalize_answer(prediction).split(), normalize_answer(gold).split()
    if not pred or not ref:
        return 100.0 * (pred == ref)
    common = collections.Counter(pred) & collections.Counter(ref)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision, recall = same / len(pred), same / len(ref)
    return 100.0 * 2 * precision * recall / (precision + recall)


def records_hash(records: Sequence[QARecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(json.dumps(dataclasses.asdict(r), sort_keys=True).encode())
    return h.hexdigest()[:16]


@dataclass
class EvalReport:
    qae: Optional[Tuple[float, float]] = None
    rqae: Optional[Tuple[float, float]] = None
    mi_score: Optional[float] = None
    counts: Dict[str, int] = field(default_factory=dict)
    config_hash: str = ""
    extra: Dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def evaluate_qa(model, records: Sequence[QARecord]) -> Tuple[float, float]:
    """(EM, F1) in percent of a QA model (anything with predict_batch) on records."""
    if not records:
        raise ValueError("no evaluation records")
    preds = model.predict_batch([(r.context, r.question) for r in records])
    em = sum(exact_match(p[1], r.answer_text) for p, r in zip(preds, records)) / len(records)
    f1 = sum(token_f1(p[1], r.answer_text) for p, r in zip(preds, records)) / len(records)
    return em, f1


def qae(synthetic: Sequence[QARecord], human_test: Sequence[QARecord],
        qa_config: QAConfig, trainer=qa_train) -> Tuple[float, float]:
    """Train the QA model on synthetic pairs only; score it on human-annotated test pairs."""
    if not synthetic or not human_test:
        raise ValueError("qae needs non-empty synthetic and test sets")
    return evaluate_qa(trainer(synthetic, qa_config), human_test)


def rqae(human_train: Sequence[QARecord], synthetic: Sequence[QARecord],
         qa_config: QAConfig, trainer=qa_train) -> Tuple[float, float]:
    """Train on human pairs; score on the synthetic pairs (lower = more novel)."""
    if not synthetic or not human_train:
        raise ValueError("rqae needs non-empty human and synthetic sets")
    return evaluate_qa(trainer(human_train, qa_config), synthetic)


def refine_pairs(pairs: Sequence[QARecord], qa_model,
                 threshold: float = 40.0) -> Tuple[List[QARecord], int]:
    """Replace a generated answer by the QA model's prediction when their F1 < threshold."""
    preds = qa_model.predict_batch([(p.context, p.question) for p in pairs])
    out, replaced = [], 0
    for p, (_, text, start) in zip(pairs, preds):
        if token_f1(p.answer_text, text) < threshold:
            p = dataclasses.replace(p, answer_text=text, answer_start=start)
            replaced += 1
        out.append(p)
    return out, replaced


def sweep_thresholds(pairs: Sequence[QARecord], qa_model, human_train: Sequence[QARecord],
                     validation: Sequence[QARecord], qa_config: QAConfig,
                     thresholds: Sequence[float] = (20.0, 40.0, 60.0, 80.0)) -> Dict[float, dict]:
    """Semi-supervised EM/F1 on a validation split for each replacement threshold."""
    results = {}
    for t in thresholds:
        refined, n = refine_pairs(pairs, qa_model, t)
        report = semi_supervised_train(refined, human_train, validation, qa_config)
        results[t] = {"replaced": n, "em": report.extra["augmented"][0],
                      "f1": report.extra["augmented"][1]}
    return results


def semi_supervised_train(synthetic: Sequence[QARecord], human_train: Sequence[QARecord],
                          human_test: Sequence[QARecord], qa_config: QAConfig,
                          synthetic_lr: Optional[float] = None, human_lr: Optional[float] = None,
                          baseline: Optional[QAModel] = None) -> EvalReport:
    """Pretrain on synthetic, then fine-tune on human pairs; compare with human-only training.

    Learning rates default to the 2e-5 / 3e-5 ratio rescaled to qa_config.learning_rate.
    """
    if not human_train or not human_test:
        raise ValueError("human train/test sets must be non-empty")
    syn_lr = synthetic_lr if synthetic_lr is not None else qa_config.learning_rate * 2 / 3
    hum_lr = human_lr if human_lr is not None else qa_config.learning_rate
    if baseline is None:
        baseline = qa_train(human_train, qa_config, learning_rate=hum_lr)
    base = evaluate_qa(baseline, human_test)
    if synthetic:
        # the vocabulary must cover both phases
        torch.manual_seed(qa_config.seed)
        model = QAModel(build_qa_vocab(list(synthetic) + list(human_train), qa_config), qa_config)
        model = qa_train(synthetic, qa_config, model=model, learning_rate=syn_lr)
        model = qa_train(human_train, qa_config, model=model, learning_rate=hum_lr)
    else:
        model = baseline
    aug = evaluate_qa(model, human_test)
    return EvalReport(
        counts={"synthetic": len(synthetic), "human_train": len(human_train), "test": len(human_test)},
        config_hash=config_hash(qa_config),
        extra={"baseline": base, "augmented": aug, "synthetic_lr": syn_lr, "human_lr": hum_lr,
               "synthetic_hash": records_hash(synthetic), "human_hash": records_hash(human_train),
               "test_hash": records_hash(human_test)})


@torch.no_grad()
def pair_summaries(model: InfoHCVAE, records: Sequence[QARecord], vocab: Vocabulary,
                   batch_size: int = 64):
    """(x_bar, y_bar) per record from a deterministic teacher-forced pass (posterior means, argmax z_y)."""
    model.eval()
    examples = featurize(records, vocab)
    xs, ys = [], []
    lat = model.latent
    for batch in build_batches(examples, batch_size):
        c_enc = lat.encode_context(batch.context_ids, batch.context_mask)
        q_enc = lat.encode_question(batch.question_ids, batch.question_mask)
        z_x = lat.question_posterior(q_enc, c_enc).mu
        a_enc = lat.encode_answer_aware(batch.context_ids, batch.token_type_ids, batch.context_mask)
        post_a = lat.answer_posterior(z_x, a_enc)
        z_y = torch.nn.functional.one_hot(post_a.logits.argmax(-1), post_a.logits.size(-1)).float()
        _, H = model.answer_logits(batch.context_ids, batch.context_mask, z_y)
        H_hat = model.question_memory(batch.context_ids, batch.token_type_ids, batch.context_mask)
        step = model.question_decoder(batch.question_ids, z_x, H_hat, batch.context_mask,
                                      batch.context_ext_ids, batch.max_oov)
        x_bar, y_bar = summarize(step.fused, batch.question_mask[:, 1:], H, batch.spans)
        xs.append(x_bar)
        ys.append(y_bar)
    return torch.cat(xs), torch.cat(ys)


def estimate_mi(model: InfoHCVAE, records: Sequence[QARecord], vocab: Vocabulary,
                shuffle: bool = False) -> float:
    """Mean raw critic score x_bar^T W y_bar over pairs (shuffle pairs x_i with y_{i+1})."""
    x, y = pair_summaries(model, records, vocab)
    if shuffle:
        y = torch.roll(y, -1, 0)
    with torch.no_grad():
        return float(model.critic.score(x, y).mean())
