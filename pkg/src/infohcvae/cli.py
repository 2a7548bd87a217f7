"""Command line entry point.

Settings resolve as defaults < YAML config file (--config) < flags. Relative
data paths that do not exist are looked up under $INFOHCVAE_DATA_DIR.
Every command writes a provenance record next to its main output.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .config import ABLATION_LADDER, PROFILES, TrainingConfig
from .corpus import LoadStats, QARecord, Vocabulary, featurize, flatten, load_squad_json, write_squad_json
from .evaluation import (EvalReport, estimate_mi, qae, records_hash, refine_pairs, rqae,
                         semi_supervised_train, sweep_thresholds)
from .generation import QAGenerator, read_pairs, serialize_pairs, unique_contexts
from .qa_model import QAConfig, qa_train
from .toydata import make_toy_records
from .training import CheckpointError, load_checkpoint, train

logger = logging.getLogger("infohcvae")

DATA_DIR_ENV = "INFOHCVAE_DATA_DIR"

DEFAULTS: Dict[str, Any] = {
    "seed": 0, "profile": "desk", "epochs": 10, "max_steps": 0, "batch_size": 32,
    "learning_rate": 1e-3, "info_weight": 1.0, "kl_weight": 0.1, "ablation": "+infomax",
    "anneal_temperature": False, "k": 1, "sample_zy": False, "interpolate_steps": 5,
    "threshold": 40.0, "qa_epochs": 2, "qa_batch_size": 32, "qa_learning_rate": 1e-3,
    "paragraphs": 100, "questions_per_paragraph": 3, "max_vocab": 30000,
}


class CliError(Exception):
    pass


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def resolve_path(path: Optional[str], must_exist: bool = True) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(DATA_DIR_ENV):
        alt = Path(os.environ[DATA_DIR_ENV]) / p
        if alt.exists():
            p = alt
    if must_exist and not p.exists():
        raise FileNotFoundError(str(p))
    return p


def resolve_config(args: argparse.Namespace) -> Dict[str, Any]:
    """defaults < config file < explicitly given flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = resolve_path(args.config)
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise CliError(f"{path}: config must be a mapping")
        unknown = set(loaded) - set(DEFAULTS) - set(vars(args))
        if unknown:
            raise CliError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key, value in vars(args).items():
        if key in ("func", "config"):
            continue
        if value is not None:
            cfg[key] = value
        else:
            cfg.setdefault(key, None)
    return cfg


def run_hash(cfg: Dict[str, Any]) -> str:
    blob = json.dumps({k: v for k, v in cfg.items() if k != "command"}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_provenance(out: Path, cfg: Dict[str, Any], **extra) -> Path:
    record = {"command": cfg.get("command"), "config": cfg, "config_hash": run_hash(cfg),
              "seed": cfg.get("seed"), **extra}
    path = out.parent / (out.name + ".provenance.json") if not out.is_dir() else out / "provenance.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str))
    return path


def load_records(path) -> List[QARecord]:
    """SQuAD-style JSON or generated-pair JSONL."""
    path = resolve_path(path)
    if path.suffix == ".jsonl":
        return [p.to_record(i) for i, p in enumerate(read_pairs(path))]
    stats = LoadStats()
    records = flatten(load_squad_json(path, stats))
    if stats.skipped_offsets:
        logger.warning("%s: skipped %d records with bad answer offsets", path, stats.skipped_offsets)
    return records


def training_config(cfg: Dict[str, Any]) -> TrainingConfig:
    flags = ABLATION_LADDER[cfg["ablation"]]
    return TrainingConfig(
        info_weight=cfg["info_weight"], kl_weight=cfg["kl_weight"], batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"], epochs=cfg["epochs"], max_steps=cfg["max_steps"],
        seed=cfg["seed"], temperature=1.0, anneal_temperature=cfg["anneal_temperature"],
        profile=cfg["profile"], **flags)


def qa_config(cfg: Dict[str, Any]) -> QAConfig:
    return QAConfig(epochs=cfg["qa_epochs"], batch_size=cfg["qa_batch_size"],
                    learning_rate=cfg["qa_learning_rate"], seed=cfg["seed"])


def _load_generator(cfg) -> QAGenerator:
    ckpt = load_checkpoint(resolve_path(cfg["checkpoint"]))
    tcfg = TrainingConfig(**ckpt.training_config)
    return QAGenerator(ckpt.build_model(), ckpt.vocabulary(), tcfg, config_hash=ckpt.config_hash)


# commands

def cmd_make_toy(cfg) -> int:
    out = resolve_path(cfg["out"], must_exist=False)
    records = make_toy_records(cfg["paragraphs"], cfg["questions_per_paragraph"], seed=cfg["seed"])
    write_squad_json(records, out)
    write_provenance(out, cfg, records=len(records), data_hash=records_hash(records))
    print(f"wrote {len(records)} records to {out}")
    return 0


def cmd_train(cfg) -> int:
    records = load_records(cfg["data"])
    out = resolve_path(cfg["out"], must_exist=False)
    texts = [c.text for c in unique_contexts(records)] + [r.question for r in records]
    vocab = Vocabulary.build(texts, max_size=cfg["max_vocab"])
    tcfg = training_config(cfg)
    result = train(featurize(records, vocab), vocab, tcfg, out_dir=out, log_every=10)
    last = result.checkpoints[-1] if result.checkpoints else None
    write_provenance(out, cfg, data_hash=records_hash(records), steps=result.step,
                     checkpoint=str(last) if last else None,
                     checkpoint_hash=_sha256_file(last) if last else None)
    print(f"trained {result.step} steps; checkpoint {last}")
    return 0


def cmd_generate(cfg) -> int:
    gen = _load_generator(cfg)
    contexts = unique_contexts(load_records(cfg["data"]))
    pairs = gen.generate_corpus(contexts, cfg["k"], cfg["seed"], cfg["sample_zy"])
    out = resolve_path(cfg["out"], must_exist=False)
    serialize_pairs(pairs, out)
    write_provenance(out, cfg, checkpoint_hash=_sha256_file(resolve_path(cfg["checkpoint"])),
                     model_hash=gen.model_hash, emitted=gen.stats.emitted, skipped=gen.stats.skipped)
    print(f"wrote {len(pairs)} pairs to {out} (skipped {gen.stats.skipped})")
    return 0


def cmd_interpolate(cfg) -> int:
    gen = _load_generator(cfg)
    records = load_records(cfg["data"])
    by_ctx: Dict[str, List[QARecord]] = {}
    for r in records:
        by_ctx.setdefault(r.context_id, []).append(r)
    ctx_id = cfg["context_id"] or next((c for c, rs in by_ctx.items() if len(rs) >= 2), None)
    if ctx_id is None or len(by_ctx.get(ctx_id, [])) < 2:
        raise CliError("interpolation needs a context with at least two QA pairs")
    a, b = by_ctx[ctx_id][:2]
    context = unique_contexts([a])[0]
    pairs, _ = gen.interpolate_pairs(a, b, context, cfg["interpolate_steps"], cfg["seed"])
    out = resolve_path(cfg["out"], must_exist=False)
    serialize_pairs(pairs, out)
    write_provenance(out, cfg, checkpoint_hash=_sha256_file(resolve_path(cfg["checkpoint"])),
                     model_hash=gen.model_hash, context_id=ctx_id)
    for p in pairs:
        print(f"{p.question_text}\t{p.answer_text}")
    return 0


def _write_report(cfg, report: EvalReport) -> int:
    report.config_hash = report.config_hash or run_hash(cfg)
    text = report.to_json()
    if cfg.get("out"):
        out = resolve_path(cfg["out"], must_exist=False)
        out.write_text(text + "\n")
        write_provenance(out, cfg)
    print(text)
    return 0


def cmd_eval_qae(cfg) -> int:
    synthetic, test = load_records(cfg["synthetic"]), load_records(cfg["test"])
    em_f1 = qae(synthetic, test, qa_config(cfg))
    return _write_report(cfg, EvalReport(qae=em_f1, counts={"synthetic": len(synthetic), "test": len(test)},
                                         extra={"synthetic_hash": records_hash(synthetic),
                                                "test_hash": records_hash(test)}))


def cmd_eval_rqae(cfg) -> int:
    human, synthetic = load_records(cfg["human"]), load_records(cfg["synthetic"])
    em_f1 = rqae(human, synthetic, qa_config(cfg))
    return _write_report(cfg, EvalReport(rqae=em_f1, counts={"human": len(human), "synthetic": len(synthetic)},
                                         extra={"synthetic_hash": records_hash(synthetic),
                                                "human_hash": records_hash(human)}))


def cmd_eval_mi(cfg) -> int:
    ckpt = load_checkpoint(resolve_path(cfg["checkpoint"]))
    records = load_records(cfg["data"])
    model, vocab = ckpt.build_model(), ckpt.vocabulary()
    score = estimate_mi(model, records, vocab)
    shuffled = estimate_mi(model, records, vocab, shuffle=True)
    return _write_report(cfg, EvalReport(mi_score=score, counts={"pairs": len(records)},
                                         extra={"shuffled_mi_score": shuffled}))


def cmd_refine(cfg) -> int:
    pairs, human = load_records(cfg["synthetic"]), load_records(cfg["human"])
    model = qa_train(human, qa_config(cfg))
    refined, replaced = refine_pairs(pairs, model, cfg["threshold"])
    out = resolve_path(cfg["out"], must_exist=False)
    write_squad_json(refined, out)
    write_provenance(out, cfg, replaced=replaced, pairs=len(pairs))
    report = EvalReport(counts={"pairs": len(pairs), "replaced": replaced},
                        extra={"threshold": cfg["threshold"], "refined": str(out)})
    report.config_hash = run_hash(cfg)
    print(report.to_json())
    return 0


def cmd_semi_sup(cfg) -> int:
    synthetic, human, test = (load_records(cfg["synthetic"]), load_records(cfg["human"]),
                              load_records(cfg["test"]))
    report = semi_supervised_train(synthetic, human, test, qa_config(cfg))
    return _write_report(cfg, report)


def cmd_sweep(cfg) -> int:
    pairs, human, val = (load_records(cfg["synthetic"]), load_records(cfg["human"]),
                         load_records(cfg["validation"]))
    qcfg = qa_config(cfg)
    results = sweep_thresholds(pairs, qa_train(human, qcfg), human, val, qcfg,
                               thresholds=cfg["thresholds"] or (20.0, 40.0, 60.0, 80.0))
    best = max(results, key=lambda t: (results[t]["em"], results[t]["f1"], -t))
    report = EvalReport(counts={"pairs": len(pairs)},
                        extra={"sweep": {str(k): v for k, v in results.items()}, "best_threshold": best})
    return _write_report(cfg, report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infohcvae", description="QA-pair generation with a hierarchical CVAE")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="YAML file with default settings")
        p.add_argument("--seed", type=int)
        return p

    def qa_flags(p):
        p.add_argument("--qa-epochs", type=int)
        p.add_argument("--qa-batch-size", type=int)
        p.add_argument("--qa-learning-rate", type=float)

    p = command("make-toy", cmd_make_toy, "write a synthetic SQuAD-style corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--paragraphs", type=int)
    p.add_argument("--questions-per-paragraph", type=int)

    p = command("train", cmd_train, "train Info-HCVAE")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--ablation", choices=list(ABLATION_LADDER))
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--info-weight", type=float)
    p.add_argument("--kl-weight", type=float)
    p.add_argument("--max-vocab", type=int)
    p.add_argument("--anneal-temperature", action="store_true", default=None)

    p = command("generate", cmd_generate, "sample QA pairs for every context")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="generated.jsonl")
    p.add_argument("--k", type=int)
    p.add_argument("--sample-zy", action="store_true", default=None)

    p = command("interpolate", cmd_interpolate, "decode along a line between two posterior means")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--context-id")
    p.add_argument("--out", default="interpolation.jsonl")
    p.add_argument("--interpolate-steps", type=int)

    p = command("eval-qae", cmd_eval_qae, "train QA on synthetic pairs, test on human pairs")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out")
    qa_flags(p)

    p = command("eval-rqae", cmd_eval_rqae, "train QA on human pairs, test on synthetic pairs")
    p.add_argument("--human", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--out")
    qa_flags(p)

    p = command("eval-mi", cmd_eval_mi, "mean critic score on true and shuffled pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")

    p = command("refine", cmd_refine, "replace low-F1 generated answers with QA predictions")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--human", required=True)
    p.add_argument("--out", default="refined.json")
    p.add_argument("--threshold", type=float)
    qa_flags(p)

    p = command("semi-sup", cmd_semi_sup, "pretrain QA on synthetic, finetune on human")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--human", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out")
    qa_flags(p)

    p = command("sweep-threshold", cmd_sweep, "semi-supervised score for several refine thresholds")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--human", required=True)
    p.add_argument("--validation", required=True)
    p.add_argument("--thresholds", type=float, nargs="+")
    p.add_argument("--out")
    qa_flags(p)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = args.func
    del args.verbose
    try:
        cfg = resolve_config(args)
        return func(cfg)
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename or e}", file=sys.stderr)
        return 1
    except (CliError, CheckpointError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
