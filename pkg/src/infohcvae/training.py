"""Optimization loop, metrics logging and checkpoint I/O for Info-HCVAE."""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import torch
from safetensors import SafetensorError, safe_open
from safetensors.torch import load_file, save_file

from .config import ModelConfig, TrainingConfig, config_hash, model_config
from .corpus import TokenizedExample, Vocabulary, build_batches
from .model import InfoHCVAE, TrainingError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = "1"


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    model_state: Dict[str, torch.Tensor]
    optimizer_state: Optional[Dict[str, Any]]
    step: int
    model_config: Dict[str, Any]
    training_config: Dict[str, Any]
    rng_state: Optional[torch.Tensor]
    vocab: List[str]
    config_hash: str = ""
    extra: Dict[str, Any] = field(default_factory=dict)

    def build_model(self) -> InfoHCVAE:
        model = InfoHCVAE(ModelConfig(**self.model_config))
        model.load_state_dict(self.model_state)
        return model

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.from_json(self.vocab)


def _split_optimizer_state(state):
    tensors, meta = {}, {"param_groups": state["param_groups"], "state": {}}
    for pid, slots in state["state"].items():
        meta["state"][str(pid)] = []
        for key, val in slots.items():
            tensors[f"optim/{pid}/{key}"] = val
            meta["state"][str(pid)].append(key)
    return tensors, meta


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = {f"model/{k}": v.detach().clone().contiguous() for k, v in ckpt.model_state.items()}
    meta: Dict[str, Any] = {
        "format_version": CHECKPOINT_VERSION, "step": ckpt.step,
        "model_config": ckpt.model_config, "training_config": ckpt.training_config,
        "vocab": ckpt.vocab, "config_hash": ckpt.config_hash, "extra": ckpt.extra,
    }
    if ckpt.optimizer_state is not None:
        opt_tensors, meta["optimizer"] = _split_optimizer_state(ckpt.optimizer_state)
        tensors.update({k: v.detach().clone().contiguous() for k, v in opt_tensors.items()})
    if ckpt.rng_state is not None:
        tensors["rng/torch"] = ckpt.rng_state.clone()
    path = Path(path)
    save_file(tensors, str(path), metadata={"meta": json.dumps(meta, sort_keys=True)})
    sidecar = {k: meta[k] for k in ("format_version", "step", "model_config", "training_config",
                                    "config_hash")}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path) -> Checkpoint:
    try:
        with safe_open(str(path), framework="pt") as f:
            raw_meta = f.metadata() or {}
        tensors = load_file(str(path))
    except (SafetensorError, OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if "meta" not in raw_meta:
        raise CheckpointError(f"{path}: missing checkpoint header")
    meta = json.loads(raw_meta["meta"])
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {meta.get('format_version')!r}, "
                              f"expected {CHECKPOINT_VERSION!r}")
    model_state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    opt_state = None
    if "optimizer" in meta:
        opt_meta = meta["optimizer"]
        opt_state = {"param_groups": opt_meta["param_groups"], "state": {}}
        for pid, keys in opt_meta["state"].items():
            opt_state["state"][int(pid)] = {k: tensors[f"optim/{pid}/{k}"] for k in keys}
    return Checkpoint(model_state, opt_state, meta["step"], meta["model_config"],
                      meta["training_config"], tensors.get("rng/torch"), meta["vocab"],
                      meta.get("config_hash", ""), meta.get("extra", {}))


@dataclass
class TrainResult:
    model: InfoHCVAE
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    step: int
    history: List[Dict[str, float]]
    checkpoints: List[Path] = field(default_factory=list)

    def checkpoint(self, vocab: Vocabulary, tcfg: TrainingConfig) -> Checkpoint:
        return Checkpoint(self.model.state_dict(), self.optimizer.state_dict(), self.step,
                          dataclasses.asdict(self.model.cfg), dataclasses.asdict(tcfg),
                          self.generator.get_state(), vocab.to_json(),
                          config_hash(self.model.cfg, tcfg))


def build_model(vocab: Vocabulary, profile: str = "desk", seed: int = 0, **overrides) -> InfoHCVAE:
    torch.manual_seed(seed)
    return InfoHCVAE(model_config(profile, vocab_size=len(vocab), **overrides))


def make_optimizer(model, lr: float):
    return torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=lr)


def train(examples: Sequence[TokenizedExample], vocab: Vocabulary, tcfg: TrainingConfig,
          model: Optional[InfoHCVAE] = None, out_dir=None, log_every: int = 0,
          on_step=None, **model_overrides) -> TrainResult:
    """Adam on the one-sample ELBO (+ lambda * InfoMax); checkpoints each epoch into out_dir."""
    if not examples:
        raise ValueError("training set is empty")
    torch.use_deterministic_algorithms(True)
    if model is None:
        model = build_model(vocab, tcfg.profile, tcfg.seed, **model_overrides)
    model.train()
    optimizer = make_optimizer(model, tcfg.learning_rate)
    generator = torch.Generator().manual_seed(tcfg.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "metrics.jsonl", "w", encoding="utf-8")
    chash = config_hash(model.cfg, tcfg)

    steps_per_epoch = -(-len(examples) // tcfg.batch_size)
    total_steps = tcfg.max_steps or tcfg.epochs * steps_per_epoch
    history: List[Dict[str, float]] = []
    result = TrainResult(model, optimizer, generator, 0, history)
    step, epoch = 0, 0
    try:
        while step < total_steps:
            for b_idx, batch in enumerate(build_batches(examples, tcfg.batch_size,
                                                        shuffle_seed=tcfg.seed * 100003 + epoch)):
                if step >= total_steps:
                    break
                tau = tcfg.temperature
                if tcfg.anneal_temperature:
                    tau = tcfg.temperature - 0.5 * tcfg.temperature * step / max(1, total_steps - 1)
                losses, aux = model.compute_loss(batch, tcfg, generator, temperature=tau,
                                                 batch_id=f"{epoch}:{b_idx}")
                total = float(losses.total.detach())
                if total > tcfg.divergence_threshold:
                    raise TrainingError(f"loss diverged ({total:.3g}) at step {step}, "
                                        f"batch {epoch}:{b_idx}")
                optimizer.zero_grad()
                losses.total.backward()
                if tcfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_(params, tcfg.grad_clip)
                optimizer.step()
                step += 1
                record = {"step": step, "epoch": epoch, **losses.as_dict(),
                          "token_acc": aux["token_correct"] / max(1, aux["token_total"]),
                          "span_acc": aux["span_correct"] / max(1, aux["span_total"]),
                          "config_hash": chash}
                history.append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                if log_every and step % log_every == 0:
                    logger.info("step %d total %.4f q %.3f a %.3f info %.3f", step,
                                record["total"], record["question_nll"], record["answer_nll"],
                                record["l_info"])
                if on_step is not None:
                    on_step(step, losses, aux)
            epoch += 1
            result.step = step
            if out_dir is not None:
                path = out_dir / f"checkpoint-epoch{epoch}.safetensors"
                save_checkpoint(path, result.checkpoint(vocab, tcfg))
                result.checkpoints.append(path)
    finally:
        if log_file:
            log_file.close()
    result.step = step
    return result


@torch.no_grad()
def teacher_forced_accuracy(model: InfoHCVAE, examples: Sequence[TokenizedExample],
                            tcfg: TrainingConfig, seed: int = 0, batch_size: int = 64):
    """(question token accuracy, span accuracy) with posterior samples, as during training."""
    model.eval()
    g = torch.Generator().manual_seed(seed)
    tc = tt = sc = st = 0
    for batch in build_batches(examples, batch_size):
        _, aux = model.compute_loss(batch, tcfg, g)
        tc += aux["token_correct"]
        tt += aux["token_total"]
        sc += aux["span_correct"]
        st += aux["span_total"]
    model.train()
    return tc / max(1, tt), sc / max(1, st)
