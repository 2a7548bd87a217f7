"""Model/training configuration, scale profiles and config hashing."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict


@dataclass
class ModelConfig:
    vocab_size: int = 0
    d_emb: int = 768
    d_c: int = 768
    contextual_layers: int = 2
    contextual_heads: int = 4
    max_positions: int = 512
    latent_hidden: int = 300       # per direction, prior/posterior encoders
    answer_hidden: int = 300       # per direction, answer generation Bi-LSTM
    qg_enc_hidden: int = 450       # per direction, question encoder
    qg_dec_hidden: int = 900
    qg_dec_layers: int = 2
    maxout_pieces: int = 2
    z_x_dim: int = 50
    z_y_blocks: int = 20
    z_y_classes: int = 10
    freeze_embeddings: bool = True
    freeze_contextual: bool = True


PROFILES: Dict[str, Dict[str, Any]] = {
    "full": {},
    # widths divided by four
    "desk": dict(d_emb=128, d_c=128, latent_hidden=75, answer_hidden=75, qg_enc_hidden=112,
                 qg_dec_hidden=224, max_positions=400),
    # unit-test scale
    "tiny": dict(d_emb=32, d_c=32, contextual_heads=2, latent_hidden=16, answer_hidden=16,
                 qg_enc_hidden=16, qg_dec_hidden=32, max_positions=400, z_x_dim=8,
                 z_y_blocks=4, z_y_classes=5),
}


def model_config(profile: str = "desk", **overrides) -> ModelConfig:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return ModelConfig(**{**PROFILES[profile], **overrides})


@dataclass
class TrainingConfig:
    info_weight: float = 1.0          # lambda
    kl_weight: float = 0.1
    batch_size: int = 32
    learning_rate: float = 1e-3
    epochs: int = 10
    max_steps: int = 0                # 0 = run all epochs
    seed: int = 0
    enable_question_latent: bool = True
    enable_answer_latent: bool = True
    enable_infomax: bool = True
    temperature: float = 1.0
    anneal_temperature: bool = False  # linearly anneal 1.0 -> 0.5 over training
    grad_clip: float = 5.0
    profile: str = "desk"
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.info_weight < 0:
            raise ValueError("info_weight must be >= 0")
        if not 0 < self.kl_weight <= 1:
            raise ValueError("kl_weight must lie in (0, 1]")
        if self.enable_answer_latent and not self.enable_question_latent:
            raise ValueError("the answer latent requires the question latent")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


ABLATION_LADDER = {
    "baseline": dict(enable_question_latent=False, enable_answer_latent=False, enable_infomax=False),
    "+q-latent": dict(enable_question_latent=True, enable_answer_latent=False, enable_infomax=False),
    "+a-latent": dict(enable_question_latent=True, enable_answer_latent=True, enable_infomax=False),
    "+infomax": dict(enable_question_latent=True, enable_answer_latent=True, enable_infomax=True),
}


def config_hash(*configs) -> str:
    payload = [dataclasses.asdict(c) if dataclasses.is_dataclass(c) else c for c in configs]
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
