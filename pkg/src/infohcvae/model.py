"""The full Info-HCVAE: latent networks, answer/question generators and the critic."""

import hashlib
from dataclasses import dataclass, fields
from typing import Dict, Optional

import torch
import torch.nn as nn

from .answer_decoder import AnswerDecoder, answer_nll, decode_span
from .config import ModelConfig, TrainingConfig
from .encoding import ContextualEmbedder, Embedder
from .infomax import BilinearCritic, summarize
from .latent import (LatentNetworks, kl_categorical, kl_gaussian, sample_gaussian,
                     sample_gumbel_softmax)
from .question_decoder import QuestionDecoder, QuestionEncoder, question_nll


class TrainingError(RuntimeError):
    pass


@dataclass
class LossBreakdown:
    question_nll: torch.Tensor
    answer_nll: torch.Tensor
    kl_q: torch.Tensor
    kl_a: torch.Tensor
    l_info: torch.Tensor
    total: torch.Tensor

    def as_dict(self) -> Dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}

    def check_signs(self) -> bool:
        return (float(self.question_nll.detach()) >= 0 and float(self.answer_nll.detach()) >= 0
                and float(self.kl_q.detach()) >= 0 and float(self.kl_a.detach()) >= 0
                and float(self.l_info.detach()) <= 0)


class InfoHCVAE(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.vocab_size <= 0:
            raise ValueError("vocab_size must be set")
        self.cfg = cfg
        self.embedder = Embedder(cfg.vocab_size, cfg.d_emb, cfg.max_positions,
                                 frozen=cfg.freeze_embeddings)
        self.contextual = ContextualEmbedder(self.embedder, cfg.contextual_layers,
                                             cfg.contextual_heads, frozen=cfg.freeze_contextual)
        self.latent = LatentNetworks(self.embedder, cfg.latent_hidden, cfg.z_x_dim,
                                     cfg.z_y_blocks, cfg.z_y_classes)
        self.answer_decoder = AnswerDecoder(cfg.d_c, cfg.answer_hidden,
                                            cfg.z_y_blocks * cfg.z_y_classes)
        self.question_encoder = QuestionEncoder(cfg.d_c, cfg.qg_enc_hidden)
        self.question_decoder = QuestionDecoder(self.embedder.word, self.question_encoder.output_dim,
                                                cfg.qg_dec_hidden, cfg.z_x_dim, cfg.qg_dec_layers,
                                                cfg.maxout_pieces)
        self.critic = BilinearCritic(cfg.d_emb, self.answer_decoder.output_dim)

    def parameter_groups(self) -> Dict[str, Dict[str, nn.Parameter]]:
        """Named parameters split into prior / posterior / generation / critic / embedding."""
        groups: Dict[str, Dict[str, nn.Parameter]] = {
            "embedding": {}, "prior": {}, "posterior": {}, "generation": {}, "critic": {}}
        for name, p in self.named_parameters():
            if name.startswith(("embedder.", "contextual.")):
                groups["embedding"][name] = p
            elif name.startswith(("latent.q_prior", "latent.a_prior", "latent.context_encoder")):
                groups["prior"][name] = p
            elif name.startswith("latent."):
                groups["posterior"][name] = p
            elif name.startswith("critic."):
                groups["critic"][name] = p
            else:
                groups["generation"][name] = p
        return groups

    def model_hash(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()[:16]

    # pieces shared by training and generation

    def context_embedding(self, context_ids, mask, token_type_ids=None):
        if token_type_ids is None:
            token_type_ids = torch.zeros_like(context_ids)
        return self.contextual(context_ids, token_type_ids, mask)

    def answer_logits(self, context_ids, mask, z_y, context_emb=None):
        if context_emb is None:
            context_emb = self.context_embedding(context_ids, mask)
        return self.answer_decoder(context_emb, z_y, mask)

    def question_memory(self, context_ids, token_type_ids, mask):
        return self.question_encoder(self.context_embedding(context_ids, mask, token_type_ids), mask)

    def compute_loss(self, batch, config: TrainingConfig, generator: Optional[torch.Generator] = None,
                     temperature: Optional[float] = None, batch_id=None):
        """One-sample ELBO (+ InfoMax) for a batch; returns (LossBreakdown, aux)."""
        tau = config.temperature if temperature is None else temperature
        ctx, c_mask = batch.context_ids, batch.context_mask
        B = ctx.size(0)
        zero = torch.zeros(B)

        c_enc = self.latent.encode_context(ctx, c_mask)
        prior_q = self.latent.question_prior(c_enc)
        if config.enable_question_latent:
            q_enc = self.latent.encode_question(batch.question_ids, batch.question_mask)
            post_q = self.latent.question_posterior(q_enc, c_enc)
            noise = torch.randn(post_q.mu.shape, generator=generator)
            z_x = sample_gaussian(post_q, noise)
            kl_q = kl_gaussian(post_q, prior_q)
        else:
            z_x, kl_q = prior_q.mu, zero

        prior_a = self.latent.answer_prior(z_x, c_enc)
        if config.enable_answer_latent:
            a_enc = self.latent.encode_answer_aware(ctx, batch.token_type_ids, c_mask)
            post_a = self.latent.answer_posterior(z_x, a_enc)
            u = torch.rand(post_a.logits.shape, generator=generator)
            z_y = sample_gumbel_softmax(post_a, tau, u)
            kl_a = kl_categorical(post_a, prior_a)
        else:
            z_y, kl_a = prior_a.probs, zero

        span_logits, H = self.answer_logits(ctx, c_mask, z_y)
        a_nll = answer_nll(span_logits, batch.spans)

        H_hat = self.question_memory(ctx, batch.token_type_ids, c_mask)
        step = self.question_decoder(batch.question_ids, z_x, H_hat, c_mask,
                                     batch.context_ext_ids, batch.max_oov)
        q_nll = question_nll(step, batch.question_ext_ids)

        l_info = torch.zeros(())
        if config.enable_infomax and B >= 2:
            x_bar, y_bar = summarize(step.fused, batch.question_mask[:, 1:], H, batch.spans)
            l_info = self.critic(x_bar, y_bar)

        q_nll, a_nll, kl_q, kl_a = q_nll.mean(), a_nll.mean(), kl_q.mean(), kl_a.mean()
        total = q_nll + a_nll + config.kl_weight * (kl_q + kl_a) - config.info_weight * l_info
        losses = LossBreakdown(q_nll, a_nll, kl_q, kl_a, l_info, total)
        for name, value in losses.as_dict().items():
            if value != value:
                raise TrainingError(f"NaN in {name} (batch {batch_id})")

        with torch.no_grad():
            target = batch.question_ext_ids[:, 1:]
            valid = target != 0
            correct = (step.probs.argmax(-1) == target) & valid
            pred_spans = decode_span(span_logits)
        aux = {
            "token_correct": int(correct.sum()), "token_total": int(valid.sum()),
            "span_correct": int((pred_spans == batch.spans).all(1).sum()), "span_total": B,
            "z_x": z_x, "z_y": z_y, "step": step, "H": H,
        }
        return losses, aux
