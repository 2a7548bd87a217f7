"""Prior/posterior networks, reparameterized samplers and KL terms for z_x and z_y."""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoding import BiEncoder, SequenceEncoding, masked_mean

LOG_VAR_CLAMP = 10.0
_EPS = 1e-20


@dataclass
class GaussianParams:
    mu: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        self.log_var = self.log_var.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP)

    @property
    def sigma(self):
        return torch.exp(0.5 * self.log_var)


@dataclass
class CategoricalParams:
    logits: torch.Tensor  # (..., blocks, classes)

    @property
    def probs(self):
        return F.softmax(self.logits, dim=-1)

    @property
    def log_probs(self):
        return F.log_softmax(self.logits, dim=-1)


def sample_gaussian(params: GaussianParams, noise: torch.Tensor) -> torch.Tensor:
    if noise.shape != params.mu.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != {tuple(params.mu.shape)}")
    return params.mu + params.sigma * noise


def gumbel_noise(uniform: torch.Tensor) -> torch.Tensor:
    return -torch.log(-torch.log(uniform.clamp(_EPS, 1.0 - 1e-7)))


def sample_gumbel_softmax(params: CategoricalParams, temperature: float,
                          uniform_noise: torch.Tensor) -> torch.Tensor:
    """Relaxed one-hot sample per block: softmax((logits + g) / tau)."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    return F.softmax((params.logits + gumbel_noise(uniform_noise)) / temperature, dim=-1)


def hard_categorical(params: CategoricalParams) -> torch.Tensor:
    """Exact one-hot at the per-block argmax."""
    idx = params.logits.argmax(-1)
    return F.one_hot(idx, params.logits.size(-1)).to(params.logits.dtype)


def sample_categorical(params: CategoricalParams, generator=None) -> torch.Tensor:
    flat = params.probs.reshape(-1, params.logits.size(-1))
    idx = torch.multinomial(flat, 1, generator=generator).view(params.logits.shape[:-1])
    return F.one_hot(idx, params.logits.size(-1)).to(params.logits.dtype)


def kl_gaussian(posterior: GaussianParams, prior: GaussianParams) -> torch.Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last dimension."""
    var_q, var_p = posterior.log_var.exp(), prior.log_var.exp()
    kl = 0.5 * (prior.log_var - posterior.log_var) + (var_q + (posterior.mu - prior.mu) ** 2) / (2 * var_p) - 0.5
    return kl.sum(-1)


def kl_categorical(posterior: CategoricalParams, prior: CategoricalParams) -> torch.Tensor:
    """KL(q || p) summed over blocks and classes."""
    q_log = posterior.log_probs
    kl = (q_log.exp() * (q_log - prior.log_probs)).sum(-1)
    return kl.sum(-1)


def gaussian_log_density(z, params: GaussianParams):
    return (-0.5 * (math.log(2 * math.pi) + params.log_var
                    + (z - params.mu) ** 2 / params.log_var.exp())).sum(-1)


class _Head(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.hidden = nn.Linear(in_dim, hidden)
        self.out = nn.Linear(hidden, out_dim)

    def forward(self, x):
        return self.out(torch.tanh(self.hidden(x)))

    def zero_(self):
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        return self


class GaussianNet(nn.Module):
    """MLP mapping encoder summaries to (mu, log_var)."""

    def __init__(self, in_dim: int, hidden: int, z_dim: int):
        super().__init__()
        self.z_dim = z_dim
        self.head = _Head(in_dim, hidden, 2 * z_dim)

    def forward(self, *features) -> GaussianParams:
        mu, log_var = self.head(torch.cat(features, -1)).chunk(2, -1)
        return GaussianParams(mu, log_var)


class CategoricalNet(nn.Module):
    """MLP mapping [z_x; context summary] to per-block logits."""

    def __init__(self, in_dim: int, hidden: int, blocks: int, classes: int):
        super().__init__()
        self.blocks, self.classes = blocks, classes
        self.head = _Head(in_dim, hidden, blocks * classes)

    def forward(self, *features) -> CategoricalParams:
        logits = self.head(torch.cat(features, -1))
        return CategoricalParams(logits.view(*logits.shape[:-1], self.blocks, self.classes))


class LatentNetworks(nn.Module):
    """Both priors and both posteriors, each over its own Bi-LSTM summary."""

    def __init__(self, embedder, hidden: int, z_x_dim: int, blocks: int, classes: int):
        super().__init__()
        d = embedder.dim
        self.embedder = embedder
        self.context_encoder = BiEncoder(d, hidden)
        self.question_encoder = BiEncoder(d, hidden)
        self.answer_encoder = BiEncoder(d, hidden)
        self.q_prior = GaussianNet(2 * hidden, 2 * hidden, z_x_dim)
        self.q_posterior = GaussianNet(4 * hidden, 2 * hidden, z_x_dim)
        self.a_prior = CategoricalNet(z_x_dim + 2 * hidden, 2 * hidden, blocks, classes)
        self.a_posterior = CategoricalNet(z_x_dim + 4 * hidden, 2 * hidden, blocks, classes)

    def encode_context(self, context_ids, mask):
        return self.context_encoder(self.embedder(context_ids), mask)

    def encode_question(self, question_ids, mask):
        return self.question_encoder(self.embedder(question_ids), mask)

    def encode_answer_aware(self, context_ids, token_type_ids, mask):
        # summary = [final states; mean state over the answer span]
        enc = self.answer_encoder(self.embedder(context_ids, token_type_ids), mask)
        span_mean = masked_mean(enc.states, token_type_ids * mask)
        return SequenceEncoding(enc.states, torch.cat([enc.summary, span_mean], -1))

    def question_prior(self, context_encoding) -> GaussianParams:
        return self.q_prior(context_encoding.summary)

    def question_posterior(self, question_encoding, context_encoding) -> GaussianParams:
        return self.q_posterior(question_encoding.summary, context_encoding.summary)

    def answer_prior(self, z_x, context_encoding) -> CategoricalParams:
        return self.a_prior(z_x, context_encoding.summary)

    def answer_posterior(self, z_x, answer_encoding) -> CategoricalParams:
        return self.a_posterior(z_x, answer_encoding.summary)
