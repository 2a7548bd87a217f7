"""Question generation network p(x | z_x, y, c).

Answer-aware context -> 2-layer Bi-LSTM -> gated self-attention -> H_hat.
A 2-layer LSTM decoder starts from a projection of z_x, attends over H_hat
(r_j = H_hat W_a d_j), fuses [d_j; s_j] with a maxout layer, scores the
vocabulary against the frozen word-embedding matrix and mixes in a copy
distribution over context tokens.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from .encoding import BiEncoder

LOG_EPS = 1e-12


def masked_softmax(scores, mask, dim=-1):
    scores = scores.masked_fill(mask == 0, float("-inf"))
    return F.softmax(scores, dim=dim)


class GatedSelfAttention(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.score = nn.Linear(dim, dim, bias=False)
        self.fuse = nn.Linear(2 * dim, dim)
        self.gate = nn.Linear(2 * dim, dim)

    def forward(self, H, mask):
        scores = torch.bmm(self.score(H), H.transpose(1, 2))
        attn = masked_softmax(scores, mask.unsqueeze(1))
        x = torch.cat([H, torch.bmm(attn, H)], -1)
        fused = torch.tanh(self.fuse(x))
        g = torch.sigmoid(self.gate(x))
        out = g * fused + (1 - g) * H
        return out * mask.unsqueeze(-1).to(out.dtype)


class QuestionEncoder(nn.Module):
    def __init__(self, d_c: int, hidden: int):
        super().__init__()
        self.rnn = BiEncoder(d_c, hidden, num_layers=2)
        self.self_attn = GatedSelfAttention(2 * hidden)

    @property
    def output_dim(self) -> int:
        return self.rnn.output_dim

    def forward(self, context_emb, mask):
        return self.self_attn(self.rnn(context_emb, mask).states, mask)


class Maxout(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, pieces: int = 2):
        super().__init__()
        self.pieces = pieces
        self.linear = nn.Linear(in_dim, out_dim * pieces)

    def forward(self, x):
        y = self.linear(x)
        return y.view(*y.shape[:-1], -1, self.pieces).max(-1).values


def copy_merge(vocab_probs, attn, context_ext_ids, gate, max_oov: int = 0):
    """Mix a vocabulary distribution with a max-pooled copy distribution.

    vocab_probs: (..., V); attn: (..., M); context_ext_ids: (B, M) broadcast
    against attn; gate: (..., 1). The copy score of a token is the largest
    attention weight over its occurrences, renormalized over tokens.
    Returns (..., V + max_oov).
    """
    V = vocab_probs.size(-1)
    ext = F.pad(vocab_probs, (0, max_oov))
    index = context_ext_ids.view(context_ext_ids.size(0), *([1] * (attn.dim() - 2)), -1).expand_as(attn)
    copy = torch.zeros(*attn.shape[:-1], V + max_oov, dtype=attn.dtype)
    copy = copy.scatter_reduce(-1, index, attn, reduce="amax", include_self=True)
    copy = copy / copy.sum(-1, keepdim=True).clamp_min(1e-30)
    return gate * copy + (1 - gate) * ext


@dataclass
class DecoderStep:
    d: torch.Tensor          # decoder hidden (top layer)
    attn: torch.Tensor       # a_j over context positions
    context: torch.Tensor    # s_j
    fused: torch.Tensor      # d_hat_j
    gate: torch.Tensor       # copy gate
    probs: torch.Tensor      # final distribution over vocab + OOV slots
    state: Optional[Tuple[torch.Tensor, torch.Tensor]] = None


class QuestionDecoder(nn.Module):
    def __init__(self, word_embedding: nn.Embedding, enc_dim: int, hidden: int, z_x_dim: int,
                 layers: int = 2, pieces: int = 2):
        super().__init__()
        self.word_embedding = word_embedding  # shared and frozen; doubles as W^e
        d_emb = word_embedding.embedding_dim
        self.layers, self.hidden = layers, hidden
        self.init_state = nn.Linear(z_x_dim, layers * hidden)
        self.rnn = nn.LSTM(d_emb, hidden, num_layers=layers, batch_first=True)
        self.W_a = nn.Linear(hidden, enc_dim, bias=False)
        self.maxout = Maxout(hidden + enc_dim, d_emb, pieces)
        self.copy_gate = nn.Linear(hidden + enc_dim, 1)

    @property
    def vocab_size(self) -> int:
        return self.word_embedding.num_embeddings

    def decoder_init(self, z_x):
        h = self.init_state(z_x).view(z_x.size(0), self.layers, self.hidden).transpose(0, 1).contiguous()
        return h, torch.zeros_like(h)

    def _embed_inputs(self, ids):
        # copied OOV ids are fed back as UNK
        return self.word_embedding(ids.masked_fill(ids >= self.vocab_size, UNK_ID))

    def attend(self, d, H_hat, mask):
        """r = H_hat W_a d, a = softmax(r) over unmasked, s = sum_i a_i H_hat_i. d: (B, T, hidden)."""
        r = torch.bmm(self.W_a(d), H_hat.transpose(1, 2))
        a = masked_softmax(r, mask.unsqueeze(1))
        return a, torch.bmm(a, H_hat)

    def output(self, d, H_hat, mask, context_ext_ids, max_oov):
        a, s = self.attend(d, H_hat, mask)
        ds = torch.cat([d, s], -1)
        fused = self.maxout(ds)
        vocab = F.softmax(F.linear(fused, self.word_embedding.weight), -1)
        gate = torch.sigmoid(self.copy_gate(ds))
        probs = copy_merge(vocab, a, context_ext_ids, gate, max_oov)
        return DecoderStep(d, a, s, fused, gate, probs)

    def decode_step(self, state, prev_ids, H_hat, mask, context_ext_ids, max_oov=0) -> DecoderStep:
        out, state = self.rnn(self._embed_inputs(prev_ids).unsqueeze(1), state)
        step = self.output(out, H_hat, mask, context_ext_ids, max_oov)
        step.state = state
        return step

    def forward(self, question_ids, z_x, H_hat, mask, context_ext_ids, max_oov=0) -> DecoderStep:
        """Teacher-forced pass over question_ids[:, :-1]; returns per-step tensors."""
        state = self.decoder_init(z_x)
        out, _ = self.rnn(self._embed_inputs(question_ids[:, :-1]), state)
        return self.output(out, H_hat, mask, context_ext_ids, max_oov)

    def greedy_decode(self, z_x, H_hat, mask, context_ext_ids, max_oov=0, max_len=32) -> List[List[int]]:
        """Argmax decoding; returns token ids (extended vocab) without BOS/EOS."""
        B = z_x.size(0)
        state = self.decoder_init(z_x)
        prev = torch.full((B,), BOS_ID, dtype=torch.long)
        done = torch.zeros(B, dtype=torch.bool)
        out: List[List[int]] = [[] for _ in range(B)]
        for _ in range(max_len):
            step = self.decode_step(state, prev, H_hat, mask, context_ext_ids, max_oov)
            state = step.state
            probs = step.probs.squeeze(1)
            tok = probs.argmax(-1)
            unk = tok == UNK_ID
            if unk.any():
                copy_part = torch.zeros_like(probs).scatter_reduce(
                    -1, context_ext_ids, step.attn.squeeze(1), reduce="amax")
                copy_part[:, PAD_ID] = 0
                copy_part[:, UNK_ID] = 0
                has_copy = copy_part.sum(-1) > 0
                tok = torch.where(unk & has_copy, copy_part.argmax(-1), tok)
            for b in range(B):
                if not done[b]:
                    if tok[b].item() == EOS_ID:
                        done[b] = True
                    else:
                        out[b].append(int(tok[b]))
            if done.all():
                break
            prev = tok
        return out


def question_nll(step: DecoderStep, target_ext_ids) -> torch.Tensor:
    """Per-example sum of -log p(x_j) over non-PAD targets (question_ext_ids[:, 1:])."""
    target = target_ext_ids[:, 1:]
    p = step.probs.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    nll = -torch.log(p.clamp_min(LOG_EPS))
    return (nll * (target != PAD_ID).to(nll.dtype)).sum(1)
