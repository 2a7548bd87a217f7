"""Answer generation network p(y | z_y, c): heuristic matching, Bi-LSTM, span heads."""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoding import BiEncoder

NEG_INF = -1e30
MAX_ANSWER_LEN = 30


class DecodeError(RuntimeError):
    pass


@dataclass
class SpanLogits:
    start: torch.Tensor  # (B, M)
    end: torch.Tensor    # (B, M)
    mask: torch.Tensor   # (B, M)


def heuristic_match(context_emb: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """f_i = [e_i; z; |e_i - z|; e_i * z] for every context position."""
    if context_emb.size(-1) != z.size(-1):
        raise ValueError(f"dimension mismatch: {context_emb.size(-1)} vs {z.size(-1)}")
    z = z.unsqueeze(-2).expand_as(context_emb)
    return torch.cat([context_emb, z, (context_emb - z).abs(), context_emb * z], dim=-1)


def answer_nll(logits: SpanLogits, spans: torch.Tensor) -> torch.Tensor:
    """Per-example -log p(y_s) - log p(y_e)."""
    ys, ye = spans[:, 0], spans[:, 1]
    rows = torch.arange(spans.size(0))
    if (logits.mask[rows, ys] == 0).any() or (logits.mask[rows, ye] == 0).any():
        raise ValueError("gold span lies on a masked position")
    return (F.cross_entropy(logits.start, ys, reduction="none")
            + F.cross_entropy(logits.end, ye, reduction="none"))


def decode_span(logits: SpanLogits, max_answer_len: int = MAX_ANSWER_LEN) -> torch.Tensor:
    """Best (s, e) per row with s <= e < s + max_answer_len, both unmasked.

    Ties go to the lowest s, then the lowest e.
    """
    if max_answer_len < 1:
        raise ValueError("max_answer_len must be >= 1")
    B, M = logits.start.shape
    scores = logits.start.unsqueeze(2) + logits.end.unsqueeze(1)
    s_idx = torch.arange(M).unsqueeze(1)
    e_idx = torch.arange(M).unsqueeze(0)
    valid = (e_idx >= s_idx) & (e_idx - s_idx < max_answer_len)
    m = logits.mask.bool()
    valid = valid.unsqueeze(0) & m.unsqueeze(2) & m.unsqueeze(1)
    if not valid.view(B, -1).any(1).all():
        raise DecodeError("no valid answer span")
    scores = scores.masked_fill(~valid, float("-inf"))
    flat = scores.view(B, -1).argmax(1)
    return torch.stack([flat // M, flat % M], dim=1)


class AnswerDecoder(nn.Module):
    def __init__(self, d_c: int, hidden: int, z_y_dim: int):
        super().__init__()
        self.zy_proj = nn.Linear(z_y_dim, d_c)
        self.proj = nn.Linear(4 * d_c, d_c)
        self.rnn = BiEncoder(d_c, hidden)
        self.start_head = nn.Linear(2 * hidden, 1)
        self.end_head = nn.Linear(2 * hidden, 1)

    @property
    def output_dim(self) -> int:
        return self.rnn.output_dim

    def match(self, context_emb, z_y):
        """z_y: (B, blocks, classes), concatenated then linearly projected to d_c."""
        return heuristic_match(context_emb, self.zy_proj(z_y.flatten(1)))

    def predict_span(self, features, mask):
        H = self.rnn(self.proj(features), mask).states
        start = self.start_head(H).squeeze(-1).masked_fill(mask == 0, NEG_INF)
        end = self.end_head(H).squeeze(-1).masked_fill(mask == 0, NEG_INF)
        return SpanLogits(start, end, mask), H

    def forward(self, context_emb, z_y, mask):
        return self.predict_span(self.match(context_emb, z_y), mask)
