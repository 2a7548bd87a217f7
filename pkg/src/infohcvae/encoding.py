"""Embedding tables, masked bidirectional LSTM encoders and the contextual embedder."""

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence


@dataclass
class SequenceEncoding:
    states: torch.Tensor   # (B, L, 2h), zero at masked positions
    summary: torch.Tensor  # (B, 2h)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


class Embedder(nn.Module):
    """Word + token-type + position embeddings, summed."""

    def __init__(self, vocab_size: int, dim: int, max_positions: int = 512, frozen: bool = False):
        super().__init__()
        self.word = nn.Embedding(vocab_size, dim)
        self.token_type = nn.Embedding(2, dim)
        self.position = nn.Embedding(max_positions, dim)
        nn.init.normal_(self.word.weight, std=1.0)
        nn.init.normal_(self.token_type.weight, std=0.5)
        nn.init.normal_(self.position.weight, std=0.1)
        self.frozen = frozen
        if frozen:
            freeze(self)

    @property
    def dim(self) -> int:
        return self.word.embedding_dim

    def forward(self, token_ids, token_type_ids=None, positions=None):
        for name, idx, table in (("token", token_ids, self.word),
                                 ("token type", token_type_ids, self.token_type),
                                 ("position", positions, self.position)):
            if idx is not None and idx.numel() and (idx.min() < 0 or idx.max() >= table.num_embeddings):
                raise IndexError(f"{name} index out of bounds for table of size {table.num_embeddings}")
        if token_type_ids is None:
            token_type_ids = torch.zeros_like(token_ids)
        if positions is None:
            positions = torch.arange(token_ids.size(-1), device=token_ids.device).expand_as(token_ids)
        return self.word(token_ids) + self.token_type(token_type_ids) + self.position(positions)


class BiEncoder(nn.Module):
    """Masked bidirectional LSTM; PAD steps never feed the recurrence."""

    def __init__(self, input_dim: int, hidden: int, num_layers: int = 1):
        super().__init__()
        self.hidden = hidden
        self.rnn = nn.LSTM(input_dim, hidden, num_layers=num_layers, batch_first=True,
                           bidirectional=True)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def forward(self, x, mask) -> SequenceEncoding:
        if x.size(1) == 0:
            raise ValueError("cannot encode a zero-length sequence")
        if mask.shape != x.shape[:2]:
            raise ValueError("mask shape must match the sequence shape")
        lengths = mask.sum(1)
        if (lengths < 1).any():
            raise ValueError("every sequence needs at least one unmasked position")
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, (h_n, _) = self.rnn(packed)
        states, _ = pad_packed_sequence(out, batch_first=True, total_length=x.size(1))
        summary = torch.cat([h_n[-2], h_n[-1]], dim=-1)
        return SequenceEncoding(states, summary)


class ContextualEmbedder(nn.Module):
    """Embedding followed by a small self-attention stack (desk-scale BERT stand-in).

    The embedding tables are shared with whatever else holds ``embed``.
    """

    def __init__(self, embed: Embedder, layers: int = 2, heads: int = 4, frozen: bool = True):
        super().__init__()
        self.embed = embed
        dim = embed.dim
        layer = nn.TransformerEncoderLayer(dim, heads, dim_feedforward=2 * dim, dropout=0.0,
                                           batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
        self.frozen = frozen
        if frozen:
            freeze(self.encoder)

    @property
    def dim(self) -> int:
        return self.embed.dim

    def forward(self, token_ids, token_type_ids=None, mask: Optional[torch.Tensor] = None):
        x = self.embed(token_ids, token_type_ids)
        if mask is None:
            mask = torch.ones_like(token_ids)
        out = self.encoder(x, src_key_padding_mask=mask == 0)
        return out * mask.unsqueeze(-1).to(out.dtype)


def masked_mean(states, mask):
    m = mask.unsqueeze(-1).to(states.dtype)
    return (states * m).sum(1) / m.sum(1).clamp_min(1.0)
