"""JSD lower bound on the mutual information between question and answer summaries."""

import logging
import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

logger = logging.getLogger(__name__)

LOG_EPS = 1e-12
_LOG_FLOOR = math.log(LOG_EPS)


def summarize(question_states, question_mask, answer_states, spans):
    """x_bar = mean of d_hat over valid question steps; y_bar = mean of H over the span.

    question_states: (B, N, dx); question_mask: (B, N); answer_states: (B, M, dy);
    spans: (B, 2) inclusive.
    """
    qm = question_mask.to(question_states.dtype)
    n = qm.sum(1, keepdim=True)
    if (n == 0).any():
        raise ValueError("empty question")
    if (spans[:, 1] < spans[:, 0]).any():
        raise ValueError("empty answer span")
    x_bar = (question_states * qm.unsqueeze(-1)).sum(1) / n
    pos = torch.arange(answer_states.size(1)).unsqueeze(0)
    am = ((pos >= spans[:, :1]) & (pos <= spans[:, 1:])).to(answer_states.dtype)
    y_bar = (answer_states * am.unsqueeze(-1)).sum(1) / am.sum(1, keepdim=True)
    return x_bar, y_bar


def critic_score(x_bar, y_bar, W):
    """Raw bilinear score x_bar^T W y_bar (pre-sigmoid)."""
    return ((x_bar @ W) * y_bar).sum(-1)


def critic(x_bar, y_bar, W):
    """g(x, y) = sigmoid(x_bar^T W y_bar)."""
    return torch.sigmoid(critic_score(x_bar, y_bar, W))


def make_negatives(batch_size: int, seed: Optional[int] = None) -> Optional[torch.Tensor]:
    """Index permutation with no fixed points; None (and a warning) when batch_size < 2.

    Without a seed this is the cyclic shift i -> i + 1; with a seed a random
    single-cycle permutation (Sattolo), which is also a derangement.
    """
    if batch_size < 2:
        logger.warning("batch of size %d has no negatives; skipping InfoMax term", batch_size)
        return None
    if seed is None:
        return (torch.arange(batch_size) + 1) % batch_size
    g = torch.Generator().manual_seed(seed)
    perm = list(range(batch_size))
    for i in range(batch_size - 1, 0, -1):
        j = int(torch.randint(0, i, (1,), generator=g))
        perm[i], perm[j] = perm[j], perm[i]
    return torch.tensor(perm)


def _log_g(score):
    return F.logsigmoid(score).clamp_min(_LOG_FLOOR)


def _log_one_minus_g(score):
    return F.logsigmoid(-score).clamp_min(_LOG_FLOOR)


def jsd_mi_bound(pos_scores, neg_x_scores, neg_y_scores):
    """E_P[log g] + 1/2 E_N[log(1 - g(x~, y))] + 1/2 E_N[log(1 - g(x, y~))], from raw scores."""
    return (_log_g(pos_scores).mean()
            + 0.5 * _log_one_minus_g(neg_x_scores).mean()
            + 0.5 * _log_one_minus_g(neg_y_scores).mean())


def jsd_mi_bound_from_g(pos_g, neg_x_g, neg_y_g):
    """Same bound from probabilities g in (0, 1), with logs clamped at 1e-12."""
    def log(t):
        return torch.log(t.clamp_min(LOG_EPS))
    return log(pos_g).mean() + 0.5 * log(1 - neg_x_g).mean() + 0.5 * log(1 - neg_y_g).mean()


class BilinearCritic(nn.Module):
    def __init__(self, x_dim: int, y_dim: int):
        super().__init__()
        self.W = nn.Parameter(torch.empty(x_dim, y_dim))
        nn.init.xavier_uniform_(self.W, gain=0.1)

    def score(self, x_bar, y_bar):
        return critic_score(x_bar, y_bar, self.W)

    def forward(self, x_bar, y_bar, negatives: Optional[torch.Tensor] = None):
        """L_Info for a batch; negatives pair x_bar[i] with y_bar[perm[i]] and vice versa."""
        if negatives is None:
            negatives = make_negatives(x_bar.size(0))
            if negatives is None:
                return x_bar.new_zeros(())
        pos = self.score(x_bar, y_bar)
        neg_x = self.score(x_bar[negatives], y_bar)
        neg_y = self.score(x_bar, y_bar[negatives])
        return jsd_mi_bound(pos, neg_x, neg_y)
