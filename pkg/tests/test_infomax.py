import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from _fd import max_rel_error
from infohcvae.infomax import (BilinearCritic, critic, critic_score, jsd_mi_bound,
                               jsd_mi_bound_from_g, make_negatives, summarize)


def test_summarize_hand_cases():
    q = torch.tensor([[[1.0, 3.0], [3.0, 5.0], [9.0, 9.0]]])
    H = torch.arange(12.0).view(1, 4, 3)
    x, y = summarize(q, torch.tensor([[1, 1, 0]]), H, torch.tensor([[2, 2]]))
    assert x.tolist() == [[2.0, 4.0]]
    assert torch.equal(y[0], H[0, 2])
    x1, y1 = summarize(q, torch.tensor([[1, 0, 0]]), H, torch.tensor([[1, 3]]))
    assert x1.tolist() == [[1.0, 3.0]]
    assert torch.allclose(y1[0], H[0, 1:4].mean(0))


def test_summarize_errors():
    q, H = torch.randn(1, 2, 3), torch.randn(1, 4, 3)
    with pytest.raises(ValueError):
        summarize(q, torch.zeros(1, 2), H, torch.tensor([[0, 0]]))
    with pytest.raises(ValueError):
        summarize(q, torch.ones(1, 2), H, torch.tensor([[2, 1]]))


def test_critic_values():
    x, y = torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])
    assert float(critic(x, y, torch.zeros(2, 2))) == 0.5
    W = torch.tensor([[0.0, 2.0], [0.0, 0.0]])
    assert abs(float(critic(x, y, W)) - 0.8808) < 1e-4
    xr, yr, Wr = torch.randn(3), torch.randn(4), torch.randn(3, 4)
    assert torch.allclose(critic(xr, yr, Wr), critic(-xr, -yr, Wr))


def test_make_negatives():
    assert make_negatives(3).tolist() == [1, 2, 0]
    assert make_negatives(2).tolist() == [1, 0]
    for n in range(2, 20):
        for seed in (None, 0, 7):
            perm = make_negatives(n, seed)
            assert sorted(perm.tolist()) == list(range(n))
            assert all(perm[i] != i for i in range(n))
    assert torch.equal(make_negatives(9, 3), make_negatives(9, 3))


def test_make_negatives_batch_of_one(caplog):
    assert make_negatives(1) is None
    assert "skipping InfoMax" in caplog.text
    assert float(BilinearCritic(3, 3)(torch.randn(1, 3), torch.randn(1, 3))) == 0.0


def test_bound_at_half():
    s = torch.zeros(8)
    assert abs(float(jsd_mi_bound(s, s, s)) - 2 * math.log(0.5)) < 1e-6
    g = torch.full((8,), 0.5)
    assert abs(float(jsd_mi_bound_from_g(g, g, g)) + 1.3863) < 1e-4


def test_bound_limits():
    big = torch.full((4,), 50.0)
    assert float(jsd_mi_bound(big, -big, -big)) > -1e-10
    low = jsd_mi_bound(-big * 100, big, big)
    assert math.isfinite(float(low)) and float(low) < -20
    g0 = jsd_mi_bound_from_g(torch.zeros(4), torch.ones(4), torch.ones(4))
    assert math.isfinite(float(g0)) and float(g0) <= 2 * math.log(1e-12) + 1e-6


@given(st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=3))
@settings(max_examples=200, deadline=None)
def test_bound_nonpositive(vals):
    pos, nx, ny = (torch.tensor([v], dtype=torch.float64) for v in vals)
    assert float(jsd_mi_bound(pos, nx, ny)) <= 0.0


def test_critic_gradient_fd():
    torch.manual_seed(0)
    crit = BilinearCritic(4, 5).double()
    x, y = torch.randn(6, 4, dtype=torch.float64), torch.randn(6, 5, dtype=torch.float64)
    assert max_rel_error(lambda: crit(x, y), crit.W) < 1e-3


def test_initial_bound_near_half():
    torch.manual_seed(0)
    crit = BilinearCritic(16, 16)
    x = torch.randn(64, 16)
    assert abs(float(crit(x, x).detach()) + 1.386) < 0.05


def test_scores_finite():
    crit = BilinearCritic(3, 3)
    assert torch.isfinite(crit.score(torch.randn(5, 3), torch.randn(5, 3))).all()
    assert critic_score(torch.ones(1, 2), torch.ones(1, 2), torch.eye(2)).item() == 2.0
