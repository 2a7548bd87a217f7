import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from infohcvae.encoding import Embedder
from infohcvae.latent import (CategoricalParams, GaussianParams, LatentNetworks, hard_categorical,
                              kl_categorical, kl_gaussian, sample_categorical, sample_gaussian,
                              sample_gumbel_softmax)


def _nets(seed=0):
    torch.manual_seed(seed)
    emb = Embedder(30, 16)
    return LatentNetworks(emb, 8, 50, 20, 10)


def _ctx(nets, ids):
    t = torch.tensor([ids])
    return nets.encode_context(t, torch.ones_like(t))


def test_log_var_clamped():
    p = GaussianParams(torch.zeros(3), torch.tensor([-50.0, 0.0, 50.0]))
    assert p.log_var.tolist() == [-10.0, 0.0, 10.0]
    assert (p.sigma > 0).all()


def test_question_prior_shapes_and_zero_head():
    nets = _nets()
    p = nets.question_prior(_ctx(nets, [4, 5, 6]))
    assert p.mu.shape == (1, 50) and p.log_var.shape == (1, 50)
    q = nets.question_prior(_ctx(nets, [7, 8]))
    assert not torch.allclose(p.mu, q.mu)
    nets.q_prior.head.zero_()
    z = nets.question_prior(_ctx(nets, [4, 5, 6]))
    assert z.mu.abs().max() == 0 and z.log_var.abs().max() == 0
    assert torch.allclose(z.sigma, torch.ones(1, 50))


def test_question_posterior():
    nets = _nets()
    c = _ctx(nets, [4, 5, 6])
    q1 = nets.encode_question(torch.tensor([[9, 10]]), torch.ones(1, 2, dtype=torch.long))
    q2 = nets.encode_question(torch.tensor([[11, 12, 13]]), torch.ones(1, 3, dtype=torch.long))
    a, b = nets.question_posterior(q1, c), nets.question_posterior(q2, c)
    assert a.mu.shape == (1, 50)
    assert not torch.allclose(a.mu, b.mu)
    nets.q_posterior.head.zero_()
    assert nets.question_posterior(q1, c).mu.abs().max() == 0


def test_answer_prior_and_posterior():
    nets = _nets()
    c = _ctx(nets, [4, 5, 6])
    p1 = nets.answer_prior(torch.randn(1, 50), c)
    p2 = nets.answer_prior(torch.randn(1, 50), c)
    assert p1.logits.shape == (1, 20, 10)
    assert not torch.allclose(p1.logits, p2.logits)
    assert torch.allclose(p1.probs.sum(-1), torch.ones(1, 20), atol=1e-6)
    nets.a_prior.head.zero_()
    assert torch.allclose(nets.answer_prior(torch.randn(1, 50), c).probs, torch.full((1, 20, 10), 0.1))
    ids = torch.tensor([[4, 5, 6]])
    mask = torch.ones_like(ids)
    a1 = nets.encode_answer_aware(ids, torch.tensor([[0, 1, 0]]), mask)
    a2 = nets.encode_answer_aware(ids, torch.tensor([[0, 0, 1]]), mask)
    z = torch.randn(1, 50)
    assert nets.answer_posterior(z, a1).logits.shape == (1, 20, 10)
    assert not torch.allclose(nets.answer_posterior(z, a1).logits, nets.answer_posterior(z, a2).logits)


def test_sample_gaussian_cases():
    mu, lv = torch.randn(50), torch.randn(50)
    p = GaussianParams(mu, lv)
    assert torch.equal(sample_gaussian(p, torch.zeros(50)), mu)
    n = torch.randn(50)
    assert torch.equal(sample_gaussian(GaussianParams(torch.zeros(50), torch.zeros(50)), n), n)
    with pytest.raises(ValueError):
        sample_gaussian(p, torch.zeros(49))


def test_sample_gaussian_mc_mean():
    g = torch.Generator().manual_seed(0)
    p = GaussianParams(torch.tensor([1.0, -2.0, 0.5]), torch.tensor([0.0, 1.0, -1.0]))
    z = sample_gaussian(GaussianParams(p.mu.expand(10000, 3), p.log_var.expand(10000, 3)),
                        torch.randn(10000, 3, generator=g))
    assert ((z.mean(0) - p.mu).abs() <= 3 * p.sigma / math.sqrt(10000)).all()


def test_sample_gaussian_differentiable():
    mu = torch.zeros(3, requires_grad=True)
    lv = torch.zeros(3, requires_grad=True)
    sample_gaussian(GaussianParams(mu, lv), torch.ones(3)).sum().backward()
    assert mu.grad is not None and lv.grad.abs().sum() > 0


def test_gumbel_blocks_sum_to_one():
    g = torch.Generator().manual_seed(0)
    p = CategoricalParams(torch.randn(4, 20, 10, generator=g))
    z = sample_gumbel_softmax(p, 1.0, torch.rand(4, 20, 10, generator=g))
    assert torch.allclose(z.sum(-1), torch.ones(4, 20), atol=1e-6)
    assert (z >= 0).all() and (z <= 1).all()


def test_gumbel_temperature_errors():
    p = CategoricalParams(torch.zeros(1, 10))
    for tau in (0.0, -1.0):
        with pytest.raises(ValueError):
            sample_gumbel_softmax(p, tau, torch.rand(1, 10))


def test_gumbel_annealing_monotone():
    g = torch.Generator().manual_seed(1)
    p = CategoricalParams(torch.randn(20, 10, generator=g))
    u = torch.rand(20, 10, generator=g)
    maxes = [sample_gumbel_softmax(p, tau, u).max(-1).values for tau in (1, 0.5, 0.1, 0.01)]
    for a, b in zip(maxes, maxes[1:]):
        assert (b >= a - 1e-7).all()


def test_gumbel_gradient_flows():
    g = torch.Generator().manual_seed(2)
    u = torch.rand(1, 10, generator=g, dtype=torch.float64)
    w = torch.randn(1, 10, generator=g, dtype=torch.float64)
    for tau in (0.5, 1.0):
        logits = torch.randn(1, 10, generator=g, dtype=torch.float64, requires_grad=True)
        (sample_gumbel_softmax(CategoricalParams(logits), tau, u) * w).sum().backward()
        assert logits.grad.abs().sum() > 0
    logits = torch.randn(1, 10, generator=g, dtype=torch.float64, requires_grad=True)
    f = lambda l: (sample_gumbel_softmax(CategoricalParams(l), 1.0, u) * w).sum()
    f(logits).backward()
    h = 1e-6
    for i in range(10):
        e = torch.zeros(1, 10, dtype=torch.float64)
        e[0, i] = h
        fd = (f(logits.detach() + e) - f(logits.detach() - e)) / (2 * h)
        assert abs(fd - logits.grad[0, i]) <= 1e-2 * max(abs(fd), 1e-8)


def test_hard_and_sampled_categorical_are_one_hot():
    p = CategoricalParams(torch.randn(3, 20, 10))
    h = hard_categorical(p)
    assert torch.equal(h.argmax(-1), p.logits.argmax(-1)) and torch.equal(h.sum(-1), torch.ones(3, 20))
    s = sample_categorical(p, torch.Generator().manual_seed(0))
    assert torch.equal(s.sum(-1), torch.ones(3, 20))
    assert torch.equal(s, sample_categorical(p, torch.Generator().manual_seed(0)))


def test_kl_gaussian_identity_and_hand_value():
    p = GaussianParams(torch.randn(50), torch.randn(50))
    assert kl_gaussian(p, p) == 0
    q = GaussianParams(torch.ones(4), torch.zeros(4))
    prior = GaussianParams(torch.zeros(4), torch.zeros(4))
    assert torch.allclose(kl_gaussian(q, prior), torch.tensor(0.5 * 4))


def test_kl_gaussian_matches_closed_form_expression():
    g = torch.Generator().manual_seed(0)
    q = GaussianParams(torch.randn(5, generator=g), torch.randn(5, generator=g))
    p = GaussianParams(torch.randn(5, generator=g), torch.randn(5, generator=g))
    sq, sp = q.sigma, p.sigma
    ref = (torch.log(sp / sq) + (sq ** 2 + (q.mu - p.mu) ** 2) / (2 * sp ** 2) - 0.5).sum()
    assert torch.allclose(kl_gaussian(q, p), ref, atol=1e-5)


def test_kl_categorical_identity_and_hand_value():
    p = CategoricalParams(torch.randn(20, 10))
    assert kl_categorical(p, p) == 0
    q = CategoricalParams(torch.log(torch.tensor([[0.5, 0.5]])))
    r = CategoricalParams(torch.log(torch.tensor([[0.9, 0.1]])))
    expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
    assert abs(float(kl_categorical(q, r)) - expected) < 1e-6
    assert abs(expected - 0.5108) < 1e-4


def test_kl_nonnegative_sweep():
    g = torch.Generator().manual_seed(3)
    q = CategoricalParams(3 * torch.randn(1000, 20, 10, generator=g))
    p = CategoricalParams(3 * torch.randn(1000, 20, 10, generator=g))
    assert (kl_categorical(q, p) >= 0).all()
    a = GaussianParams(torch.randn(1000, 50, generator=g), 4 * torch.randn(1000, 50, generator=g))
    b = GaussianParams(torch.randn(1000, 50, generator=g), 4 * torch.randn(1000, 50, generator=g))
    assert (kl_gaussian(a, b) >= 0).all()


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
@settings(max_examples=100, deadline=None)
def test_kl_gaussian_property(mu, lv):
    q = GaussianParams(torch.tensor(mu, dtype=torch.float64), torch.tensor(lv, dtype=torch.float64))
    p = GaussianParams(torch.zeros(4, dtype=torch.float64), torch.zeros(4, dtype=torch.float64))
    assert float(kl_gaussian(q, p)) >= -1e-12


def test_kl_gaussian_finite_difference():
    g = torch.Generator().manual_seed(4)
    mu_q = torch.randn(6, generator=g, dtype=torch.float64, requires_grad=True)
    lv_q = torch.randn(6, generator=g, dtype=torch.float64, requires_grad=True)
    prior = GaussianParams(torch.randn(6, generator=g, dtype=torch.float64),
                           torch.randn(6, generator=g, dtype=torch.float64))
    kl_gaussian(GaussianParams(mu_q, lv_q), prior).backward()
    h = 1e-4
    for t, grad in ((mu_q, mu_q.grad), (lv_q, lv_q.grad)):
        for i in range(6):
            e = torch.zeros(6, dtype=torch.float64)
            e[i] = h
            args = lambda s: (mu_q.detach() + s * e, lv_q.detach()) if t is mu_q else (mu_q.detach(), lv_q.detach() + s * e)
            fd = (kl_gaussian(GaussianParams(*args(1)), prior) - kl_gaussian(GaussianParams(*args(-1)), prior)) / (2 * h)
            assert abs(fd - grad[i]) <= 1e-3 * max(abs(fd), 1e-8)
