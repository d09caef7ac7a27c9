import numpy as np
import pytest
import torch

from tegan.errors import DimensionError, NumericError
from tegan.transitions import (
    AttributeVector,
    Transition,
    TransitionKind,
    TransitionPosterior,
    domain_index_transition,
    negate,
    sample_posterior,
    sample_prior,
    scale,
    transition_from_attributes,
    zero_transition,
)


def av(*bits):
    return AttributeVector(np.array(bits, dtype=np.float32))


class TestAttributeVector:
    def test_rejects_non_pm1(self):
        with pytest.raises(ValueError):
            av(1, 0, -1)

    def test_flipped(self):
        assert np.array_equal(av(1, -1, 1).flipped([0, 2]).bits, [-1, -1, -1])


class TestFromAttributes:
    def test_basic_difference(self):
        t = transition_from_attributes(av(1, -1), av(-1, 1))
        assert np.array_equal(t.values, [-2, 2])
        assert t.kind == TransitionKind.ATTRIBUTE_DIFF

    def test_identity_pair(self):
        t = transition_from_attributes(av(1, 1, -1), av(1, 1, -1))
        assert np.array_equal(t.values, [0, 0, 0])

    def test_single_flip(self):
        assert np.array_equal(transition_from_attributes(av(-1), av(1)).values, [2])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            transition_from_attributes(av(1), av(1, -1))

    def test_composition(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b, c = (AttributeVector(rng.choice([-1.0, 1.0], size=6)) for _ in range(3))
            ab = transition_from_attributes(a, b).values
            bc = transition_from_attributes(b, c).values
            ac = transition_from_attributes(a, c).values
            assert np.array_equal(ab + bc, ac)


class TestNegateZeroScale:
    def test_negate(self):
        assert np.array_equal(negate(Transition(np.array([-2.0, 2.0]))).values, [2, -2])

    def test_zero_self_negating(self):
        t = zero_transition(2)
        assert np.array_equal(negate(t).values, t.values)

    def test_involution(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            t = Transition(rng.standard_normal(4))
            assert np.allclose(negate(negate(t)).values, t.values)

    def test_zero(self):
        assert np.array_equal(zero_transition(3).values, [0, 0, 0])
        assert np.abs(zero_transition(7).values).sum() == 0

    def test_zero_rejects_zero_dim(self):
        with pytest.raises(DimensionError):
            zero_transition(0)

    def test_zero_matches_identity_attribute_pair(self):
        a = av(1, -1, 1, 1, -1)
        assert np.array_equal(zero_transition(5).values, transition_from_attributes(a, a).values)

    def test_scale(self):
        assert np.array_equal(scale(Transition(np.array([-2.0, 2.0])), 0.5).values, [-1, 1])

    def test_scale_zero_and_minus_one(self):
        t = Transition(np.array([1.5, -0.5, 3.0]))
        assert np.array_equal(scale(t, 0).values, zero_transition(3).values)
        assert np.array_equal(scale(t, -1).values, negate(t).values)


class TestSamplePrior:
    def test_moments(self):
        rng = np.random.default_rng(7)
        draws = np.stack([sample_prior(4, rng).values for _ in range(100_000)])
        assert np.all(np.abs(draws.mean(axis=0)) < 0.02)
        assert np.all(np.abs(draws.var(axis=0) - 1.0) < 0.05)

    def test_deterministic(self):
        a = sample_prior(6, np.random.default_rng(3)).values
        b = sample_prior(6, np.random.default_rng(3)).values
        assert np.array_equal(a, b)

    def test_kind(self):
        assert sample_prior(2, np.random.default_rng(0)).kind == TransitionKind.LATENT_SAMPLE


class TestSamplePosterior:
    def test_degenerate_collapses_to_mean(self):
        p = TransitionPosterior(torch.tensor([1.0, 2.0]), torch.full((2,), -20.0))
        draw = sample_posterior(p, torch.Generator().manual_seed(0))
        assert torch.allclose(draw, torch.tensor([1.0, 2.0]), atol=1e-3)

    def test_unit_variance(self):
        p = TransitionPosterior(torch.zeros(100_000), torch.zeros(100_000))
        draw = sample_posterior(p, torch.Generator().manual_seed(1))
        assert abs(float(draw.var()) - 1.0) < 0.05

    def test_gradient_through_mean(self):
        mean = torch.zeros(3, requires_grad=True)
        p = TransitionPosterior(mean, torch.zeros(3))
        draw = sample_posterior(p, torch.Generator().manual_seed(2))
        draw.sum().backward()
        assert torch.allclose(mean.grad, torch.ones(3))

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            sample_posterior(TransitionPosterior(torch.tensor([float("nan")]), torch.zeros(1)))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            TransitionPosterior(torch.zeros(2), torch.zeros(3))


class TestDomainIndex:
    def test_one_hot(self):
        assert np.array_equal(domain_index_transition(2, 4).values, [0, 0, 1, 0])

    def test_single_domain(self):
        assert np.array_equal(domain_index_transition(0, 1).values, [1])

    def test_sums_to_one(self):
        for n in range(1, 6):
            for k in range(n):
                t = domain_index_transition(k, n)
                assert t.values.sum() == 1
                assert t.kind == TransitionKind.DOMAIN_INDEX

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            domain_index_transition(4, 4)
