"""Transition variables and their algebra.

A transition is the explicit parameterization of the mapping from a source
image to a target image: an attribute difference, a one-hot domain index,
or a latent vector sampled from a prior or an encoder posterior.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch

from .errors import DimensionError, NumericError

# log-variance is clamped before exponentiation for numeric safety
LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 4.0


class TransitionKind(str, Enum):
    ATTRIBUTE_DIFF = "attribute_diff"
    DOMAIN_INDEX = "domain_index"
    LATENT_SAMPLE = "latent_sample"


@dataclass(frozen=True)
class AttributeVector:
    """Binary attribute annotation with entries in {-1, +1}."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.float32)
        if bits.ndim != 1:
            raise DimensionError("attribute vector must be 1-D")
        if not np.all(np.isin(bits, (-1.0, 1.0))):
            raise ValueError("attribute entries must be exactly -1 or +1")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return self.bits.shape[0]

    def flipped(self, indices) -> "AttributeVector":
        bits = self.bits.copy()
        bits[list(indices)] *= -1
        return AttributeVector(bits)


@dataclass(frozen=True)
class Transition:
    """Length-d real vector plus the semantic kind of the transition."""

    values: np.ndarray
    kind: TransitionKind = TransitionKind.LATENT_SAMPLE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 1:
            raise DimensionError("transition must be a 1-D vector")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def transition_from_attributes(a_x: AttributeVector, a_y: AttributeVector) -> Transition:
    """t = a_y - a_x, elementwise; entries land in {-2, 0, +2}."""
    if len(a_x) != len(a_y):
        raise DimensionError(f"attribute lengths differ: {len(a_x)} vs {len(a_y)}")
    return Transition(a_y.bits - a_x.bits, TransitionKind.ATTRIBUTE_DIFF)


def negate(t: Transition) -> Transition:
    return Transition(-t.values, t.kind)


def zero_transition(d: int) -> Transition:
    if d < 1:
        raise DimensionError("transition dimension must be >= 1")
    return Transition(np.zeros(d, dtype=np.float32), TransitionKind.ATTRIBUTE_DIFF)


def scale(t: Transition, alpha: float) -> Transition:
    return Transition(alpha * t.values, t.kind)


def sample_prior(d: int, rng: np.random.Generator) -> Transition:
    """One draw from the standard-normal transition prior."""
    if d < 1:
        raise DimensionError("transition dimension must be >= 1")
    return Transition(rng.standard_normal(d).astype(np.float32), TransitionKind.LATENT_SAMPLE)


def domain_index_transition(k: int, n: int) -> Transition:
    if not 0 <= k < n:
        raise IndexError(f"domain index {k} out of range for {n} domains")
    values = np.zeros(n, dtype=np.float32)
    values[k] = 1.0
    return Transition(values, TransitionKind.DOMAIN_INDEX)


@dataclass
class TransitionPosterior:
    """Diagonal-Gaussian posterior q(t|x,y) produced by the encoder.

    mean and log_var are torch tensors of shape (..., d) so that draws stay
    differentiable with respect to both.
    """

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise DimensionError("posterior mean and log_var shapes differ")


def sample_posterior(p: TransitionPosterior, generator: torch.Generator | None = None) -> torch.Tensor:
    """Reparameterized draw t = mean + exp(log_var/2) * eps, eps ~ N(0,1).

    Gradient flows through mean and log_var. log_var is clamped to
    [LOG_VAR_MIN, LOG_VAR_MAX] before exponentiation.
    """
    if not (torch.isfinite(p.mean).all() and torch.isfinite(p.log_var).all()):
        raise NumericError("posterior parameters must be finite")
    log_var = p.log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
    eps = torch.randn(p.mean.shape, generator=generator, dtype=p.mean.dtype)
    return p.mean + torch.exp(0.5 * log_var) * eps
