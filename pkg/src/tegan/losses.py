"""Loss terms of the transition-encoding objective.

Adversarial values follow the maximin convention: they are expectations of
log-probabilities, so the discriminator-side value is <= 0 and maximized by
the discriminator. Reconstruction losses are mean absolute error averaged
over all elements and the batch. Generator-side updates default to the
non-saturating surrogate -E[log D(fake)]; the saturating written form
E[log(1 - D(fake))] is available via `gen_adv(..., saturating=True)`.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from .errors import ConfigError, DimensionError

PROB_EPS = 1e-7


def _as_probs(name, scores):
    scores = torch.as_tensor(scores, dtype=torch.float32) if not torch.is_tensor(scores) else scores
    if scores.numel() == 0:
        raise ValueError(f"{name}: empty score batch")
    if bool((scores <= 0).any()) or bool((scores >= 1).any()):
        raise ValueError(f"{name}: scores must lie strictly inside (0, 1)")
    return scores


def _as_batch(name, x, other=None):
    x = torch.as_tensor(x, dtype=torch.float32) if not torch.is_tensor(x) else x
    if other is not None and x.shape != other.shape:
        raise DimensionError(f"{name}: shape {tuple(x.shape)} != {tuple(other.shape)}")
    return x


def _l1(a, b):
    return (a - b).abs().mean()


def adv_real_img(d_scores_real, d_scores_fake):
    """E[log D(real)] + E[log(1 - D(fake))] for the image discriminator."""
    real = _as_probs("d_scores_real", d_scores_real)
    fake = _as_probs("d_scores_fake", d_scores_fake)
    return torch.log(real).mean() + torch.log1p(-fake).mean()


def recons_img_cyc(x, x_cycled):
    """Mean L1 between x and its cycle reconstruction G(G(x,t), -t)."""
    x = _as_batch("x", x)
    x_cycled = _as_batch("x_cycled", x_cycled, x)
    return _l1(x, x_cycled)


def recons_img_self(x, x_self):
    """Mean L1 between x and its self reconstruction G(x, 0)."""
    x = _as_batch("x", x)
    x_self = _as_batch("x_self", x_self, x)
    return _l1(x, x_self)


def adv_trans(d_true, d_prior, d_enc):
    """Transition-discriminator value: true and prior draws score as real,
    encoder draws as fake."""
    true = _as_probs("d_true", d_true)
    prior = _as_probs("d_prior", d_prior)
    enc = _as_probs("d_enc", d_enc)
    return torch.log(true).mean() + torch.log(prior).mean() + torch.log1p(-enc).mean()


def recons_trans(t_true, t_from_pair, t_from_gen, t_self):
    """Transition reconstruction on observed transitions:
    |E(x,y)-t| + |E(x,G(x,t))-t| + |E(x,x)|, all posterior means."""
    t_true = _as_batch("t_true", t_true)
    t_from_pair = _as_batch("t_from_pair", t_from_pair, t_true)
    t_from_gen = _as_batch("t_from_gen", t_from_gen, t_true)
    t_self = _as_batch("t_self", t_self, t_true)
    return _l1(t_from_pair, t_true) + _l1(t_from_gen, t_true) + t_self.abs().mean()


def adv_real_newimg(d_real, d_fake_enc, d_fake_prior):
    """Image-discriminator value on generations from sampled transitions."""
    real = _as_probs("d_real", d_real)
    fake_enc = _as_probs("d_fake_enc", d_fake_enc)
    fake_prior = _as_probs("d_fake_prior", d_fake_prior)
    return (
        torch.log(real).mean()
        + torch.log1p(-fake_enc).mean()
        + torch.log1p(-fake_prior).mean()
    )


def recons_newtrans(t_prior, t_enc, t_prior_rec, t_enc_rec):
    """Reconstruction of sampled transitions:
    |E(x,G(x,t'))-t'| + |E(x,G(x,t~))-t~|."""
    t_prior = _as_batch("t_prior", t_prior)
    t_prior_rec = _as_batch("t_prior_rec", t_prior_rec, t_prior)
    t_enc = _as_batch("t_enc", t_enc)
    t_enc_rec = _as_batch("t_enc_rec", t_enc_rec, t_enc)
    return _l1(t_prior_rec, t_prior) + _l1(t_enc_rec, t_enc)


def adv_match(d_true_triplet, d_fake_gen, d_fake_prior, d_fake_enc, d_wrong_t, d_wrong_y):
    """Triplet-matching values.

    match_d scores the real triplet against the three generated families plus
    the two wrong-triplet negatives; match_g is the generator-facing part over
    the generated families only.
    """
    true = _as_probs("d_true_triplet", d_true_triplet)
    fakes = [
        _as_probs("d_fake_gen", d_fake_gen),
        _as_probs("d_fake_prior", d_fake_prior),
        _as_probs("d_fake_enc", d_fake_enc),
    ]
    wrong_t = _as_probs("d_wrong_t", d_wrong_t)
    wrong_y = _as_probs("d_wrong_y", d_wrong_y)
    match_g = sum(torch.log1p(-f).mean() for f in fakes)
    match_d = (
        torch.log(true).mean()
        + match_g
        + torch.log1p(-wrong_t).mean()
        + torch.log1p(-wrong_y).mean()
    )
    return match_d, match_g


def gen_adv(d_fake, saturating=False):
    """Generator-side adversarial surrogate for one family of fake scores."""
    fake = _as_probs("d_fake", d_fake)
    if saturating:
        return torch.log1p(-fake).mean()
    return -torch.log(fake).mean()


@dataclass
class LossBreakdown:
    """All loss components of one step plus the two composed totals.

    Fields hold torch scalars during training (so totals stay differentiable)
    and plain floats after `to_record`.
    """

    real_img: object = 0.0
    recons_img_cyc: object = 0.0
    recons_img_self: object = 0.0
    real_newtrans: object = 0.0
    recons_trans: object = 0.0
    real_newimg: object = 0.0
    recons_newtrans: object = 0.0
    match_d: object = 0.0
    match_g: object = 0.0
    total_g: object = 0.0
    total_d: object = 0.0
    lam: float = 1.0
    lam1: float = 10.0
    lam2: float = 10.0

    def to_record(self):
        rec = {}
        for f in fields(self):
            v = getattr(self, f.name)
            rec[f.name] = float(v) if torch.is_tensor(v) else float(v)
        return rec


def full_objective(
    real_img,
    real_newtrans,
    real_newimg,
    match_d,
    match_g,
    recons_img_cyc,
    recons_img_self,
    recons_trans,
    recons_newtrans,
    lam=1.0,
    lam1=10.0,
    lam2=10.0,
    gen_adv_img=None,
    gen_adv_trans=None,
    gen_adv_newimg=None,
    gen_match=None,
):
    """Compose the full objective into generator and discriminator totals.

    total_g sums the generator/encoder-facing adversarial surrogates (the
    written adversarial values by default), lam * the generator matching term,
    lam1 * the image reconstructions and lam2 * the transition reconstructions.
    total_d is the negated sum of the discriminator-side adversarial values
    (discriminators maximize, so their minimized loss is the negation).
    """
    if lam < 0 or lam1 < 0 or lam2 < 0:
        raise ConfigError("loss weights must be non-negative")
    gen_adv_img = real_img if gen_adv_img is None else gen_adv_img
    gen_adv_trans = real_newtrans if gen_adv_trans is None else gen_adv_trans
    gen_adv_newimg = real_newimg if gen_adv_newimg is None else gen_adv_newimg
    gen_match = match_g if gen_match is None else gen_match
    total_g = (
        gen_adv_img
        + gen_adv_trans
        + gen_adv_newimg
        + lam * gen_match
        + lam1 * (recons_img_cyc + recons_img_self)
        + lam2 * (recons_trans + recons_newtrans)
    )
    total_d = -(real_img + real_newtrans + real_newimg) - lam * match_d
    return LossBreakdown(
        real_img=real_img,
        recons_img_cyc=recons_img_cyc,
        recons_img_self=recons_img_self,
        real_newtrans=real_newtrans,
        recons_trans=recons_trans,
        real_newimg=real_newimg,
        recons_newtrans=recons_newtrans,
        match_d=match_d,
        match_g=match_g,
        total_g=total_g,
        total_d=total_d,
        lam=lam,
        lam1=lam1,
        lam2=lam2,
    )
