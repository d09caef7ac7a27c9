"""The five learnable networks: generator, transition encoder, image
discriminator, transition discriminator, and triplet discriminator.

Images cross the module boundary as HxWxC arrays in [-1, 1]; internally
everything runs as NCHW torch batches. Discriminators emit probabilities
clamped to [PROB_EPS, 1 - PROB_EPS] so their logs are always finite.
"""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import DimensionError
from .losses import PROB_EPS
from .transitions import LOG_VAR_MAX, LOG_VAR_MIN, Transition, TransitionPosterior


def _clamp_prob(logits):
    return torch.sigmoid(logits).clamp(PROB_EPS, 1.0 - PROB_EPS)


def _broadcast(t, h, w):
    # (N, d) -> (N, d, h, w)
    return t[:, :, None, None].expand(-1, -1, h, w)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Encoder-decoder generator; the transition is injected at the
    bottleneck by spatial broadcast and channel concatenation."""

    def __init__(self, channels=3, t_dim=5, base=32):
        super().__init__()
        self.t_dim = t_dim
        b = base
        def block(cin, cout, k, s, p):
            return nn.Sequential(
                nn.Conv2d(cin, cout, k, s, p),
                nn.InstanceNorm2d(cout, affine=True),
                nn.ReLU(inplace=True),
            )

        self.down1 = block(channels, b, 7, 1, 3)
        self.down2 = block(b, 2 * b, 4, 2, 1)
        self.down3 = block(2 * b, 4 * b, 4, 2, 1)
        self.merge = nn.Conv2d(4 * b + t_dim, 4 * b, 3, 1, 1)
        self.res = nn.Sequential(ResidualBlock(4 * b), ResidualBlock(4 * b))
        # decoder: nearest-upsample + conv instead of transposed convs (the
        # latter leave checkerboard texture on flat regions that pixel
        # losses struggle to remove), with skip connections from the down
        # path so geometry is redrawn from full-resolution features rather
        # than blurry upsampled ones. No normalization here: per-image
        # statistics shift when the shape is edited, and instance norm
        # propagates that shift into regions the edit should not touch
        self.upsample = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        self.up1 = nn.Sequential(nn.Conv2d(4 * b + 2 * b, 2 * b, 3, 1, 1), nn.ReLU(inplace=True))
        self.up2 = nn.Sequential(nn.Conv2d(2 * b + b, b, 3, 1, 1), nn.ReLU(inplace=True))
        # one full-resolution refinement stage: painted content has to come
        # out of these layers, and a single conv after the last skip is too
        # shallow to render sharp boundaries
        self.refine = nn.Sequential(nn.Conv2d(b, b, 3, 1, 1), nn.ReLU(inplace=True))
        self.out = nn.Conv2d(b, channels + 1, 7, 1, 3)
        # start near the identity: the gate opens only where an edit helps
        nn.init.constant_(self.out.bias[channels:], -2.0)

    def forward(self, x, t):
        d1 = self.down1(x)
        d2 = self.down2(d1)
        d3 = self.down3(d2)
        h = torch.cat([d3, _broadcast(t, d3.shape[2], d3.shape[3])], dim=1)
        h = self.res(self.merge(h))
        h = self.up1(torch.cat([self.upsample(h), d2], dim=1))
        h = self.up2(torch.cat([self.upsample(h), d1], dim=1))
        out = self.out(self.refine(h))
        delta = torch.tanh(out[:, :-1])
        gate = torch.sigmoid(out[:, -1:])
        # predict a gated, bounded change on top of the input: regions the
        # gate leaves closed survive exactly, so edits stay local and the
        # zero transition approaches identity; the factor 2 lets a gated
        # pixel swing across the full range
        return (x + gate * 2.0 * delta).clamp(-1.0, 1.0)


class Encoder(nn.Module):
    """Stochastic transition encoder q(t|x,y) over channel-concatenated
    image pairs, with mean and log-variance heads."""

    def __init__(self, channels=3, t_dim=5, base=32):
        super().__init__()
        b = base
        self.features = nn.Sequential(
            # full-resolution first conv: small-shape details (e.g. corners)
            # don't survive an immediate stride-2 downsample
            nn.Conv2d(2 * channels, b, 3, 1, 1),
            nn.InstanceNorm2d(b, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, b, 4, 2, 1),
            nn.InstanceNorm2d(b, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 2 * b, 4, 2, 1),
            nn.InstanceNorm2d(2 * b, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * b, 2 * b, 3, 1, 1),
            nn.InstanceNorm2d(2 * b, affine=True),
            nn.ReLU(inplace=True),
            # keep a 4x4 spatial map: global pooling discards the layout the
            # mean head needs to tell attribute changes apart
            nn.AdaptiveAvgPool2d(4),
        )
        self.head_mean = nn.Linear(2 * b * 16, t_dim)
        self.head_log_var = nn.Linear(2 * b * 16, t_dim)

    def forward(self, x, y):
        h = self.features(torch.cat([x, y], dim=1)).flatten(1)
        mean = self.head_mean(h)
        log_var = self.head_log_var(h).clamp(LOG_VAR_MIN, LOG_VAR_MAX)
        return TransitionPosterior(mean, log_var)


class ImageDiscriminator(nn.Module):
    """Patch-style convolutional discriminator; patch logits are averaged
    into one probability per image."""

    def __init__(self, channels=3, base=32):
        super().__init__()
        b = base
        self.net = nn.Sequential(
            nn.Conv2d(channels, b, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(b, 2 * b, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * b, 4 * b, 3, 1, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * b, 1, 3, 1, 1),
        )

    def forward(self, img):
        logits = self.net(img)
        return _clamp_prob(logits.mean(dim=(1, 2, 3)))


class TransitionDiscriminator(nn.Module):
    """3-layer fully connected discriminator on transition vectors."""

    def __init__(self, t_dim=5, hidden=128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(t_dim, hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, 1),
        )

    def forward(self, t):
        return _clamp_prob(self.net(t).squeeze(-1))


class MatchDiscriminator(nn.Module):
    """Triplet discriminator on (x, t, y); t is spatially broadcast and
    concatenated with both images on channels."""

    def __init__(self, channels=3, t_dim=5, base=32):
        super().__init__()
        b = base
        self.net = nn.Sequential(
            nn.Conv2d(2 * channels + t_dim, b, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(b, 2 * b, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * b, 4 * b, 3, 1, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * b, 1, 3, 1, 1),
        )

    def forward(self, x, t, y):
        inp = torch.cat([x, y, _broadcast(t, x.shape[2], x.shape[3])], dim=1)
        return _clamp_prob(self.net(inp).mean(dim=(1, 2, 3)))


def _init_weights(module):
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.orthogonal_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class TeganNets:
    """Container for the five networks plus the shapes they were built for."""

    NAMES = ("generator", "encoder", "disc_real", "disc_trans", "disc_match")

    def __init__(self, image_size=32, channels=3, t_dim=5, base=32, seed=0):
        self.image_size = image_size
        self.channels = channels
        self.t_dim = t_dim
        self.base = base
        self.seed = seed
        torch.manual_seed(seed)
        self.generator = Generator(channels, t_dim, base)
        self.encoder = Encoder(channels, t_dim, base)
        self.disc_real = ImageDiscriminator(channels, base)
        self.disc_trans = TransitionDiscriminator(t_dim)
        self.disc_match = MatchDiscriminator(channels, t_dim, base)
        for net in self.all_nets():
            net.apply(_init_weights)

    def all_nets(self):
        return [getattr(self, name) for name in self.NAMES]

    def g_parameters(self):
        return list(self.generator.parameters()) + list(self.encoder.parameters())

    def d_parameters(self):
        return (
            list(self.disc_real.parameters())
            + list(self.disc_trans.parameters())
            + list(self.disc_match.parameters())
        )

    def parameter_count(self):
        return sum(p.numel() for net in self.all_nets() for p in net.parameters())

    def state_dict(self):
        return {name: getattr(self, name).state_dict() for name in self.NAMES}

    def load_state_dict(self, state):
        for name in self.NAMES:
            getattr(self, name).load_state_dict(state[name])

    def arch_config(self):
        return {
            "image_size": self.image_size,
            "channels": self.channels,
            "t_dim": self.t_dim,
            "base": self.base,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# single-image functional wrappers (HxWxC numpy in, HxWxC numpy / floats out)

def _img_to_tensor(img, nets, name):
    img = np.asarray(img, dtype=np.float32)
    expected = (nets.image_size, nets.image_size, nets.channels)
    if img.shape != expected:
        raise DimensionError(f"{name}: expected image shape {expected}, got {img.shape}")
    return torch.from_numpy(img).permute(2, 0, 1)[None]


def _t_to_tensor(t, nets):
    values = t.values if isinstance(t, Transition) else np.asarray(t, dtype=np.float32)
    if values.shape != (nets.t_dim,):
        raise DimensionError(f"expected transition of length {nets.t_dim}, got {values.shape}")
    return torch.as_tensor(values, dtype=torch.float32)[None]


def generator_forward(nets, x, t):
    with torch.no_grad():
        out = nets.generator(_img_to_tensor(x, nets, "x"), _t_to_tensor(t, nets))
    return out[0].permute(1, 2, 0).numpy()


def encoder_forward(nets, x, y):
    with torch.no_grad():
        post = nets.encoder(_img_to_tensor(x, nets, "x"), _img_to_tensor(y, nets, "y"))
    return TransitionPosterior(post.mean[0], post.log_var[0])


def disc_real_forward(nets, img):
    with torch.no_grad():
        return float(nets.disc_real(_img_to_tensor(img, nets, "img"))[0])


def disc_trans_forward(nets, t):
    with torch.no_grad():
        return float(nets.disc_trans(_t_to_tensor(t, nets))[0])


def disc_match_forward(nets, x, t, y):
    with torch.no_grad():
        return float(
            nets.disc_match(
                _img_to_tensor(x, nets, "x"), _t_to_tensor(t, nets), _img_to_tensor(y, nets, "y")
            )[0]
        )
