"""Evaluation suite: SSIM, PSNR, Frechet feature distance, oracle-based
attribute accuracy, and transition reconstruction error.

The Frechet distance uses penultimate features of a small attribute
classifier trained to near-perfect accuracy on the synthetic shapes data
(a desk-scale stand-in for Inception features), so its magnitudes are not
comparable to published FID numbers.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import ORACLE_FORMAT
from .data import ShapeSpec, render, transition_signature
from .errors import ConfigError, DataError, DimensionError, StateError
from .transitions import AttributeVector

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP = 100.0

_LUMA = np.array([0.299, 0.587, 0.114])  # ITU-R 601


def _to_unit_luma(img):
    img = np.asarray(img, dtype=np.float64)
    unit = (img + 1.0) / 2.0
    if unit.ndim == 3:
        unit = unit @ _LUMA
    elif unit.ndim != 2:
        raise DimensionError(f"expected HxW or HxWxC image, got shape {img.shape}")
    return unit


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img, window):
    k = window.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", views, window)


def ssim(a, b) -> float:
    """Mean local SSIM on [0,1]-rescaled luma, 11x11 Gaussian window."""
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    la, lb = _to_unit_luma(a), _to_unit_luma(b)
    if min(la.shape) < SSIM_WINDOW:
        raise DimensionError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = _gaussian_window()
    mu_a = _windowed_mean(la, w)
    mu_b = _windowed_mean(lb, w)
    var_a = _windowed_mean(la * la, w) - mu_a**2
    var_b = _windowed_mean(lb * lb, w) - mu_b**2
    cov = _windowed_mean(la * lb, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def psnr(a, b) -> float:
    """PSNR in dB on [0,1]-rescaled images (MAX=1), capped at 100 dB."""
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    ua = (np.asarray(a, dtype=np.float64) + 1.0) / 2.0
    ub = (np.asarray(b, dtype=np.float64) + 1.0) / 2.0
    mse = float(np.mean((ua - ub) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def frechet_distance(feats_a, feats_b) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    d^2 = ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the matrix
    square root taken through symmetric eigendecompositions and negative
    eigenvalues clamped to zero.
    """
    a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionError("feature dimensions differ")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DataError("need at least 2 samples per feature set")
    f = a.shape[1]
    if a.shape[0] <= f or b.shape[0] <= f:
        warnings.warn(f"fewer samples than feature dimension ({f}); covariance is singular")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(f, f)
    cov_b = np.cov(b, rowvar=False).reshape(f, f)

    # Tr((S1 S2)^{1/2}) = Tr((sqrt(S1) S2 sqrt(S1))^{1/2})
    vals, vecs = np.linalg.eigh(cov_a)
    sqrt_a = (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T
    inner = sqrt_a @ cov_b @ sqrt_a
    inner_vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = np.sum(np.sqrt(np.clip(inner_vals, 0, None)))

    d2 = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    return max(d2, 0.0)


# ---------------------------------------------------------------------------
# oracle attribute classifier

class OracleClassifier(nn.Module):
    """Small conv classifier with K sigmoid attribute heads; the 64-d layer
    before the heads doubles as the feature extractor for the Frechet proxy."""

    def __init__(self, channels=3, num_attributes=5, feature_dim=64, base=32):
        super().__init__()
        b = base
        self.num_attributes = num_attributes
        self.feature_dim = feature_dim
        self.conv = nn.Sequential(
            # full-resolution first conv: square-vs-circle differs only at
            # the corners of ~10px shapes, which downsampling washes out
            nn.Conv2d(channels, b, 3, 1, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, b, 4, 2, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 2 * b, 4, 2, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * b, 2 * b, 3, 1, 1),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(4),
        )
        self.fc_feat = nn.Linear(2 * b * 16, feature_dim)
        self.heads = nn.Linear(feature_dim, num_attributes)
        self.frozen = False

    def features(self, x):
        return torch.relu(self.fc_feat(self.conv(x).flatten(1)))

    def forward(self, x):
        return self.heads(self.features(x))

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self.frozen = True


def _images_to_tensor(images):
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(arr).permute(0, 3, 1, 2)


def _render_labelled(rng, n, canvas):
    images, labels = [], []
    for _ in range(n):
        bits = rng.choice([-1.0, 1.0], size=5)
        images.append(render(ShapeSpec(AttributeVector(bits), int(rng.integers(2**63 - 1))), canvas))
        labels.append(bits)
    return np.stack(images), np.stack(labels).astype(np.float32)


def train_oracle(seed=0, canvas=(32, 32), n_train=3000, n_val=500, max_epochs=40, target_acc=0.995):
    """Trains a fresh oracle on rendered shapes until it clears target_acc
    per-attribute validation accuracy, then freezes it."""
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    x_train, y_train = _render_labelled(rng, n_train, canvas)
    x_val, y_val = _render_labelled(rng, n_val, canvas)

    oracle = OracleClassifier()
    opt = torch.optim.Adam(oracle.parameters(), lr=1e-3)
    bce = nn.BCEWithLogitsLoss()
    xt = _images_to_tensor(x_train)
    yt = torch.from_numpy((y_train + 1) / 2)
    xv = _images_to_tensor(x_val)

    batch = 64
    acc = 0.0
    for _ in range(max_epochs):
        order = rng.permutation(len(xt))
        for i in range(0, len(xt), batch):
            idx = order[i : i + batch]
            opt.zero_grad()
            loss = bce(oracle(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
        with torch.no_grad():
            pred = torch.sign(oracle(xv))
        acc = float((pred.numpy() == y_val).mean())
        if acc >= target_acc:
            break
    if acc < target_acc:
        raise StateError(f"oracle only reached {acc:.4f} validation accuracy")
    oracle.freeze()
    oracle.validation_accuracy = acc
    return oracle


def save_oracle(path, oracle: OracleClassifier):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": ORACLE_FORMAT,
            "state": oracle.state_dict(),
            "num_attributes": oracle.num_attributes,
            "feature_dim": oracle.feature_dim,
            "validation_accuracy": getattr(oracle, "validation_accuracy", None),
        },
        path,
    )


def load_oracle(path) -> OracleClassifier:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != ORACLE_FORMAT:
        raise ConfigError(f"not a {ORACLE_FORMAT} checkpoint: {path}")
    oracle = OracleClassifier(
        num_attributes=payload["num_attributes"], feature_dim=payload["feature_dim"]
    )
    oracle.load_state_dict(payload["state"])
    oracle.validation_accuracy = payload.get("validation_accuracy")
    oracle.freeze()
    return oracle


def oracle_features(oracle, images) -> np.ndarray:
    with torch.no_grad():
        return oracle.features(_images_to_tensor(images)).numpy()


def oracle_attributes(oracle, images) -> np.ndarray:
    """Hard {-1,+1} predictions for each attribute head."""
    with torch.no_grad():
        logits = oracle(_images_to_tensor(images))
    pred = np.sign(logits.numpy())
    pred[pred == 0] = 1.0
    return pred


def attribute_accuracy(oracle, generated, target_attrs) -> float:
    """Fraction of (image, attribute) pairs where the oracle's sign matches
    the target bit."""
    if not oracle.frozen:
        raise StateError("oracle must be frozen before evaluation")
    if len(generated) == 0:
        raise DataError("empty evaluation batch")
    targets = np.stack([a.bits if isinstance(a, AttributeVector) else np.asarray(a) for a in target_attrs])
    pred = oracle_attributes(oracle, np.stack(list(generated)))
    if pred.shape != targets.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {targets.shape}")
    return float((pred == targets).mean())


def transition_error(encode, generate, samples) -> float:
    """Mean L1 of |E(x, G(x,t)) - t| plus |E(x, y) - t| over a batch.

    encode(x_batch, y_batch) -> posterior-mean transitions (N, d);
    generate(x_batch, t_batch) -> image batch.
    """
    x = np.stack([s.x for s in samples])
    y = np.stack([s.y for s in samples])
    t = np.stack([s.t.values for s in samples])
    t_from_pair = np.asarray(encode(x, y))
    t_from_gen = np.asarray(encode(x, np.asarray(generate(x, t))))
    if t_from_pair.shape != t.shape or t_from_gen.shape != t.shape:
        raise DimensionError("encoder output shape does not match transition batch")
    return float(np.mean(np.abs(t_from_pair - t)) + np.mean(np.abs(t_from_gen - t)))


# ---------------------------------------------------------------------------
# report

@dataclass
class MetricsReport:
    ssim_self: float
    ssim_translate: float
    psnr_self: float
    psnr_translate: float
    frechet_distance: float
    attr_acc_seen: float
    attr_acc_unseen: float
    trans_recons_error: float
    n_seen: int = 0
    n_unseen: int = 0

    def to_json(self, **extra):
        rec = asdict(self)
        rec.update(extra)
        return json.dumps(rec, indent=2)


def _nets_encode(nets):
    def encode(x, y):
        with torch.no_grad():
            post = nets.encoder(_images_to_tensor(x), _images_to_tensor(y))
        return post.mean.numpy()

    return encode


def _nets_generate(nets):
    def generate(x, t):
        with torch.no_grad():
            out = nets.generator(_images_to_tensor(x), torch.as_tensor(np.asarray(t, dtype=np.float32)))
        return out.permute(0, 2, 3, 1).numpy()

    return generate


def evaluate(nets, samples, holdout_spec, oracle=None, batch=64) -> MetricsReport:
    """Full evaluation of a model over test triplets.

    Computes self/translate SSIM and PSNR, the Frechet distance between
    real-target and translated feature sets, attribute accuracies split by
    seen vs held-out transition signatures, and transition error. Oracle-based
    fields are NaN when no oracle is given.
    """
    if not samples:
        raise DataError("no evaluation samples")
    encode = _nets_encode(nets)
    generate = _nets_generate(nets)

    x = np.stack([s.x for s in samples])
    y = np.stack([s.y for s in samples])
    t = np.stack([s.t.values for s in samples])

    translated = np.concatenate([generate(x[i : i + batch], t[i : i + batch]) for i in range(0, len(x), batch)])
    selfed = np.concatenate(
        [generate(x[i : i + batch], np.zeros_like(t[i : i + batch])) for i in range(0, len(x), batch)]
    )

    ssim_self = float(np.mean([ssim(a, b) for a, b in zip(x, selfed)]))
    ssim_translate = float(np.mean([ssim(a, b) for a, b in zip(x, translated)]))
    psnr_self = float(np.mean([psnr(a, b) for a, b in zip(x, selfed)]))
    psnr_translate = float(np.mean([psnr(a, b) for a, b in zip(x, translated)]))

    seen_idx = [i for i, s in enumerate(samples) if transition_signature(s.t) not in holdout_spec]
    unseen_idx = [i for i, s in enumerate(samples) if transition_signature(s.t) in holdout_spec]

    if oracle is not None:
        fd = frechet_distance(oracle_features(oracle, y), oracle_features(oracle, translated))
        targets = [s.a_y for s in samples]
        acc_seen = (
            attribute_accuracy(oracle, translated[seen_idx], [targets[i] for i in seen_idx])
            if seen_idx
            else float("nan")
        )
        acc_unseen = (
            attribute_accuracy(oracle, translated[unseen_idx], [targets[i] for i in unseen_idx])
            if unseen_idx
            else float("nan")
        )
    else:
        fd = acc_seen = acc_unseen = float("nan")

    return MetricsReport(
        ssim_self=ssim_self,
        ssim_translate=ssim_translate,
        psnr_self=psnr_self,
        psnr_translate=psnr_translate,
        frechet_distance=fd,
        attr_acc_seen=acc_seen,
        attr_acc_unseen=acc_unseen,
        trans_recons_error=transition_error(encode, generate, samples),
        n_seen=len(seen_idx),
        n_unseen=len(unseen_idx),
    )
