"""Synthetic shapes dataset with exact attribute ground truth.

Each image shows one filled shape on a noise-textured dark background.
Five binary attributes control it:

    0  shape       square (-1) / circle (+1)
    1  size        small (-1) / large (+1)
    2  hue_bit_1   \\ two bits -> 4 hues:
    3  hue_bit_2   /  (-1,-1) red, (-1,+1) green, (+1,-1) blue, (+1,+1) yellow
    4  brightness  dim (-1) / bright (+1)

Because attributes are known exactly, the transition between any two
images is known exactly: t = (a_y - a_x) / 2 with entries in {-1, 0, +1}.
Pairs are "unpaired" in appearance (independent nuisance seeds) while the
triplet (x, t, y) stays exactly sampled.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import chain, combinations
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import AttrFileError, ConfigError, DataError, DimensionError
from .transitions import AttributeVector, Transition, TransitionKind

ATTRIBUTE_NAMES = ["shape", "size", "hue_bit_1", "hue_bit_2", "brightness"]
NUM_ATTRIBUTES = len(ATTRIBUTE_NAMES)

DEFAULT_HOLDOUT = frozenset({(0, 1), (2, 4)})

_HUES = {
    (-1, -1): (1.00, 0.15, 0.15),  # red
    (-1, 1): (0.15, 1.00, 0.15),  # green
    (1, -1): (0.20, 0.35, 1.00),  # blue
    (1, 1): (1.00, 1.00, 0.15),  # yellow
}


@dataclass(frozen=True)
class ShapeSpec:
    attributes: AttributeVector
    nuisance_seed: int


@dataclass
class TripletSample:
    x: np.ndarray
    y: np.ndarray
    t: Transition  # normalized attribute difference, entries in {-1, 0, +1}
    a_x: AttributeVector
    a_y: AttributeVector


@dataclass(frozen=True)
class PairRecord:
    a_x: AttributeVector
    a_y: AttributeVector
    seed_x: int
    seed_y: int
    file_x: str | None = None
    file_y: str | None = None


@dataclass
class DatasetSplit:
    train: list
    test: list
    holdout_spec: frozenset
    canvas: tuple
    root: Path | None = None
    seed: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)


def transition_signature(t: Transition) -> tuple:
    """Indices of the attributes that change under t, sorted."""
    return tuple(np.nonzero(t.values)[0].tolist())


def render(spec: ShapeSpec, canvas=(32, 32)) -> np.ndarray:
    """Deterministic RGB rendering of a spec, values in [-1, 1]."""
    h, w = canvas
    if h < 16 or w < 16:
        raise ConfigError(f"canvas {canvas} too small; need at least 16x16")
    bits = spec.attributes.bits
    rng = np.random.default_rng(spec.nuisance_seed & 0xFFFFFFFFFFFFFFFF)

    # nuisance: per-image background level plus faint pixel texture (strong
    # per-pixel noise would put a hard ceiling on pixel-level reconstruction)
    img = 0.06 + rng.uniform(-0.04, 0.04) + rng.uniform(-0.008, 0.008, size=(h, w, 3))

    dy, dx = rng.integers(-3, 4, size=2)
    cy, cx = h / 2 + dy, w / 2 + dx
    radius = (0.30 if bits[1] > 0 else 0.15) * min(h, w)
    yy, xx = np.mgrid[0:h, 0:w]
    if bits[0] > 0:
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    else:
        mask = (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)

    color = np.array(_HUES[(int(bits[2]), int(bits[3]))])
    color = color * (1.0 if bits[4] > 0 else 0.45)
    img[mask] = color
    return np.clip(img * 2.0 - 1.0, -1.0, 1.0).astype(np.float32)


def make_triplet(a_x, a_y, seeds, canvas=(32, 32)) -> TripletSample:
    seed_x, seed_y = seeds
    x = render(ShapeSpec(a_x, seed_x), canvas)
    y = render(ShapeSpec(a_y, seed_y), canvas)
    t = Transition((a_y.bits - a_x.bits) / 2.0, TransitionKind.ATTRIBUTE_DIFF)
    return TripletSample(x=x, y=y, t=t, a_x=a_x, a_y=a_y)


def _all_signatures():
    idx = range(NUM_ATTRIBUTES)
    return [tuple(s) for s in chain.from_iterable(combinations(idx, r) for r in range(NUM_ATTRIBUTES + 1))]


def _random_pair(rng, signatures):
    sig = signatures[rng.integers(len(signatures))]
    a_x = AttributeVector(rng.choice([-1.0, 1.0], size=NUM_ATTRIBUTES))
    a_y = a_x.flipped(sig) if sig else AttributeVector(a_x.bits.copy())
    # the pair shares one nuisance seed, so the target is the exact
    # attribute-edit of the source (placement and background included).
    # Pixel-space cycle and matching objectives are only sound on aligned
    # pairs: with independent nuisance the discriminators teach the
    # generator to repaint placement and background, which no pixel cycle
    # can invert. Nuisance still varies freely across pairs.
    seed = int(rng.integers(0, 2**63 - 1))
    return PairRecord(a_x=a_x, a_y=a_y, seed_x=seed, seed_y=seed)


def build_dataset(n_train=4096, n_test=512, seed=0, canvas=(32, 32), holdout_spec=DEFAULT_HOLDOUT) -> DatasetSplit:
    """Procedural dataset: training pairs draw their transition signature
    uniformly from the permitted (non-held-out) signatures; the test set
    mixes permitted signatures with every held-out one."""
    if n_train < 1:
        raise ConfigError("n_train must be >= 1")
    holdout_spec = frozenset(tuple(sorted(s)) for s in holdout_spec)
    rng = np.random.default_rng(seed)
    permitted = [s for s in _all_signatures() if s not in holdout_spec]
    if not permitted:
        raise ConfigError("holdout_spec excludes every signature")

    train = [_random_pair(rng, permitted) for _ in range(n_train)]

    held = sorted(holdout_spec)
    test = []
    for i in range(n_test):
        # every 4th test pair uses a held-out signature so each one is covered
        if held and i % 4 == 0:
            sigs = [held[(i // 4) % len(held)]]
        else:
            sigs = permitted
        test.append(_random_pair(rng, sigs))
    return DatasetSplit(train=train, test=test, holdout_spec=holdout_spec, canvas=tuple(canvas), seed=seed)


def _load_image(path) -> np.ndarray:
    return from_uint8(np.asarray(PILImage.open(path).convert("RGB")))


def get_triplet(split: DatasetSplit, record: PairRecord) -> TripletSample:
    if record.file_x is not None:
        key = (record.file_x, record.file_y)
        if key not in split._cache:
            split._cache[key] = (
                _load_image(split.root / record.file_x),
                _load_image(split.root / record.file_y),
            )
        x, y = split._cache[key]
        t = Transition((record.a_y.bits - record.a_x.bits) / 2.0, TransitionKind.ATTRIBUTE_DIFF)
        return TripletSample(x=x, y=y, t=t, a_x=record.a_x, a_y=record.a_y)
    return make_triplet(record.a_x, record.a_y, (record.seed_x, record.seed_y), split.canvas)


def sample_batch(split: DatasetSplit, batch: int, rng: np.random.Generator):
    """Uniform draws from the training listing."""
    if not split.train:
        raise DataError("empty training split")
    indices = rng.integers(0, len(split.train), size=batch)
    return [get_triplet(split, split.train[i]) for i in indices]


def make_wrong_triplets(batch, rng: np.random.Generator):
    """Mismatched negatives for the triplet discriminator: (x, t_wrong, y)
    and (x, t, y_wrong), drawn from other elements of the same batch."""
    if len(batch) < 2:
        raise DataError("need at least 2 samples to build wrong triplets")
    n = len(batch)
    wrong_t, wrong_y = [], []
    for i, s in enumerate(batch):
        j = int(rng.integers(n))
        for _ in range(100):
            if j != i and not np.array_equal(batch[j].t.values, s.t.values):
                break
            j = (j + 1 + int(rng.integers(n))) % n
        else:
            raise DataError("degenerate batch: all transitions equal")
        wrong_t.append(TripletSample(x=s.x, y=s.y, t=batch[j].t, a_x=s.a_x, a_y=s.a_y))

        k = int(rng.integers(n))
        for _ in range(100):
            if k != i and not np.array_equal(batch[k].a_y.bits, s.a_y.bits):
                break
            k = (k + 1 + int(rng.integers(n))) % n
        else:
            raise DataError("degenerate batch: all target attributes equal")
        wrong_y.append(TripletSample(x=s.x, y=batch[k].y, t=s.t, a_x=s.a_x, a_y=batch[k].a_y))
    return wrong_t, wrong_y


# ---------------------------------------------------------------------------
# pixel quantization (shared with the CLI)

def to_uint8(img: np.ndarray) -> np.ndarray:
    """[-1,1] float -> 8-bit, round half away from zero."""
    return np.clip(np.floor((img + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def from_uint8(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float32) / 127.5) - 1.0


def save_png(path, img: np.ndarray):
    PILImage.fromarray(to_uint8(img)).save(path)


# ---------------------------------------------------------------------------
# attribute files (CelebA convention)

def save_attr_file(path, listing, names=ATTRIBUTE_NAMES):
    lines = [str(len(listing)), " ".join(names)]
    for filename, attrs in listing:
        bits = " ".join(str(int(b)) for b in attrs.bits)
        lines.append(f"{filename} {bits}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_attr_file(path):
    """Returns (listing, names) where listing is [(filename, AttributeVector)]."""
    text = Path(path).read_text().splitlines()
    if len(text) < 2:
        raise AttrFileError("file must have a count line and a header line")
    try:
        count = int(text[0].strip())
    except ValueError:
        raise AttrFileError("first line must be an integer image count", line=1)
    names = text[1].split()
    if not names:
        raise AttrFileError("second line must list attribute names", line=2)
    listing = []
    for lineno, line in enumerate(text[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 1 + len(names):
            raise AttrFileError(
                f"expected 1 filename + {len(names)} attributes, got {len(parts)} fields",
                line=lineno,
            )
        values = []
        for p in parts[1:]:
            if p not in ("1", "-1", "+1"):
                raise AttrFileError(f"attribute entry {p!r} is not +1/-1", line=lineno)
            values.append(float(p))
        listing.append((parts[0], AttributeVector(np.array(values))))
    if len(listing) != count:
        raise AttrFileError(f"header declares {count} images but file lists {len(listing)}")
    return listing, names


# ---------------------------------------------------------------------------
# on-disk dataset directory: images/*.png + attrs.txt + manifest.json

def write_dataset_dir(split: DatasetSplit, out_dir):
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    listing = []
    pairs = {"train": [], "test": []}
    records = {"train": [], "test": []}
    idx = 0
    for part in ("train", "test"):
        for record in getattr(split, part):
            sample = get_triplet(split, record)
            fx, fy = f"{idx:06d}_x.png", f"{idx:06d}_y.png"
            save_png(out_dir / "images" / fx, sample.x)
            save_png(out_dir / "images" / fy, sample.y)
            listing.append((fx, record.a_x))
            listing.append((fy, record.a_y))
            pairs[part].append([fx, fy])
            records[part].append(record)
            idx += 1

    save_attr_file(out_dir / "attrs.txt", listing)
    manifest = {
        "seed": split.seed,
        "canvas": list(split.canvas),
        "holdout_spec": [list(s) for s in sorted(split.holdout_spec)],
        "pairs_train": pairs["train"],
        "pairs_test": pairs["test"],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out_dir


def load_dataset_dir(path) -> DatasetSplit:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {path}")
    manifest = json.loads(manifest_path.read_text())
    listing, _ = load_attr_file(path / "attrs.txt")
    attrs = dict(listing)

    def build(pairs):
        out = []
        for fx, fy in pairs:
            if fx not in attrs or fy not in attrs:
                raise DataError(f"manifest references {fx}/{fy} missing from attrs.txt")
            out.append(
                PairRecord(
                    a_x=attrs[fx],
                    a_y=attrs[fy],
                    seed_x=0,
                    seed_y=0,
                    file_x=f"images/{fx}" if not fx.startswith("images/") else fx,
                    file_y=f"images/{fy}" if not fy.startswith("images/") else fy,
                )
            )
        return out

    return DatasetSplit(
        train=build(manifest["pairs_train"]),
        test=build(manifest["pairs_test"]),
        holdout_spec=frozenset(tuple(s) for s in manifest["holdout_spec"]),
        canvas=tuple(manifest["canvas"]),
        root=path,
        seed=manifest.get("seed"),
    )


def batch_to_arrays(samples):
    """Stack a list of TripletSamples into (x, y, t) float32 arrays."""
    x = np.stack([s.x for s in samples])
    y = np.stack([s.y for s in samples])
    t = np.stack([s.t.values for s in samples])
    return x, y, t
