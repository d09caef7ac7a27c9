"""Command-line interface.

Exit codes: 0 success, 2 usage/config error, 3 runtime/divergence error.
Every command writes one run manifest alongside its outputs.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint
from .data import (
    ATTRIBUTE_NAMES,
    build_dataset,
    from_uint8,
    load_attr_file,
    load_dataset_dir,
    save_png,
    write_dataset_dir,
)
from .errors import DivergenceError, TeganError
from .metrics import evaluate, load_oracle, oracle_attributes, save_oracle, train_oracle
from .networks import generator_forward
from .training import TrainConfig, fit, load_config, resume_train_state, save_config
from .transitions import Transition, TransitionPosterior, sample_posterior


class UsageError(TeganError):
    pass


def _resolve_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("TEGAN_SEED")
    return int(env) if env else 0


def _write_manifest(directory, command, config, seed, artifacts, started):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "artifacts": [str(a) for a in artifacts],
        "version": __version__,
        "duration_sec": round(time.time() - started, 3),
    }
    path = directory / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _parse_holdout(spec):
    if spec in ("", "none"):
        return frozenset()
    try:
        return frozenset(tuple(sorted(int(i) for i in group.split(","))) for group in spec.split(";"))
    except ValueError:
        raise UsageError(f"cannot parse holdout spec {spec!r}; expected e.g. '0,1;2,4'")


def _parse_vector(text, name):
    try:
        return np.array([float(v) for v in text.split(",")], dtype=np.float32)
    except ValueError:
        raise UsageError(f"cannot parse {name} {text!r}; expected comma-separated numbers")


def _load_image(path, nets):
    from PIL import Image as PILImage

    img = from_uint8(np.asarray(PILImage.open(path).convert("RGB")))
    expected = (nets.image_size, nets.image_size, nets.channels)
    if img.shape != expected:
        raise UsageError(f"input image shape {img.shape} does not match checkpoint {expected}")
    return img


def _load_ckpt(path):
    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------

def cmd_data_synth(args):
    started = time.time()
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.test_count < 1:
        raise UsageError("--test-count must be >= 1")
    seed = _resolve_seed(args)
    holdout = _parse_holdout(args.holdout)
    split = build_dataset(
        n_train=args.count,
        n_test=args.test_count,
        seed=seed,
        canvas=(args.canvas, args.canvas),
        holdout_spec=holdout or frozenset(),
    )
    out = Path(args.out)
    write_dataset_dir(split, out)
    _write_manifest(
        out,
        "data-synth",
        {
            "count": args.count,
            "test_count": args.test_count,
            "canvas": args.canvas,
            "holdout": [list(s) for s in sorted(split.holdout_spec)],
        },
        seed,
        [out / "attrs.txt", out / "manifest.json", out / "images"],
        started,
    )
    return 0


def cmd_train(args):
    started = time.time()
    out = Path(args.out)
    if args.resume:
        state = resume_train_state(args.resume)
        # --config alongside --resume extends the schedule (e.g. more epochs)
        config = load_config(args.config) if args.config else state.config
        state.config = config
    else:
        state = None
        config = load_config(args.config)
    config.checkpoint_dir = str(out / "checkpoints")
    config.log_dir = str(out / "logs")
    if not Path(config.dataset).exists():
        raise UsageError(f"dataset not found: {config.dataset}")
    oracle = load_oracle(args.oracle) if args.oracle else None

    try:
        state, history = fit(config, oracle=oracle, state=state)
    except DivergenceError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 3

    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "resolved.cfg")
    if history:
        (out / "final_metrics.json").write_text(json.dumps(history[-1], indent=2) + "\n")
    _write_manifest(
        out,
        "train",
        dataclasses.asdict(config),
        config.seed,
        [config.checkpoint_dir, config.log_dir, out / "resolved.cfg"],
        started,
    )
    return 0


def cmd_train_oracle(args):
    started = time.time()
    seed = _resolve_seed(args)
    oracle = train_oracle(seed=seed, canvas=(args.canvas, args.canvas))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_oracle(out, oracle)
    _write_manifest(
        out.parent,
        "train-oracle",
        {"canvas": args.canvas, "validation_accuracy": oracle.validation_accuracy},
        seed,
        [out],
        started,
    )
    return 0


def _resolve_input_attributes(input_path, oracle_path, nets, img):
    """Current attribute bits of the input: from a sibling attrs.txt when the
    image came from a dataset directory, otherwise from the oracle."""
    input_path = Path(input_path)
    for attrs_file in (input_path.parent / "attrs.txt", input_path.parent.parent / "attrs.txt"):
        if attrs_file.exists():
            listing, _ = load_attr_file(attrs_file)
            for filename, attrs in listing:
                if filename == input_path.name:
                    return attrs.bits
    if oracle_path:
        oracle = load_oracle(oracle_path)
        return oracle_attributes(oracle, img[None])[0]
    raise UsageError("--flip needs a sibling attrs.txt or --oracle to infer current attributes")


def cmd_translate(args):
    started = time.time()
    if (args.t is None) == (args.flip is None):
        raise UsageError("exactly one of --t / --flip is required")
    nets, _ = _load_ckpt(args.ckpt)
    img = _load_image(args.input, nets)

    if args.t is not None:
        values = _parse_vector(args.t, "--t")
        if values.shape[0] != nets.t_dim:
            raise UsageError(f"--t has length {values.shape[0]}, checkpoint expects {nets.t_dim}")
    else:
        bits = _resolve_input_attributes(args.input, args.oracle, nets, img)
        values = np.zeros(nets.t_dim, dtype=np.float32)
        for name in args.flip.split(","):
            name = name.strip()
            if name not in ATTRIBUTE_NAMES:
                raise UsageError(f"unknown attribute {name!r}; known: {', '.join(ATTRIBUTE_NAMES)}")
            idx = ATTRIBUTE_NAMES.index(name)
            values[idx] = -bits[idx]  # (a_y - a_x)/2 for a sign flip

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(out, generator_forward(nets, img, Transition(values)))
    _write_manifest(
        out.parent,
        "translate",
        {"ckpt": args.ckpt, "input": args.input, "t": values.tolist()},
        _resolve_seed(args),
        [out],
        started,
    )
    return 0


def cmd_sample(args):
    started = time.time()
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.source == "posterior" and not args.ref:
        raise UsageError("--source posterior requires --ref")
    seed = _resolve_seed(args)
    nets, _ = _load_ckpt(args.ckpt)
    img = _load_image(args.input, nets)

    if args.source == "prior":
        rng = np.random.default_rng(seed)
        draws = rng.standard_normal((args.n, nets.t_dim)).astype(np.float32)
    else:
        ref = _load_image(args.ref, nets)
        from .networks import encoder_forward

        post = encoder_forward(nets, img, ref)
        gen = torch.Generator().manual_seed(seed)
        batched = TransitionPosterior(
            post.mean.expand(args.n, -1), post.log_var.expand(args.n, -1)
        )
        draws = sample_posterior(batched, gen).numpy()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    artifacts = []
    for i, values in enumerate(draws):
        result = generator_forward(nets, img, Transition(values))
        outputs.append(result)
        path = out / f"sample_{i:03d}.png"
        save_png(path, result)
        artifacts.append(path)

    cols = int(np.ceil(np.sqrt(args.n)))
    rows = int(np.ceil(args.n / cols))
    h, w, c = outputs[0].shape
    grid = -np.ones((rows * h, cols * w, c), dtype=np.float32)
    for i, result in enumerate(outputs):
        r, col = divmod(i, cols)
        grid[r * h : (r + 1) * h, col * w : (col + 1) * w] = result
    grid_path = out / "grid.png"
    save_png(grid_path, grid)
    artifacts.append(grid_path)

    _write_manifest(
        out,
        "sample",
        {"ckpt": args.ckpt, "input": args.input, "n": args.n, "source": args.source},
        seed,
        artifacts,
        started,
    )
    return 0


def cmd_interpolate(args):
    started = time.time()
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip() != ""]
    except ValueError:
        raise UsageError(f"cannot parse --alphas {args.alphas!r}; expected comma-separated numbers")
    if not alphas:
        raise UsageError("--alphas must contain at least one value")
    nets, _ = _load_ckpt(args.ckpt)
    img = _load_image(args.input, nets)
    values = _parse_vector(args.t, "--t")
    if values.shape[0] != nets.t_dim:
        raise UsageError(f"--t has length {values.shape[0]}, checkpoint expects {nets.t_dim}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for i, alpha in enumerate(alphas):
        result = generator_forward(nets, img, Transition(alpha * values))
        path = out / f"alpha_{i:03d}.png"
        save_png(path, result)
        artifacts.append(path)
    _write_manifest(
        out,
        "interpolate",
        {"ckpt": args.ckpt, "input": args.input, "t": values.tolist(), "alphas": alphas},
        _resolve_seed(args),
        artifacts,
        started,
    )
    return 0


def cmd_eval(args):
    started = time.time()
    if not Path(args.oracle).exists():
        raise UsageError(f"oracle not found: {args.oracle}")
    nets, _ = _load_ckpt(args.ckpt)
    oracle = load_oracle(args.oracle)
    split = load_dataset_dir(args.data)
    from .data import get_triplet

    samples = [get_triplet(split, r) for r in split.test]
    report = evaluate(nets, samples, split.holdout_spec, oracle=oracle)

    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(ckpt=str(args.ckpt), data=str(args.data)) + "\n")
    _write_manifest(
        out.parent,
        "eval",
        {"ckpt": args.ckpt, "data": args.data, "oracle": args.oracle},
        _resolve_seed(args),
        [out],
        started,
    )
    print(report.to_json())
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="tegan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("data-synth", help="generate a synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4096)
    p.add_argument("--test-count", type=int, default=512)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--canvas", type=int, default=32)
    p.add_argument("--holdout", default="0,1;2,4")
    p.set_defaults(func=cmd_data_synth)

    p = sub.add_parser("train", help="run two-phase training")
    p.add_argument("--config", required=False)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--oracle", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-oracle", help="train and freeze the attribute oracle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--canvas", type=int, default=32)
    p.set_defaults(func=cmd_train_oracle)

    p = sub.add_parser("translate", help="apply one transition to one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--t", default=None)
    p.add_argument("--flip", default=None)
    p.add_argument("--oracle", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("sample", help="translate with sampled transitions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--source", choices=["prior", "posterior"], default="prior")
    p.add_argument("--ref", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="sweep alpha * t")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--t", required=True)
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("eval", help="full evaluation report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and not args.resume and not args.config:
        parser.error("train requires --config (or --resume)")
    try:
        return args.func(args)
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (TeganError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
