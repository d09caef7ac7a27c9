"""Checkpoint archives for model and oracle parameters.

Model checkpoints carry the format tag "tegan-ckpt-v1" and hold all five
parameter collections, the full run configuration, and RNG state. Oracle
checkpoints use the tag "tegan-oracle-v1".
"""
from __future__ import annotations

from pathlib import Path

import torch

from .errors import ConfigError
from .networks import TeganNets

CKPT_FORMAT = "tegan-ckpt-v1"
ORACLE_FORMAT = "tegan-oracle-v1"


def save_checkpoint(path, nets: TeganNets, config=None, extra=None):
    payload = {
        "format": CKPT_FORMAT,
        "arch": nets.arch_config(),
        "params": nets.state_dict(),
        "config": dict(config or {}),
        "extra": dict(extra or {}),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path):
    """Returns (nets, payload); rebuilds the networks from the stored arch."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CKPT_FORMAT:
        raise ConfigError(f"not a {CKPT_FORMAT} checkpoint: {path}")
    nets = TeganNets(**payload["arch"])
    nets.load_state_dict(payload["params"])
    return nets, payload
