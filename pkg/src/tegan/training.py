"""Two-phase adversarial training.

Phase (a) trains on observed transitions: image generation/reconstruction
plus transition-discriminator and transition-reconstruction terms. Phase (b)
trains on sampled transitions (posterior and prior draws): the new-image
adversarial term and the reconstruction of sampled transitions. Phases
alternate strictly per iteration and share the triplet discriminator.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses
from .checkpoint import load_checkpoint, save_checkpoint
from .data import batch_to_arrays, load_dataset_dir, make_wrong_triplets
from .errors import ConfigError, DivergenceError
from .metrics import evaluate
from .transitions import sample_posterior


@dataclass
class TrainConfig:
    lam: float = 1.0
    lam1: float = 10.0
    lam2: float = 10.0
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 16
    epochs: int = 20
    d_steps_per_g_step: int = 1
    seed: int = 0
    transition_dim: int = 5
    base_channels: int = 32
    saturating: bool = False
    lr_decay_start: int = 0  # 0 -> constant lr; else linear decay to 0 from this epoch
    steps_per_epoch: int = 0  # 0 -> ceil(train size / batch)
    dataset: str = ""
    checkpoint_dir: str = "checkpoints"
    log_dir: str = "logs"
    eval_samples: int = 64

    def validate(self):
        if min(self.lam, self.lam1, self.lam2) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        for name in ("batch_size", "d_steps_per_g_step", "transition_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr_decay_start < 0:
            raise ConfigError("lr_decay_start must be >= 0")
        return self


def save_config(config: TrainConfig, path):
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in dataclasses.fields(config)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_config(path) -> TrainConfig:
    kwargs = {}
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    defaults = TrainConfig()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        current = getattr(defaults, key)
        try:
            if isinstance(current, bool):
                kwargs[key] = value.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                kwargs[key] = int(value)
            elif isinstance(current, float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}")
    return TrainConfig(**kwargs).validate()


class TrainState:
    """Networks, optimizers, RNG streams, and step/epoch counters."""

    def __init__(self, config: TrainConfig, nets):
        self.config = config
        self.nets = nets
        self.opt_g = torch.optim.Adam(
            nets.g_parameters(), lr=config.learning_rate, betas=(config.adam_beta1, config.adam_beta2)
        )
        self.opt_d = torch.optim.Adam(
            nets.d_parameters(), lr=config.learning_rate, betas=(config.adam_beta1, config.adam_beta2)
        )
        self.torch_gen = torch.Generator().manual_seed(config.seed)
        self.np_rng = np.random.default_rng(config.seed + 1)
        self.step = 0
        self.epoch = 0

    def rng_payload(self):
        return {
            "torch_gen": self.torch_gen.get_state(),
            "np_rng": self.np_rng.bit_generator.state,
        }

    def load_rng_payload(self, payload):
        self.torch_gen.set_state(payload["torch_gen"])
        self.np_rng.bit_generator.state = payload["np_rng"]


def _tensors(batch):
    x, y, t = batch_to_arrays(batch)
    to = lambda a: torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))
    return to(x).permute(0, 3, 1, 2), to(y).permute(0, 3, 1, 2), to(t)


def _param_snapshot(params):
    return [p.detach().clone() for p in params]


def _check_finite(value, breakdown):
    if not torch.isfinite(value):
        raise DivergenceError("non-finite loss encountered", breakdown=breakdown.to_record())


def train_step_phase_a(state: TrainState, batch):
    """Observed-transition phase: losses on (x, t, y) ground truth."""
    cfg = state.config
    nets = state.nets
    x, y, t = _tensors(batch)
    n = x.shape[0]
    wrong_t_samples, wrong_y_samples = make_wrong_triplets(batch, state.np_rng)
    _, _, t_wrong = _tensors(wrong_t_samples)
    _, y_wrong, _ = _tensors(wrong_y_samples)

    # --- discriminator update(s)
    for _ in range(cfg.d_steps_per_g_step):
        with torch.no_grad():
            y_hat = nets.generator(x, t)
            post = nets.encoder(x, y)
            t_tilde = sample_posterior(post, state.torch_gen)
        t_prior = torch.randn(n, cfg.transition_dim, generator=state.torch_gen)

        v_real_img = losses.adv_real_img(nets.disc_real(y), nets.disc_real(y_hat))
        v_trans = losses.adv_trans(nets.disc_trans(t), nets.disc_trans(t_prior), nets.disc_trans(t_tilde))
        match_d = (
            torch.log(nets.disc_match(x, t, y)).mean()
            + torch.log1p(-nets.disc_match(x, t, y_hat)).mean()
            + torch.log1p(-nets.disc_match(x, t_wrong, y)).mean()
            + torch.log1p(-nets.disc_match(x, t, y_wrong)).mean()
        )
        loss_d = -(v_real_img + v_trans) - cfg.lam * match_d
        state.opt_d.zero_grad()
        loss_d.backward()
        state.opt_d.step()

    # --- generator/encoder update
    y_hat = nets.generator(x, t)
    x_cyc = nets.generator(y_hat, -t)
    x_self = nets.generator(x, torch.zeros_like(t))
    post_pair = nets.encoder(x, y)
    post_gen = nets.encoder(x, y_hat)
    post_self = nets.encoder(x, x)
    t_tilde = sample_posterior(post_pair, state.torch_gen)

    sat = cfg.saturating
    g_adv_img = losses.gen_adv(nets.disc_real(y_hat), sat)
    g_adv_trans = losses.gen_adv(nets.disc_trans(t_tilde), sat)
    g_match = losses.gen_adv(nets.disc_match(x, t, y_hat), sat)
    l_cyc = losses.recons_img_cyc(x, x_cyc)
    l_self = losses.recons_img_self(x, x_self)
    l_trans = losses.recons_trans(t, post_pair.mean, post_gen.mean, post_self.mean)
    loss_g = (
        g_adv_img + g_adv_trans + cfg.lam * g_match + cfg.lam1 * (l_cyc + l_self) + cfg.lam2 * l_trans
    )
    state.opt_g.zero_grad()
    loss_g.backward()
    state.opt_g.step()

    breakdown = losses.full_objective(
        real_img=v_real_img.detach(),
        real_newtrans=v_trans.detach(),
        real_newimg=torch.tensor(0.0),
        match_d=match_d.detach(),
        match_g=torch.log1p(-nets.disc_match(x, t, y_hat).detach()).mean(),
        recons_img_cyc=l_cyc.detach(),
        recons_img_self=l_self.detach(),
        recons_trans=l_trans.detach(),
        recons_newtrans=torch.tensor(0.0),
        lam=cfg.lam,
        lam1=cfg.lam1,
        lam2=cfg.lam2,
        gen_adv_img=g_adv_img.detach(),
        gen_adv_trans=g_adv_trans.detach(),
        gen_adv_newimg=torch.tensor(0.0),
        gen_match=g_match.detach(),
    )
    _check_finite(loss_g.detach() + loss_d.detach(), breakdown)
    state.step += 1
    return breakdown


def train_step_phase_b(state: TrainState, batch):
    """Sampled-transition phase: posterior and prior draws drive generation,
    the new-image adversarial term, and sampled-transition reconstruction."""
    cfg = state.config
    nets = state.nets
    x, y, t = _tensors(batch)
    n = x.shape[0]

    # --- discriminator update(s)
    for _ in range(cfg.d_steps_per_g_step):
        with torch.no_grad():
            post = nets.encoder(x, y)
            t_tilde = sample_posterior(post, state.torch_gen)
            t_prior = torch.randn(n, cfg.transition_dim, generator=state.torch_gen)
            y_tilde = nets.generator(x, t_tilde)
            y_prime = nets.generator(x, t_prior)

        v_newimg = losses.adv_real_newimg(
            nets.disc_real(y), nets.disc_real(y_tilde), nets.disc_real(y_prime)
        )
        match_d = (
            torch.log(nets.disc_match(x, t, y)).mean()
            + torch.log1p(-nets.disc_match(x, t_prior, y_prime)).mean()
            + torch.log1p(-nets.disc_match(x, t_tilde, y_tilde)).mean()
        )
        loss_d = -v_newimg - cfg.lam * match_d
        state.opt_d.zero_grad()
        loss_d.backward()
        state.opt_d.step()

    # --- generator/encoder update
    post = nets.encoder(x, y)
    t_tilde = sample_posterior(post, state.torch_gen)
    t_prior = torch.randn(n, cfg.transition_dim, generator=state.torch_gen)
    y_tilde = nets.generator(x, t_tilde)
    y_prime = nets.generator(x, t_prior)
    l_newtrans = losses.recons_newtrans(
        t_prior, t_tilde, nets.encoder(x, y_prime).mean, nets.encoder(x, y_tilde).mean
    )
    sat = cfg.saturating
    g_adv = losses.gen_adv(nets.disc_real(y_tilde), sat) + losses.gen_adv(nets.disc_real(y_prime), sat)
    g_match = losses.gen_adv(nets.disc_match(x, t_tilde, y_tilde), sat) + losses.gen_adv(
        nets.disc_match(x, t_prior, y_prime), sat
    )
    loss_g = g_adv + cfg.lam * g_match + cfg.lam2 * l_newtrans
    state.opt_g.zero_grad()
    loss_g.backward()
    state.opt_g.step()

    with torch.no_grad():
        match_g_val = torch.log1p(-nets.disc_match(x, t_tilde.detach(), y_tilde.detach())).mean() + torch.log1p(
            -nets.disc_match(x, t_prior, y_prime.detach())
        ).mean()
    breakdown = losses.full_objective(
        real_img=torch.tensor(0.0),
        real_newtrans=torch.tensor(0.0),
        real_newimg=v_newimg.detach(),
        match_d=match_d.detach(),
        match_g=match_g_val,
        recons_img_cyc=torch.tensor(0.0),
        recons_img_self=torch.tensor(0.0),
        recons_trans=torch.tensor(0.0),
        recons_newtrans=l_newtrans.detach(),
        lam=cfg.lam,
        lam1=cfg.lam1,
        lam2=cfg.lam2,
        gen_adv_img=torch.tensor(0.0),
        gen_adv_trans=torch.tensor(0.0),
        gen_adv_newimg=g_adv.detach(),
        gen_match=g_match.detach(),
    )
    _check_finite(loss_g.detach() + loss_d.detach(), breakdown)
    state.step += 1
    return breakdown


def _checkpoint_extra(state: TrainState):
    return {
        "step": state.step,
        "epoch": state.epoch,
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "rng": state.rng_payload(),
    }


def save_train_checkpoint(state: TrainState, path):
    save_checkpoint(path, state.nets, config=dataclasses.asdict(state.config), extra=_checkpoint_extra(state))


def resume_train_state(path) -> TrainState:
    nets, payload = load_checkpoint(path)
    config = TrainConfig(**payload["config"]).validate()
    state = TrainState(config, nets)
    extra = payload["extra"]
    state.opt_g.load_state_dict(extra["opt_g"])
    state.opt_d.load_state_dict(extra["opt_d"])
    state.load_rng_payload(extra["rng"])
    state.step = extra["step"]
    state.epoch = extra["epoch"]
    return state


def fit(config: TrainConfig, split=None, oracle=None, state=None, log_fn=None):
    """Runs the full two-phase training loop.

    Alternates phase (a) and phase (b) per iteration, checkpoints every
    epoch, logs one JSON-lines record per step and an evaluation record per
    epoch. Returns (state, history) where history is the list of per-epoch
    metric records. On a divergence error the last epoch checkpoint is left
    in place and the error propagates.
    """
    config.validate()
    if split is None:
        split = load_dataset_dir(config.dataset)

    ckpt_dir = Path(config.checkpoint_dir)
    log_dir = Path(config.log_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_dir / "train_log.jsonl"

    if state is None:
        from .networks import TeganNets

        h, w = split.canvas
        if h != w:
            raise ConfigError("training expects square canvases")
        nets = TeganNets(
            image_size=h,
            channels=3,
            t_dim=config.transition_dim,
            base=config.base_channels,
            seed=config.seed,
        )
        state = TrainState(config, nets)

    # materialize training triplets once; sampling then only draws indices
    from .data import get_triplet

    train_samples = [get_triplet(split, r) for r in split.train]
    test_samples = [get_triplet(split, r) for r in split.test[: config.eval_samples]]

    def epoch_lr(epoch):
        if config.lr_decay_start <= 0 or epoch < config.lr_decay_start:
            return config.learning_rate
        span = max(config.epochs - config.lr_decay_start, 1)
        return config.learning_rate * max(0.0, (config.epochs - epoch) / span)

    steps_per_epoch = config.steps_per_epoch or -(-len(train_samples) // config.batch_size)
    history = []
    log = open(log_path, "a" if state.step > 0 else "w")
    try:
        while state.epoch < config.epochs:
            lr = epoch_lr(state.epoch)
            for group in list(state.opt_g.param_groups) + list(state.opt_d.param_groups):
                group["lr"] = lr
            for _ in range(steps_per_epoch):
                idx = state.np_rng.integers(0, len(train_samples), size=config.batch_size)
                batch = [train_samples[i] for i in idx]
                phase = "a" if state.step % 2 == 0 else "b"
                if phase == "a":
                    breakdown = train_step_phase_a(state, batch)
                else:
                    breakdown = train_step_phase_b(state, batch)
                record = {"type": "step", "step": state.step, "phase": phase}
                record.update(breakdown.to_record())
                log.write(json.dumps(record) + "\n")
                if log_fn:
                    log_fn(record)
            state.epoch += 1

            report = evaluate(state.nets, test_samples, split.holdout_spec, oracle=oracle)
            epoch_record = {"type": "epoch", "epoch": state.epoch, "step": state.step}
            epoch_record.update(json.loads(report.to_json()))
            history.append(epoch_record)
            log.write(json.dumps(epoch_record) + "\n")
            log.flush()
            if log_fn:
                log_fn(epoch_record)

            save_train_checkpoint(state, ckpt_dir / f"epoch_{state.epoch:03d}.pt")
            save_train_checkpoint(state, ckpt_dir / "latest.pt")
    finally:
        log.close()
    return state, history
