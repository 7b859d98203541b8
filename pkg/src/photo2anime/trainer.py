"""Unpaired two-domain training: data pipeline, D/G alternation, EMA, checkpoints.

Determinism contract: a fixed (config, seed, data) triple reproduces the loss
log bit-for-bit, and a checkpoint restores enough state (parameters,
optimizer accumulators, sampler and torch RNG) that resuming produces the
exact next loss report.
"""

from __future__ import annotations

import copy
import json
import os
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch
import yaml
from PIL import Image

from .discriminator import DoubleBranchDiscriminator
from .errors import CheckpointError, ConfigurationError, ShapeError
from .generator import Generator, GeneratorConfig
from .losses import (ADV_FORMS, LossReport, LossWeights, discriminator_objective,
                     generator_objective)
from .normalization import clamp_mix_ratios

CHECKPOINT_FORMAT_VERSION = 1
IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass
class TrainConfig:
    photo_dir: str = ""
    anime_dir: str = ""
    out_dir: str = "runs/default"
    image_size: int = 128
    batch_size: int = 4
    iterations: int = 100_000
    learning_rate: float = 1e-4
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-8
    lambda_rec: float = 1.2
    lambda_fm: float = 1.0
    r1_gamma: float = 10.0
    adv_form: str = "hinge"
    ema_weight: float = 0.001
    seed: int = 0
    base_channels: int = 64
    style_dim: int = 256
    asc_depth: int = 4
    disc_base_channels: int = 64
    use_asc: bool = True
    use_fst_style_injection: bool = True
    polin_mode: str = "polin"
    adapolin_mode: str = "adapolin"
    use_double_branch: bool = True
    checkpoint_interval: int = 1000
    log_interval: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if not 0.0 < self.ema_weight < 1.0:
            raise ConfigurationError("ema_weight must lie in (0, 1)")
        if self.adv_form not in ADV_FORMS:
            raise ConfigurationError(f"adv_form must be one of {ADV_FORMS}")
        if self.checkpoint_interval < 1 or self.log_interval < 1:
            raise ConfigurationError("intervals must be >= 1")
        # Delegate the remaining validation to the component configs.
        self.generator_config()
        self.loss_weights()

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            image_size=self.image_size,
            base_channels=self.base_channels,
            style_dim=self.style_dim,
            asc_depth=self.asc_depth,
            use_asc=self.use_asc,
            use_fst_style_injection=self.use_fst_style_injection,
            polin_mode=self.polin_mode,
            adapolin_mode=self.adapolin_mode,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda_rec=self.lambda_rec, lambda_fm=self.lambda_fm,
                           r1_gamma=self.r1_gamma)

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"malformed config file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} must hold a key-value mapping")
        unknown = set(raw) - cls.field_names()
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def with_overrides(self, **overrides) -> "TrainConfig":
        unknown = set(overrides) - self.field_names()
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return replace(self, **overrides)

    def echo_line(self) -> str:
        flag = lambda b: "on" if b else "off"
        return ("[config] "
                f"iters={self.iterations} batch={self.batch_size} size={self.image_size} "
                f"seed={self.seed} lr={self.learning_rate} form={self.adv_form} "
                f"lambda_rec={self.lambda_rec} lambda_fm={self.lambda_fm} r1={self.r1_gamma} | "
                f"switches: asc={flag(self.use_asc)} "
                f"style_injection={flag(self.use_fst_style_injection)} "
                f"polin={self.polin_mode} adapolin={self.adapolin_mode} "
                f"double_branch={flag(self.use_double_branch)}")


class ImageFolderDataset:
    """Eagerly decoded folder of images, resized and kept as uint8 until batching."""

    def __init__(self, directory, image_size: int):
        directory = Path(directory)
        if not directory.is_dir():
            raise ConfigurationError(f"dataset directory {directory} does not exist")
        paths = sorted(p for p in directory.iterdir()
                       if p.suffix.lower() in IMAGE_EXTENSIONS)
        if not paths:
            raise ConfigurationError(f"no image files found in {directory}")
        decoded = []
        for path in paths:
            try:
                with Image.open(path) as img:
                    img = img.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
                    decoded.append(np.asarray(img, dtype=np.uint8))
            except Exception as exc:  # undecodable file: skip, keep going
                warnings.warn(f"skipping undecodable image {path}: {exc}")
        if not decoded:
            raise ConfigurationError(f"no decodable images in {directory}")
        stacked = np.stack(decoded).transpose(0, 3, 1, 2)  # [M, 3, S, S]
        self.pixels = torch.from_numpy(stacked.copy())
        self.paths = paths

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def batch(self, indices) -> torch.Tensor:
        """Selected images mapped to float32 in [-1, 1]."""
        return self.pixels[list(indices)].float() / 127.5 - 1.0


class UnpairedSampler:
    """Draws independent batches from both domains, reshuffling each epoch.

    Augmentation is a 0.5-probability horizontal flip. The full RNG and
    queue state is JSON-serializable for exact training resumption.
    """

    def __init__(self, photos: ImageFolderDataset, anime: ImageFolderDataset,
                 batch_size: int, seed: int):
        self.photos = photos
        self.anime = anime
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self._queues = {"photo": [], "anime": []}

    def _draw(self, name: str, size: int) -> list:
        queue = self._queues[name]
        while len(queue) < self.batch_size:
            queue.extend(int(i) for i in self.rng.permutation(size))
        picked, self._queues[name] = queue[:self.batch_size], queue[self.batch_size:]
        return picked

    def _augment(self, images: torch.Tensor) -> torch.Tensor:
        flips = self.rng.random(images.shape[0]) < 0.5
        if flips.any():
            images = images.clone()
            images[torch.from_numpy(flips)] = images[torch.from_numpy(flips)].flip(-1)
        return images

    def next_batch(self):
        x = self._augment(self.photos.batch(self._draw("photo", len(self.photos))))
        y = self._augment(self.anime.batch(self._draw("anime", len(self.anime))))
        return x, y

    def state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "queues": self._queues}

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self._queues = {k: list(v) for k, v in state["queues"].items()}


@dataclass
class TrainState:
    config: TrainConfig
    generator: Generator
    ema_generator: Generator
    discriminator: DoubleBranchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    sampler: UnpairedSampler
    iteration: int = 0


def build_state(config: TrainConfig) -> TrainState:
    torch.manual_seed(config.seed)
    generator = Generator(config.generator_config())
    discriminator = DoubleBranchDiscriminator(config.disc_base_channels,
                                              use_photo_branch=config.use_double_branch)
    ema_generator = copy.deepcopy(generator)
    ema_generator.requires_grad_(False)
    ema_generator.eval()

    def make_opt(params):
        return torch.optim.RMSprop(params, lr=config.learning_rate,
                                   alpha=config.rmsprop_alpha, eps=config.rmsprop_eps)

    photos = ImageFolderDataset(config.photo_dir, config.image_size)
    anime = ImageFolderDataset(config.anime_dir, config.image_size)
    sampler = UnpairedSampler(photos, anime, config.batch_size, config.seed)
    return TrainState(config=config, generator=generator, ema_generator=ema_generator,
                      discriminator=discriminator, opt_g=make_opt(generator.parameters()),
                      opt_d=make_opt(discriminator.parameters()), sampler=sampler)


def _param_list(params):
    if hasattr(params, "parameters"):
        return list(params.parameters())
    return list(params)


def ema_update(ema_params, live_params, w: float = 0.001) -> None:
    """In-place ema <- (1 - w) * ema + w * live over matched parameter lists."""
    ema, live = _param_list(ema_params), _param_list(live_params)
    if len(ema) != len(live):
        raise ShapeError(f"parameter counts differ: {len(ema)} vs {len(live)}")
    with torch.no_grad():
        for pe, pl in zip(ema, live):
            if pe.shape != pl.shape:
                raise ShapeError(f"parameter shapes differ: {tuple(pe.shape)} vs {tuple(pl.shape)}")
            # Difference form keeps ema == live a bit-exact fixed point.
            pe.add_(pl - pe, alpha=w)


def train_step(state: TrainState, batch=None) -> LossReport:
    """One D update, one G update, one EMA update; returns the merged report."""
    config = state.config
    weights = config.loss_weights()
    x, y = batch if batch is not None else state.sampler.next_batch()

    state.opt_d.zero_grad(set_to_none=True)
    total_d, d_report = discriminator_objective(state.generator, state.discriminator,
                                                x, y, weights, config.adv_form)
    total_d.backward()
    state.opt_d.step()

    state.opt_g.zero_grad(set_to_none=True)
    total_g, g_report = generator_objective(state.generator, state.discriminator,
                                            x, y, weights, config.adv_form)
    total_g.backward()
    state.opt_g.step()
    clamp_mix_ratios(state.generator)

    ema_update(state.ema_generator, state.generator, config.ema_weight)
    state.iteration += 1
    return g_report.merged_with_discriminator(d_report).check_finite()


def save_checkpoint(state: TrainState, path) -> None:
    """Atomic versioned snapshot of everything needed for exact resumption."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "iteration": state.iteration,
        "config": asdict(state.config),
        "generator": state.generator.state_dict(),
        "ema_generator": state.ema_generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "sampler": json.dumps(state.sampler.state()),
        "torch_rng": torch.get_rng_state(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def _read_payload(path) -> dict:
    if not Path(path).is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version!r}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}")
    return payload


def load_generator(path, ema: bool = True) -> Generator:
    """Inference-only load: rebuilds the generator without touching datasets."""
    payload = _read_payload(path)
    config = TrainConfig(**payload["config"])
    generator = Generator(config.generator_config())
    generator.load_state_dict(payload["ema_generator" if ema else "generator"])
    generator.eval()
    return generator


def load_checkpoint(path) -> TrainState:
    """Full training-state reconstruction for exact resumption."""
    payload = _read_payload(path)
    config = TrainConfig(**payload["config"])
    state = build_state(config)
    state.generator.load_state_dict(payload["generator"])
    state.ema_generator.load_state_dict(payload["ema_generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.sampler.set_state(json.loads(payload["sampler"]))
    torch.set_rng_state(payload["torch_rng"])
    state.iteration = payload["iteration"]
    return state


def run(state: TrainState) -> TrainState:
    """Drives train_step to config.iterations with per-step CSV logging."""
    config = state.config
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "losses.csv"
    ckpt_path = out_dir / "checkpoint.pt"

    print(config.echo_line())
    mode = "a" if state.iteration > 0 and log_path.exists() else "w"
    with open(log_path, mode) as log:
        if mode == "w":
            log.write(",".join(LossReport.CSV_COLUMNS) + "\n")
        while state.iteration < config.iterations:
            report = train_step(state)
            log.write(report.csv_row(state.iteration) + "\n")
            log.flush()
            if state.iteration % config.log_interval == 0:
                print(f"[iter {state.iteration}] total_g={report.total_g:.4f} "
                      f"total_d={report.total_d:.4f} rec={report.rec:.4f}")
            if state.iteration % config.checkpoint_interval == 0:
                save_checkpoint(state, ckpt_path)
    save_checkpoint(state, ckpt_path)
    return state


def fit(config: TrainConfig) -> TrainState:
    """Fresh training run; the final EMA generator is the inference model."""
    return run(build_state(config))
