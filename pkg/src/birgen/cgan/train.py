"""Alternating discriminator / generator training with RMSprop and step decay."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..codec import PreprocessedBIR
from ..scene_graph import GraphEncoderParams, SceneGraph, encode_scene_t
from ..tensor_io import load_tensors, save_tensors
from .losses import gan_terms, generator_objective
from .networks import (COND_DIM, DiscriminatorConfig, DiscriminatorParams, GeneratorConfig,
                       GeneratorParams, discriminator_forward, generator_forward, make_condition)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("step", "L_CGAN", "L_BIR", "L_ED", "L_MSE", "L_D", "lr")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lambda_bir: float = 1.0
    lambda_ed: float = 1.0
    lambda_mse: float = 1.0
    lr: float = 8e-5
    lr_decay: float = 0.7
    lr_decay_every: int = 7
    batch: int = 96
    epochs: int = 100
    rms_alpha: float = 0.99
    rms_eps: float = 1e-8
    seed: int = 0
    ir_len: int = 3968
    sd_len: int = 128
    non_saturating: bool = False
    joint_encoder: bool = True
    max_steps: int | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if min(self.lambda_bir, self.lambda_ed, self.lambda_mse) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch < 1 or self.epochs < 1 or self.lr_decay_every < 1:
            raise ValueError("batch, epochs and lr_decay_every must be >= 1")

    @property
    def weights(self):
        return self.lambda_bir, self.lambda_ed, self.lambda_mse

    @classmethod
    def desk(cls, **overrides):
        """Small-data preset: 512 + 32 layout, full batches, faster and slower-decaying lr.

        The reference schedule decays the rate below useful values within
        the few hundred steps a desk run affords, and at unit weights the
        log-ED gradient swamps the waveform terms under RMSprop.
        """
        base = dict(lambda_bir=0.3, lambda_ed=0.03, lambda_mse=1.0, lr=3e-3, lr_decay_every=100,
                    batch=4, epochs=500, ir_len=512, sd_len=32)
        return cls(**{**base, **overrides})

    def lr_at(self, epoch: int) -> float:
        """Learning rate in effect during ``epoch`` (0-based)."""
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainRecord:
    """One training pair. Give ``graph`` to train the encoder jointly, else ``latent``."""

    ref: PreprocessedBIR
    source: np.ndarray
    listener: np.ndarray
    latent: np.ndarray | None = None
    graph: SceneGraph | None = None


@dataclass
class TrainResult:
    generator: GeneratorParams
    discriminator: DiscriminatorParams
    history: list = field(default_factory=list)
    encoder: GraphEncoderParams | None = None


def _conditions(records, encoder, joint):
    """Condition tensor (B, 14); latents flow through the encoder when joint."""
    rows = []
    for r in records:
        pos = np.concatenate([np.ravel(r.source), np.ravel(r.listener)])
        if joint and r.graph is not None:
            z = encode_scene_t(r.graph, encoder)
        elif r.latent is not None:
            z = ad.Tensor(r.latent)
        else:
            raise TrainingError("record has neither a latent nor a graph")
        rows.append(ad.concat([z, ad.Tensor(pos)], axis=0))
    cond = ad.concat([ad.reshape(c, (1, COND_DIM)) for c in rows], axis=0)
    make_condition(cond.data[0, :8], cond.data[0, 8:11], cond.data[0, 11:])  # validates
    return cond


def _check_finite(terms: dict, step: int):
    for name, v in terms.items():
        if not math.isfinite(v):
            raise TrainingError(f"non-finite {name} = {v} at step {step}")


def train(records, cfg: TrainConfig = TrainConfig(), generator: GeneratorParams | None = None,
          discriminator: DiscriminatorParams | None = None,
          encoder: GraphEncoderParams | None = None, callback=None) -> TrainResult:
    """Alternate one discriminator ascent and one generator descent per batch.

    The learning rate is multiplied by ``lr_decay`` every ``lr_decay_every``
    epochs. ``history`` gets one dict per step with every loss term.
    """
    records = list(records)
    if not records:
        raise TrainingError("empty dataset")
    layout = records[0].ref.data.shape[1]
    if layout != cfg.ir_len + cfg.sd_len:
        raise TrainingError(f"records have length {layout}, config says {cfg.ir_len + cfg.sd_len}")
    G = generator or GeneratorParams.init(cfg.seed, GeneratorConfig(cfg.ir_len, cfg.sd_len))
    D = discriminator or DiscriminatorParams.init(cfg.seed + 1, DiscriminatorConfig(layout))
    joint = cfg.joint_encoder and any(r.graph is not None for r in records)
    if joint and encoder is None:
        encoder = GraphEncoderParams.init(cfg.seed + 2)
    g_params = G.parameters() + (encoder.parameters() if joint else [])
    opt_g = ad.RMSprop(g_params, cfg.lr, cfg.rms_alpha, cfg.rms_eps)
    opt_d = ad.RMSprop(D.parameters(), cfg.lr, cfg.rms_alpha, cfg.rms_eps)
    rng = np.random.default_rng(cfg.seed)
    history, step = [], 0

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        opt_g.lr = opt_d.lr = lr
        order = rng.permutation(len(records))
        for lo in range(0, len(order), cfg.batch):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                return TrainResult(G, D, history, encoder if joint else None)
            batch = [records[i] for i in order[lo:lo + cfg.batch]]
            ref = np.stack([r.ref.data for r in batch])

            # discriminator: ascend L_D (descend -L_D) with the generator fixed
            with ad.no_grad():
                cond_fixed = _conditions(batch, encoder, joint).data
                fake_fixed = generator_forward(cond_fixed, G).data
            opt_d.zero_grad()
            _, l_d = gan_terms(discriminator_forward(ref, cond_fixed, D),
                               discriminator_forward(fake_fixed, cond_fixed, D))
            l_d = ad.tmean(l_d)
            _check_finite({"L_D": float(l_d.data)}, step)
            (-l_d).backward()
            opt_d.step()

            # generator (and encoder): descend L_G with D frozen
            opt_g.zero_grad()
            cond = _conditions(batch, encoder, joint)
            fake = generator_forward(cond, G)
            d_fake = discriminator_forward(fake, cond, D)
            total, terms = generator_objective(fake, ref, d_fake, cfg.weights, cfg.ir_len,
                                               cfg.non_saturating)
            _check_finite(terms, step)
            total.backward()
            for p in D.parameters():
                p.grad = None
            opt_g.step()

            row = {"step": step, "epoch": epoch, **terms, "L_D": float(l_d.data),
                   "L_G": float(total.data), "lr": lr}
            history.append(row)
            if callback is not None:
                callback(row)
            step += 1
    return TrainResult(G, D, history, encoder if joint else None)


# ---------------------------------------------------------------- persistence

def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in history:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                        for k in HISTORY_COLUMNS})


def read_history_csv(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def save_checkpoint(path, generator: GeneratorParams, discriminator: DiscriminatorParams | None = None,
                    cfg: TrainConfig | None = None, encoder: GraphEncoderParams | None = None):
    """Tensor archive with ``G/``, ``D/`` and ``E/`` prefixes plus a config echo."""
    tensors = {f"G/{k}": t.data for k, t in generator.tensors().items()}
    meta = {"generator": generator.config.to_dict()}
    if discriminator is not None:
        tensors.update({f"D/{k}": t.data for k, t in discriminator.tensors().items()})
        meta["discriminator"] = discriminator.config.to_dict()
    if encoder is not None:
        tensors.update({f"E/{k}": t.data for k, t in encoder.tensors().items()})
        meta["encoder"] = True
    if cfg is not None:
        meta["train_config"] = cfg.to_dict()
    return save_tensors(path, tensors, meta)


def load_checkpoint(path):
    """Returns ``(generator, discriminator_or_None, train_config_or_None, encoder_or_None)``."""
    arrays, meta = load_tensors(path, with_meta=True)
    if "generator" not in meta:
        raise TrainingError(f"{path}: not a generator checkpoint")

    def part(prefix):
        n = len(prefix)
        return {k[n:]: v for k, v in arrays.items() if k.startswith(prefix)}
    gcfg = meta["generator"]
    G = GeneratorParams.from_arrays(GeneratorConfig(**{**gcfg, "channels": tuple(gcfg["channels"])}),
                                    part("G/"))
    D = None
    if "discriminator" in meta:
        dcfg = meta["discriminator"]
        D = DiscriminatorParams.from_arrays(
            DiscriminatorConfig(**{**dcfg, "channels": tuple(dcfg["channels"])}), part("D/"))
    E = None
    if meta.get("encoder"):
        E = GraphEncoderParams.from_arrays(part("E/"))
    cfg = TrainConfig.from_dict(meta["train_config"]) if "train_config" in meta else None
    return G, D, cfg, E


def save_run(out_dir, result: TrainResult, cfg: TrainConfig):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint", result.generator, result.discriminator, cfg, result.encoder)
    write_history_csv(result.history, out / "history.csv")
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
