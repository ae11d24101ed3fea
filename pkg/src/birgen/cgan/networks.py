"""Noise-free conditional generator and the condition-aware discriminator."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..codec import IR_LEN, SD_LEN, TRAIN_RATE, PreprocessedBIR

COND_DIM = 14
KERNEL = 4
STAGES = 4


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    """Affine lift to ``channels[0] x L/16`` then four x2 transposed-conv stages.

    ``ir_len + sd_len`` must be divisible by 16. Source and listener
    coordinates enter as ``(p - pos_center) / pos_scale``, a fixed
    rescaling that keeps metre-valued inputs near unit range.
    """

    ir_len: int = IR_LEN
    sd_len: int = SD_LEN
    channels: tuple = (32, 32, 16, 16, 8)
    out_channels: int = 2
    pos_center: float = 2.5
    pos_scale: float = 2.0

    def __post_init__(self):
        if self.layout_len % 2 ** STAGES:
            raise NetworkError(f"layout length {self.layout_len} must be divisible by 16")
        if len(self.channels) != STAGES + 1:
            raise NetworkError(f"need {STAGES + 1} channel widths")
        if not self.pos_scale > 0:
            raise NetworkError("pos_scale must be positive")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @property
    def layout_len(self) -> int:
        return self.ir_len + self.sd_len

    @property
    def base_len(self) -> int:
        return self.layout_len // 2 ** STAGES

    def input_affine(self):
        """``(scale, shift)`` applied to a raw condition row."""
        scale = np.ones(COND_DIM)
        scale[8:] = 1.0 / self.pos_scale
        shift = np.zeros(COND_DIM)
        shift[8:] = -self.pos_center / self.pos_scale
        return scale, shift

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Four stride-2 convolutions over BIR channels plus the broadcast condition."""

    layout_len: int = IR_LEN + SD_LEN
    channels: tuple = (16, 16, 32, 32)

    def __post_init__(self):
        if self.layout_len % 2 ** STAGES:
            raise NetworkError(f"layout length {self.layout_len} must be divisible by 16")
        if len(self.channels) != STAGES:
            raise NetworkError(f"need {STAGES} channel widths")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def _uniform(rng, shape, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return ad.parameter(rng.uniform(-lim, lim, size=shape))


class _Params:
    names: tuple = ()

    def tensors(self) -> dict:
        out = {}
        for name in self.names:
            v = getattr(self, name)
            if isinstance(v, list):
                out.update({f"{name}{i}": t for i, t in enumerate(v)})
            else:
                out[name] = v
        return out

    def parameters(self) -> list:
        return list(self.tensors().values())

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def _load(self, arrays: dict):
        for name in self.names:
            v = getattr(self, name)
            if isinstance(v, list):
                for i, t in enumerate(v):
                    t.data = np.array(arrays[f"{name}{i}"], dtype=np.float64)
            else:
                v.data = np.array(arrays[name], dtype=np.float64)
        for t in self.parameters():
            if not np.all(np.isfinite(t.data)):
                raise NetworkError("non-finite weights")


class GeneratorParams(_Params):
    names = ("A", "a", "W", "b", "Wout", "bout")

    def __init__(self, config: GeneratorConfig, A, a, W, b, Wout, bout):
        self.config = config
        self.A, self.a, self.W, self.b, self.Wout, self.bout = A, a, W, b, Wout, bout

    @classmethod
    def init(cls, seed, config: GeneratorConfig = GeneratorConfig()):
        rng = np.random.default_rng(seed)
        ch, L0 = config.channels, config.base_len
        A = _uniform(rng, (COND_DIM, ch[0] * L0), COND_DIM, ch[0] * L0)
        a = ad.parameter(np.zeros(ch[0] * L0))
        W, b = [], []
        for cin, cout in zip(ch[:-1], ch[1:]):
            # a stride-2 transposed conv sees K/2 taps per output sample
            std = np.sqrt(2.0 / (cin * KERNEL / 2))
            W.append(ad.parameter(rng.normal(0.0, std, size=(cin, cout, KERNEL))))
            b.append(ad.parameter(np.zeros(cout)))
        Wout = _uniform(rng, (config.out_channels, ch[-1], 1), ch[-1], config.out_channels)
        bout = ad.parameter(np.zeros(config.out_channels))
        return cls(config, A, a, W, b, Wout, bout)

    @classmethod
    def zeros(cls, config: GeneratorConfig = GeneratorConfig()):
        p = cls.init(0, config)
        for t in p.parameters():
            t.data[...] = 0.0
        return p

    @classmethod
    def from_arrays(cls, config: GeneratorConfig, arrays: dict):
        p = cls.init(0, config)
        p._load(arrays)
        return p


class DiscriminatorParams(_Params):
    names = ("W", "b", "H", "h")

    def __init__(self, config: DiscriminatorConfig, W, b, H, h):
        self.config = config
        self.W, self.b, self.H, self.h = W, b, H, h

    @classmethod
    def init(cls, seed, config: DiscriminatorConfig = DiscriminatorConfig()):
        rng = np.random.default_rng(seed)
        ch = (2 + COND_DIM,) + config.channels
        W, b = [], []
        for cin, cout in zip(ch[:-1], ch[1:]):
            std = np.sqrt(2.0 / (cin * KERNEL))
            W.append(ad.parameter(rng.normal(0.0, std, size=(cout, cin, KERNEL))))
            b.append(ad.parameter(np.zeros(cout)))
        width = ch[-1] * config.layout_len // 2 ** STAGES
        H = _uniform(rng, (width,), width, 1)
        return cls(config, W, b, H, ad.parameter(0.0))

    @classmethod
    def from_arrays(cls, config: DiscriminatorConfig, arrays: dict):
        p = cls.init(0, config)
        p._load(arrays)
        return p


# ---------------------------------------------------------------- forward passes

def _check_cond(cond):
    c = cond.data if isinstance(cond, ad.Tensor) else np.asarray(cond, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != COND_DIM:
        raise NetworkError(f"condition must have shape (batch, {COND_DIM})")
    if not np.all(np.isfinite(c)):
        raise NetworkError("non-finite condition")


def generator_forward(cond, params: GeneratorParams) -> ad.Tensor:
    """Batch of conditions (B, 14) to layouts (B, 2, ir_len + sd_len)."""
    _check_cond(cond)
    cfg = params.config
    scale, shift = cfg.input_affine()
    x = ad.relu((ad.as_tensor(cond) * scale + shift) @ params.A + params.a)
    x = ad.reshape(x, (x.shape[0], cfg.channels[0], cfg.base_len))
    for W, b in zip(params.W, params.b):
        x = ad.relu(ad.conv_transpose1d(x, W, b, stride=2, padding=1))
    return ad.conv1d(x, params.Wout, params.bout)


def discriminator_forward(bir, cond, params: DiscriminatorParams) -> ad.Tensor:
    """Probability (B,) that each (BIR, condition) pair is real."""
    _check_cond(cond)
    x = ad.as_tensor(bir)
    B, _, L = x.shape
    if L != params.config.layout_len:
        raise NetworkError(f"discriminator expects length {params.config.layout_len}, got {L}")
    c = ad.broadcast_to(ad.reshape(ad.as_tensor(cond), (B, COND_DIM, 1)), (B, COND_DIM, L))
    x = ad.concat([x, c], axis=1)
    for W, b in zip(params.W, params.b):
        x = ad.relu(ad.conv1d(x, W, b, stride=2, padding=1))
    logit = ad.reshape(x, (B, -1)) @ params.H + params.h
    return ad.sigmoid(logit)


def make_condition(latent, source, listener) -> np.ndarray:
    """Scene latent (8) ++ source (3) ++ listener (3), positions in the scene frame."""
    c = np.concatenate([np.ravel(latent), np.ravel(source), np.ravel(listener)]).astype(np.float64)
    if c.shape != (COND_DIM,):
        raise NetworkError(f"condition must have {COND_DIM} values, got {c.size}")
    if not np.all(np.isfinite(c)):
        raise NetworkError("non-finite condition")
    return c


def _upsample2(x, w, b):
    """Channel-last stride-2, K=4, padding-1 transposed conv + bias + ReLU.

    Output sample ``2m`` takes taps 1 and 3 (inputs ``m``, ``m - 1``);
    sample ``2m + 1`` takes taps 2 and 0 (inputs ``m``, ``m + 1``).
    """
    B, L, C = x.shape
    O = w.shape[1]
    Y = (x.reshape(B * L, C) @ w.transpose(0, 2, 1).reshape(C, KERNEL * O)).reshape(B, L, KERNEL, O)
    out = np.empty((B, L, 2, O))
    out[:, :, 0] = Y[:, :, 1]
    out[:, 1:, 0] += Y[:, :-1, 3]
    out[:, :, 1] = Y[:, :, 2]
    out[:, :-1, 1] += Y[:, 1:, 0]
    out += b
    np.maximum(out, 0.0, out=out)
    return out.reshape(B, 2 * L, O)


def generate_batch(conds, params: GeneratorParams) -> np.ndarray:
    """Inference-only forward pass in channel-last layout; equals ``generator_forward``."""
    c = np.atleast_2d(np.asarray(conds, dtype=np.float64))
    _check_cond(c)
    cfg = params.config
    scale, shift = cfg.input_affine()
    x = np.maximum((c * scale + shift) @ params.A.data + params.a.data, 0.0)
    x = x.reshape(len(c), cfg.channels[0], cfg.base_len).transpose(0, 2, 1)
    for W, b in zip(params.W, params.b):
        x = _upsample2(x, W.data, b.data)
    out = x @ params.Wout.data[:, :, 0].T + params.bout.data
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def generate(cond, params: GeneratorParams) -> PreprocessedBIR:
    """Deterministic BIR layout for one condition."""
    out = generate_batch(np.asarray(cond, dtype=np.float64)[None], params)[0]
    cfg = params.config
    return PreprocessedBIR(out, cfg.ir_len, cfg.sd_len, TRAIN_RATE)
