"""Simulation and head-model settings."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..materials import BAND_CENTERS


@dataclass(frozen=True)
class SimConfig:
    """Stochastic ray-tracing settings.

    ``energy_threshold`` is relative to the initial per-ray energy;
    ``air_absorption`` optionally gives per-band attenuation in nepers per
    meter (off by default).
    """

    n_rays: int = 20000
    max_depth: int = 2000
    energy_threshold: float = 1e-6
    speed_of_sound: float = 343.0
    sim_sample_rate: int = 48000
    histogram_bin: float = 1e-3
    detector_radius: float = 0.25
    bands: tuple = BAND_CENTERS
    air_absorption: tuple | None = None

    def __post_init__(self):
        positive = ("n_rays", "max_depth", "speed_of_sound", "sim_sample_rate",
                    "histogram_bin", "detector_radius")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"SimConfig.{name} must be positive")
        if not 0 <= self.energy_threshold < 1:
            raise ValueError("SimConfig.energy_threshold must be in [0, 1)")
        if len(self.bands) != 8:
            raise ValueError("SimConfig.bands must list 8 octave centers")
        if self.air_absorption is not None and len(self.air_absorption) != 8:
            raise ValueError("air_absorption needs one value per band")

    @property
    def bin_samples(self) -> int:
        return int(round(self.histogram_bin * self.sim_sample_rate))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bands"] = list(d["bands"])
        if d["air_absorption"] is not None:
            d["air_absorption"] = list(d["air_absorption"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "bands" in d:
            d["bands"] = tuple(d["bands"])
        if d.get("air_absorption") is not None:
            d["air_absorption"] = tuple(d["air_absorption"])
        return cls(**d)


@dataclass(frozen=True)
class HeadModel:
    """Spherical-head binaural cues.

    The head faces +x with +z up, so the right ear points along -y.
    Contralateral attenuation grows linearly with octave index from 0 dB at
    the lowest band to ``ild_max`` dB at 8 kHz, scaled by ``|sin(lateral)|``.
    """

    ear_separation: float = 0.18
    ild_max: float = 20.0
    forward: tuple = (1.0, 0.0, 0.0)
    up: tuple = (0.0, 0.0, 1.0)
    band_scale: tuple = field(default=tuple(k / 7 for k in range(8)))

    def __post_init__(self):
        if not self.ear_separation > 0:
            raise ValueError("ear_separation must be positive")
        if self.ild_max < 0:
            raise ValueError("ild_max must be >= 0")

    @property
    def right_axis(self) -> np.ndarray:
        r = np.cross(self.forward, self.up)
        return r / np.linalg.norm(r)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def config_hash(cfg: SimConfig, head: HeadModel | None = None, extra: dict | None = None) -> str:
    """sha256 over the canonical JSON of the settings that shape the output."""
    payload = {"sim": cfg.to_dict()}
    if head is not None:
        payload["head"] = head.to_dict()
    if extra:
        payload["extra"] = extra
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
