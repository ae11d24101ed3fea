"""Auralization: convolve dry audio with BIRs and render listener walkthroughs.

A walkthrough is cut into frames of ``1 / bir_update_rate`` seconds. Each
frame has its own BIR (listener position at the frame centre) and a
trapezoidal weight whose ramps straddle the frame boundaries, so adjacent
weights sum to one everywhere. The dry signal is weighted per frame,
convolved with that frame's BIR, and the results are overlap-added.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import oaconvolve

from .codec import BIR, read_wav, resample

log = logging.getLogger(__name__)

CLIP_HEADROOM_DB = -1.0


class RenderError(ValueError):
    pass


# ---------------------------------------------------------------- convolution

def convolve(dry, bir: BIR, dry_rate: int | None = None) -> np.ndarray:
    """Full linear convolution of a mono signal with both BIR channels.

    Parameters
    ----------
    dry : array_like, shape (n,)
        Mono source signal.
    bir : BIR
        Kernel pair.
    dry_rate : int, optional
        Sample rate of ``dry``; it is resampled to ``bir.sample_rate`` when
        the two differ.

    Returns
    -------
    ndarray, shape (2, n + len(bir) - 1)
    """
    x = np.asarray(dry, dtype=np.float64).ravel()
    if dry_rate is not None and dry_rate != bir.sample_rate:
        x = resample(x, dry_rate, bir.sample_rate)
    if x.size == 0 or len(bir) == 0:
        raise RenderError("empty input to convolve")
    return oaconvolve(x[None, :], bir.stereo, axes=1)


# ---------------------------------------------------------------- walkthrough spec

@dataclass
class WalkthroughSource:
    position: np.ndarray
    audio: str

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)


@dataclass
class WalkthroughSpec:
    """Sources with dry audio, a timestamped listener path and the update scheme."""

    scene: str
    sources: list
    times: np.ndarray
    positions: np.ndarray
    bir_update_rate: float = 10.0
    crossfade_ms: float = 100.0

    def __post_init__(self):
        self.sources = [s if isinstance(s, WalkthroughSource) else WalkthroughSource(**s)
                        for s in self.sources]
        self.times = np.asarray(self.times, dtype=np.float64).ravel()
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(self.times) == 0 or len(self.times) != len(self.positions):
            raise RenderError("listener path needs one position per timestamp")
        if np.any(np.diff(self.times) <= 0):
            raise RenderError("listener timestamps must be strictly increasing")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.positions))):
            raise RenderError("non-finite listener path")
        if not self.bir_update_rate > 0:
            raise RenderError("bir_update_rate must be positive")
        if self.crossfade_ms < 0:
            raise RenderError("crossfade must be non-negative")

    def listener_at(self, t) -> np.ndarray:
        """Linear interpolation along the path, held constant past either end."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.stack([np.interp(t, self.times, self.positions[:, k]) for k in range(3)], axis=1)
        return out

    def check_bounds(self, lo, hi, tol=1e-9):
        lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        pts = [("listener", p) for p in self.positions]
        pts += [("source", s.position) for s in self.sources]
        for what, p in pts:
            if np.any(p < lo - tol) or np.any(p > hi + tol):
                raise RenderError(f"{what} position {p.tolist()} outside scene bounds")

    def to_dict(self):
        return {
            "scene": self.scene,
            "sources": [{"position": s.position.tolist(), "audio": s.audio} for s in self.sources],
            "path": [{"t": float(t), "position": p.tolist()}
                     for t, p in zip(self.times, self.positions)],
            "bir_update_rate": self.bir_update_rate,
            "crossfade_ms": self.crossfade_ms,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            path = d["path"]
            return cls(d["scene"], d["sources"], [p["t"] for p in path],
                       [p["position"] for p in path], d.get("bir_update_rate", 10.0),
                       d.get("crossfade_ms", 100.0))
        except (KeyError, TypeError) as exc:
            raise RenderError(f"malformed walkthrough spec: {exc}") from exc


def load_walkthrough(path) -> WalkthroughSpec:
    """Read a JSON spec; relative scene and audio paths resolve against its folder."""
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RenderError(f"{path}: {exc}") from exc
    spec = WalkthroughSpec.from_dict(d)
    base = path.parent
    spec.scene = str(base / spec.scene)
    for s in spec.sources:
        s.audio = str(base / s.audio)
    return spec


def save_walkthrough(spec: WalkthroughSpec, path):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1) + "\n")


def load_dry(path):
    """Mono dry signal ``(rate, samples)``; multichannel files are averaged with a warning."""
    rate, data = read_wav(path)
    if data.shape[0] > 1:
        log.warning("%s: %d channels downmixed to mono", path, data.shape[0])
    return rate, data.mean(axis=0)


# ---------------------------------------------------------------- crossfade

def _ramp(n, start, xfade):
    """0 before ``start - xfade/2``, 1 after ``start + xfade/2``, linear between."""
    if xfade == 0:
        return (n >= start).astype(np.float64)
    return np.clip((n - start + xfade / 2) / xfade, 0.0, 1.0)


def frame_weights(n_samples: int, period: int, xfade: int):
    """Per-frame weights, shape (frames, n_samples); columns sum to one.

    Frame ``k`` covers ``[k * period, (k + 1) * period)`` with linear ramps of
    ``xfade`` samples centred on both boundaries.
    """
    if period < 1:
        raise RenderError("frame period must be at least one sample")
    if not 0 <= xfade <= period:
        raise RenderError("crossfade cannot exceed the BIR update period")
    n_frames = max(1, math.ceil(n_samples / period))
    n = np.arange(n_samples, dtype=np.float64)
    rise = [np.ones(n_samples)] + [_ramp(n, k * period, xfade) for k in range(1, n_frames)]
    rise.append(np.zeros(n_samples))
    return np.stack([rise[k] - rise[k + 1] for k in range(n_frames)])


# ---------------------------------------------------------------- rendering

@dataclass
class RenderResult:
    audio: np.ndarray
    sample_rate: int
    normalized: bool = False
    gain: float = 1.0
    flags: list = field(default_factory=list)


def render_walkthrough(spec: WalkthroughSpec, bir_provider, dry=None, dry_rate=None,
                       bounds=None, normalize: bool = True) -> RenderResult:
    """Render every source along the listener path and mix them.

    Parameters
    ----------
    spec : WalkthroughSpec
    bir_provider : callable
        ``(source_xyz, listener_xyz) -> BIR``. All returned BIRs must share a
        sample rate, which becomes the output rate.
    dry : list of array_like, optional
        One mono signal per source. Read from ``spec`` when omitted.
    dry_rate : int or list of int, optional
        Rates of ``dry``; required when ``dry`` is given.
    bounds : (lo, hi), optional
        Scene bounding box; positions outside it raise ``RenderError``.
    normalize : bool
        Scale to -1 dBFS peak, only if the mix would clip.
    """
    if not spec.sources:
        raise RenderError("walkthrough has no sources")
    if bounds is not None:
        spec.check_bounds(*bounds)
    if dry is None:
        loaded = [load_dry(s.audio) for s in spec.sources]
        rates, dry = [r for r, _ in loaded], [x for _, x in loaded]
    else:
        if dry_rate is None:
            raise RenderError("dry_rate is required with explicit dry signals")
        rates = list(dry_rate) if np.ndim(dry_rate) else [dry_rate] * len(dry)
    if len(dry) != len(spec.sources):
        raise RenderError("need one dry signal per source")

    cache = {}

    def provide(i, lst):
        key = (i, tuple(np.round(lst, 9)))
        if key not in cache:
            try:
                b = bir_provider(spec.sources[i].position, lst)
            except Exception as exc:
                raise RenderError(f"BIR provider failed for source {i} at {lst.tolist()}: "
                                  f"{exc}") from exc
            if not isinstance(b, BIR):
                raise RenderError("BIR provider must return a BIR")
            cache[key] = b
        return cache[key]

    # the first BIR fixes the output rate
    fs = provide(0, spec.listener_at(0.0)[0]).sample_rate
    signals = []
    for x, r in zip(dry, rates):
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size == 0:
            raise RenderError("empty dry signal")
        signals.append(resample(x, r, fs) if r != fs else x)
    n = max(len(x) for x in signals)
    period = max(1, int(round(fs / spec.bir_update_rate)))
    xfade = min(period, int(round(spec.crossfade_ms * 1e-3 * fs)))
    weights = frame_weights(n, period, xfade)
    centres = (np.arange(len(weights)) + 0.5) * period / fs
    listeners = spec.listener_at(centres)

    frames = []
    for k, lst in enumerate(listeners):
        lo = max(0, k * period - (xfade + 1) // 2)
        hi = min(n, (k + 1) * period + (xfade + 1) // 2)
        for i, x in enumerate(signals):
            seg = x[lo:min(hi, len(x))] * weights[k, lo:min(hi, len(x))]
            if seg.size and np.any(seg):
                b = provide(i, lst)
                if b.sample_rate != fs:
                    raise RenderError("BIR provider returned mixed sample rates")
                frames.append((lo, convolve(seg, b)))
    out_len = max([n] + [lo + y.shape[1] for lo, y in frames])
    out = np.zeros((2, out_len))
    for lo, y in frames:
        out[:, lo:lo + y.shape[1]] += y
    if not np.all(np.isfinite(out)):
        raise RenderError("non-finite samples in the rendered mix")

    result = RenderResult(out, fs)
    peak = float(np.max(np.abs(out))) if out.size else 0.0
    if normalize and peak > 1.0:
        result.gain = 10 ** (CLIP_HEADROOM_DB / 20) / peak
        result.audio = out * result.gain
        result.normalized = True
        result.flags.append(f"peak {peak:.3g} would clip; normalized to {CLIP_HEADROOM_DB:g} dBFS")
        log.warning(result.flags[-1])
    return result
