"""Energy histogram to pressure signal: band-filtered noise shaped bin by bin."""

from __future__ import annotations

import logging
from functools import lru_cache

import numpy as np
from scipy import signal

from ..codec import BIR
from .config import HeadModel, SimConfig
from .tracer import EnergyHistogram, trace

log = logging.getLogger(__name__)

FILTER_ORDER = 2
# zero-phase impulse kernels are cut to this many seconds either side
DIRECT_SPAN = 0.1


@lru_cache(maxsize=16)
def octave_sos(center: float, fs: int):
    lo, hi = center / np.sqrt(2.0), min(center * np.sqrt(2.0), 0.45 * fs)
    return signal.butter(FILTER_ORDER, [lo, hi], btype="bandpass", fs=fs, output="sos")


@lru_cache(maxsize=16)
def _direct_kernel(center: float, fs: int) -> np.ndarray:
    """Unit-energy zero-phase band impulse, centered at index ``len // 2``."""
    half = int(DIRECT_SPAN * fs)
    x = np.zeros(2 * half + 1)
    x[half] = 1.0
    h = signal.sosfiltfilt(octave_sos(center, fs), x)
    return h / np.sqrt(np.sum(h * h))


def _shape_noise(noise, energy, bin_samples):
    """Scale each ``bin_samples`` window of ``noise`` to the matching bin energy."""
    n_bins = len(energy)
    seg = noise[:n_bins * bin_samples].reshape(n_bins, bin_samples)
    power = np.sum(seg * seg, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(power > 0, np.sqrt(energy / power), 0.0)
    return (seg * gain[:, None]).ravel()


def synthesize_bir(hist: EnergyHistogram, cfg: SimConfig = SimConfig(), seed=0) -> BIR:
    """Pressure BIR at ``cfg.sim_sample_rate`` from a binaural energy histogram.

    Reflected energy becomes octave-filtered white noise whose energy in each
    bin equals the bin's band energy (amplitude goes as the square root of
    energy). The direct path, when present, is a zero-phase band impulse at
    its exact sample with energy equal to its band energy, which keeps the
    sub-bin interaural delay.
    """
    fs = int(cfg.sim_sample_rate)
    bs = int(round(hist.bin_width * fs))
    n = hist.n_bins * bs
    if not np.any(hist.reflected) and hist.direct is None:
        log.warning("empty energy histogram; returning a silent BIR")
        return BIR(fs, np.zeros(n), np.zeros(n))
    streams = np.random.SeedSequence(int(seed)).spawn(2)
    out = np.zeros((2, n))
    for ear in range(2):
        rng = np.random.default_rng(streams[ear])
        noise = rng.standard_normal((len(cfg.bands), n))
        for b, fc in enumerate(cfg.bands):
            e = hist.reflected[ear, :, b]
            if not np.any(e):
                continue
            filtered = signal.sosfiltfilt(octave_sos(float(fc), fs), noise[b])
            out[ear] += _shape_noise(filtered, e, bs)
        if hist.direct is not None:
            k = int(round(hist.direct.time[ear] * fs))
            for b, fc in enumerate(cfg.bands):
                h = _direct_kernel(float(fc), fs) * np.sqrt(hist.direct.energy[ear, b])
                half = len(h) // 2
                lo, hi = k - half, k + half + 1
                out[ear, max(lo, 0):min(hi, n)] += h[max(0, -lo):len(h) - max(0, hi - n)]
    return BIR(fs, out[0], out[1])


def simulate_pair(scene, source, listener, cfg: SimConfig = SimConfig(),
                  head: HeadModel = HeadModel(), seed=0, backend=None) -> BIR:
    """Trace then synthesize; one seed drives both stages."""
    hist = trace(scene, source, listener, cfg, head, seed, backend)
    return synthesize_bir(hist, cfg, seed)
