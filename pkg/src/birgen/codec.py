"""BIR containers, the SD-embedding codec, energy-decay analysis and metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

log = logging.getLogger(__name__)

TRAIN_RATE = 16000
IR_LEN = 3968
SD_LEN = 128
STFT_WINDOW = 128
STFT_HOP = 64
LOG_EPS = 1e-8
SD_FLOOR = 1e-8
DIRECT_HALF_WINDOW = 0.0025
CENTER_FREQS = (125, 500, 1000, 2000, 4000)


class MetricError(ValueError):
    pass


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class BIR:
    """Two-channel impulse response."""

    sample_rate: int
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.float64).ravel()
        right = np.asarray(self.right, dtype=np.float64).ravel()
        if left.shape != right.shape:
            raise CodecError("left and right channels differ in length")
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
            raise CodecError("non-finite BIR samples")
        if self.sample_rate <= 0:
            raise CodecError("sample_rate must be positive")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @classmethod
    def from_array(cls, arr, sample_rate):
        """From a (2, n) or (n, 2) array."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or 2 not in arr.shape:
            raise CodecError("expected a two-channel array")
        if arr.shape[0] != 2:
            arr = arr.T
        return cls(int(sample_rate), arr[0], arr[1])

    @property
    def stereo(self) -> np.ndarray:
        return np.stack([self.left, self.right])

    def __len__(self):
        return len(self.left)


@dataclass(frozen=True)
class PreprocessedBIR:
    """Fixed-length training layout: ``ir_len`` normalized samples then ``sd_len`` copies of SD.

    ``data`` has shape (2, ir_len + sd_len).
    """

    data: np.ndarray
    ir_len: int = IR_LEN
    sd_len: int = SD_LEN
    sample_rate: int = TRAIN_RATE

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.shape != (2, self.ir_len + self.sd_len):
            raise CodecError(f"expected shape (2, {self.ir_len + self.sd_len}), got {d.shape}")
        object.__setattr__(self, "data", d)

    @property
    def left(self):
        return self.data[0]

    @property
    def right(self):
        return self.data[1]

    @property
    def ir(self):
        return self.data[:, :self.ir_len]

    @property
    def sd_block(self):
        return self.data[:, self.ir_len:]


# ---------------------------------------------------------------- codec

def resample(x, rate_in, rate_out):
    if rate_in == rate_out:
        return np.asarray(x, dtype=np.float64)
    g = math.gcd(int(rate_in), int(rate_out))
    return resample_poly(x, rate_out // g, rate_in // g, axis=-1)


def joint_sd(stereo) -> float:
    """Root mean square over both channels (one value per BIR, so ILD survives)."""
    return float(np.sqrt(np.mean(np.square(stereo))))


def preprocess_bir(bir: BIR, target_len: int = IR_LEN, sd_len: int = SD_LEN,
                   target_rate: int = TRAIN_RATE) -> PreprocessedBIR:
    """Resample to ``target_rate``, fit to ``target_len``, divide by SD and append the SD block."""
    if len(bir) < 3:
        raise CodecError("BIR needs at least 3 samples")
    x = resample(bir.stereo, bir.sample_rate, target_rate)
    fitted = np.zeros((2, target_len))
    n = min(target_len, x.shape[1])
    fitted[:, :n] = x[:, :n]
    sd = joint_sd(fitted)
    if sd < SD_FLOOR:
        log.warning("silent BIR: SD %.3g floored to %.0e", sd, SD_FLOOR)
        sd = SD_FLOOR
    data = np.concatenate([fitted / sd, np.full((2, sd_len), sd)], axis=1)
    return PreprocessedBIR(data, target_len, sd_len, target_rate)


def decode_sd(p: PreprocessedBIR) -> float:
    sd_hat = p.sd_block.mean(axis=1)
    if np.any(sd_hat <= 0) or not np.all(np.isfinite(sd_hat)):
        raise CodecError("corrupt SD block")
    return float(sd_hat.mean())


def postprocess_bir(p: PreprocessedBIR) -> BIR:
    """Undo the SD normalization: first ``ir_len`` samples times the mean decoded SD."""
    sd = decode_sd(p)
    ir = p.ir * sd
    return BIR(p.sample_rate, ir[0], ir[1])


# ---------------------------------------------------------------- energy decay

def stft_frames(x, window=STFT_WINDOW, hop=STFT_HOP):
    """Hann-windowed frames, shape (..., n_frames, window); no padding."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < window:
        raise MetricError(f"signal shorter than the STFT window ({window})")
    n = 1 + (x.shape[-1] - window) // hop
    idx = hop * np.arange(n)[:, None] + np.arange(window)
    return x[..., idx] * get_window("hann", window)


def ed_relief(channel, window=STFT_WINDOW, hop=STFT_HOP) -> np.ndarray:
    """Energy remaining per STFT frame and bin, shape (frames, window // 2 + 1)."""
    power = np.abs(np.fft.rfft(stft_frames(channel, window, hop), axis=-1)) ** 2
    return np.flip(np.cumsum(np.flip(power, 0), 0), 0)


def _backward_energy(channel):
    e = np.square(np.asarray(channel, dtype=np.float64))
    return np.flip(np.cumsum(np.flip(e)))


def edc(channel, db: bool = False) -> np.ndarray:
    """Schroeder backward integral normalized to 1 at t = 0 (optionally in dB)."""
    x = np.asarray(channel, dtype=np.float64).ravel()
    if x.size == 0:
        raise MetricError("empty signal")
    curve = _backward_energy(x)
    if curve[0] <= 0:
        if db:
            raise MetricError("silent input: EDC undefined in dB")
        log.warning("silent input: EDC is all zeros")
        return np.zeros_like(curve)
    curve = curve / curve[0]
    if db:
        with np.errstate(divide="ignore"):
            return 10 * np.log10(curve)
    return curve


def _decay_fit(channel, sample_rate, hi_db, lo_db):
    curve = edc(channel, db=True)
    if curve.min() > lo_db:
        raise MetricError(f"insufficient decay: EDC never reaches {lo_db} dB")
    start = int(np.argmax(curve <= hi_db))
    stop = int(np.argmax(curve <= lo_db))
    seg = slice(start, max(stop, start + 2))
    t = np.arange(len(curve))[seg] / sample_rate
    slope, _ = np.polyfit(t, curve[seg], 1)
    if slope >= 0:
        raise MetricError("insufficient decay: non-negative EDC slope")
    return slope


def t60(channel, sample_rate) -> float:
    """Reverberation time from a -5..-35 dB line fit, extrapolated to 60 dB."""
    return float(-60.0 / _decay_fit(channel, sample_rate, -5.0, -35.0))


def edt(channel, sample_rate) -> float:
    """Early decay time: 6x the 0..-10 dB decay time of the fitted line."""
    return float(-60.0 / _decay_fit(channel, sample_rate, 0.0, -10.0))


def drr(channel, sample_rate, half_window=DIRECT_HALF_WINDOW) -> float:
    """Direct-to-reverberant ratio in dB; ``inf`` when nothing lies outside the window."""
    x = np.asarray(channel, dtype=np.float64)
    e = x * x
    if e.sum() <= 0:
        raise MetricError("silent input")
    peak = int(np.argmax(np.abs(x)))
    h = int(round(half_window * sample_rate))
    direct = e[max(0, peak - h):peak + h + 1].sum()
    late = e.sum() - direct
    if late <= 0:
        return math.inf
    return float(10 * np.log10(direct / late))


def ed_difference(bir: BIR) -> np.ndarray:
    """Left minus right energy decay in dB, both relative to the BIR's total energy."""
    el, er = _backward_energy(bir.left), _backward_energy(bir.right)
    total = max(el[0] + er[0], 1e-300)
    return 10 * np.log10(el / total + LOG_EPS) - 10 * np.log10(er / total + LOG_EPS)


def center_bins(sample_rate, freqs=CENTER_FREQS, window=STFT_WINDOW) -> np.ndarray:
    """Indices of the STFT bins nearest ``freqs``."""
    bins = np.rint(np.asarray(freqs) * window / sample_rate).astype(int)
    return np.clip(bins, 0, window // 2)


def normalized_log_ed(channel, sample_rate, freqs=CENTER_FREQS, linear=False):
    """Frame-0-normalized ED curves at the STFT bins nearest ``freqs``, shape (len(freqs), frames)."""
    ed = ed_relief(channel)
    bins = center_bins(sample_rate, freqs)
    cur = ed[:, bins].T
    cur = cur / np.maximum(cur[:, :1], 1e-300)
    return cur if linear else np.log(cur + LOG_EPS)


def unit_peak(stereo):
    peak = np.max(np.abs(stereo))
    return stereo / peak if peak > 0 else stereo


# ---------------------------------------------------------------- report

def _absdiff(a, b):
    if a == b or (math.isnan(a) and math.isnan(b)):
        return 0.0
    return abs(a - b)


def _safe(fn, *args):
    try:
        return fn(*args), None
    except MetricError as exc:
        return math.nan, str(exc)


@dataclass
class MetricReport:
    pairs: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)

    def to_dict(self):
        return {"pairs": self.pairs, "mean": self.mean, "flags": self.flags}

    def to_json(self, **kw):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v
        return json.dumps(clean(self.to_dict()), **kw)

    def to_text(self):
        keys = sorted(self.mean)
        width = max(len(k) for k in keys) if keys else 0
        lines = [f"{k:<{width}}  {self.mean[k]:.6g}" for k in keys]
        lines += [f"flag: {f}" for f in self.flags]
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        if self.pairs:
            cols = list(self.pairs[0])
            w = csv.DictWriter(buf, fieldnames=cols)
            w.writeheader()
            w.writerows(self.pairs)
        return buf.getvalue()

    def write_curves_csv(self, path):
        """Long-form CSV ``pair,method,sample,ed_difference_db``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pair", "method", "sample", "ed_difference_db"])
            for (i, method), curve in sorted(self.curves.items()):
                for n, v in enumerate(curve):
                    w.writerow([i, method, n, f"{v:.6g}"])


def metric_report(generated, reference, ed_mode: str = "log") -> MetricReport:
    """Pairwise acoustic errors between two equally long lists of BIRs."""
    generated, reference = list(generated), list(reference)
    if len(generated) != len(reference):
        raise MetricError(f"unpaired sets: {len(generated)} vs {len(reference)} BIRs")
    if ed_mode not in ("log", "linear"):
        raise MetricError(f"unknown ED mode {ed_mode!r}")
    report = MetricReport()
    for i, (g, r) in enumerate(zip(generated, reference)):
        if g.sample_rate != r.sample_rate or len(g) != len(r):
            raise MetricError(f"pair {i}: mismatched sample rate or length")
        fs = g.sample_rate
        row = {"pair": i}
        for ch, gx, rx in (("left", g.left, r.left), ("right", g.right, r.right)):
            for name, fn in (("t60", t60), ("edt", edt), ("drr", drr)):
                gv, ge = _safe(fn, gx, fs)
                rv, re_ = _safe(fn, rx, fs)
                for err in (ge, re_):
                    if err:
                        report.flags.append(f"pair {i} {ch} {name}: {err}")
                if math.isinf(gv) or math.isinf(rv):
                    report.flags.append(f"pair {i} {ch} {name}: direct-only (infinite DRR)")
                row[f"{name}_err_{ch}"] = _absdiff(gv, rv)
            gn = normalized_log_ed(gx, fs, linear=ed_mode == "linear")
            rn = normalized_log_ed(rx, fs, linear=ed_mode == "linear")
            for k, f in enumerate(CENTER_FREQS):
                row[f"ed_mse_{f}_{ch}"] = float(np.mean((gn[k] - rn[k]) ** 2))
            row[f"edc_mae_{ch}"] = float(np.mean(np.abs(_edc_or_zero(gx) - _edc_or_zero(rx))))
        row["bir_mae"] = float(np.mean(np.abs(unit_peak(g.stereo) - unit_peak(r.stereo))))
        gd, rd = ed_difference(g), ed_difference(r)
        report.curves[(i, "generated")] = gd
        report.curves[(i, "reference")] = rd
        row["ed_difference_mae"] = float(np.mean(np.abs(gd - rd)))
        report.pairs.append(row)
    if report.pairs:
        keys = [k for k in report.pairs[0] if k != "pair"]
        for k in keys:
            vals = np.array([p[k] for p in report.pairs], dtype=float)
            report.mean[k] = float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else math.nan
        for f in CENTER_FREQS:
            report.mean[f"ed_mse_{f}"] = (report.mean[f"ed_mse_{f}_left"]
                                          + report.mean[f"ed_mse_{f}_right"]) / 2
        for name in ("t60_err", "edt_err", "drr_err", "edc_mae"):
            report.mean[name] = (report.mean[f"{name}_left"] + report.mean[f"{name}_right"]) / 2
    return report


def _edc_or_zero(x):
    e = _backward_energy(x)
    return e / e[0] if e[0] > 0 else e


# ---------------------------------------------------------------- WAV I/O

def write_wav(path, bir_or_array, sample_rate=None):
    """32-bit float WAV; accepts a BIR or a (channels, n) array."""
    if isinstance(bir_or_array, BIR):
        data, sample_rate = bir_or_array.stereo, bir_or_array.sample_rate
    else:
        data = np.atleast_2d(np.asarray(bir_or_array, dtype=np.float64))
    wavfile.write(str(path), int(sample_rate), np.ascontiguousarray(data.T, dtype=np.float32))
    return Path(path)


def read_wav(path):
    """Returns ``(sample_rate, data)`` with ``data`` of shape (channels, n), float64 in [-1, 1]."""
    fs, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        data = (data.astype(np.float64) - (info.max + info.min + 1) / 2) / (info.max + 1)
        if info.min == 0:  # unsigned 8-bit
            data *= 2
    data = np.asarray(data, dtype=np.float64)
    return int(fs), np.atleast_2d(data.T) if data.ndim == 2 else data[None, :]


def read_bir(path) -> BIR:
    fs, data = read_wav(path)
    if data.shape[0] != 2:
        raise CodecError(f"{path}: expected 2 channels, got {data.shape[0]}")
    return BIR(fs, data[0], data[1])
