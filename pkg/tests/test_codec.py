import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from birgen.codec import (BIR, CodecError, MetricError, PreprocessedBIR, center_bins,
                          decode_sd, drr, ed_difference, ed_relief, edc, edt, metric_report,
                          postprocess_bir, preprocess_bir, read_bir, read_wav, stft_frames, t60,
                          write_wav)

FS = 16000


def exp_noise(t60_s, n=FS, fs=FS, seed=0):
    """Noise under an exp(-t/tau) envelope with tau = T60 / (3 ln 10)."""
    tau = t60_s / (3 * math.log(10))
    t = np.arange(n) / fs
    return np.random.default_rng(seed).normal(size=n) * np.exp(-t / tau)


def bir16(left, right=None):
    return BIR(FS, left, left if right is None else right)


# ---------------------------------------------------------------- SD layout

def test_resample_and_truncate():
    rng = np.random.default_rng(0)
    p = preprocess_bir(BIR(48000, rng.normal(size=12000), rng.normal(size=12000)))
    assert p.data.shape == (2, 4096)
    assert (p.ir_len, p.sd_len, p.sample_rate) == (3968, 128, 16000)


def test_unit_sd_passthrough():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3968))
    x /= np.sqrt(np.mean(x ** 2))
    p = preprocess_bir(BIR(FS, x[0], x[1]))
    np.testing.assert_allclose(p.ir, x, rtol=1e-12)
    np.testing.assert_allclose(p.sd_block, 1.0, rtol=1e-12)


@pytest.mark.parametrize("a", [0.3, 1.0, 7.5])
def test_impulse_sd_closed_form(a):
    left = np.zeros(3968)
    left[0] = a  # one-hot pair: the right channel stays silent
    p = preprocess_bir(BIR(FS, left, np.zeros(3968)))
    np.testing.assert_allclose(p.sd_block, a / math.sqrt(2 * 3968), rtol=1e-12)


def test_sd_block_constant():
    p = preprocess_bir(bir16(exp_noise(0.4, 5000)))
    assert np.ptp(p.sd_block) < 1e-6 and p.sd_block[0, 0] > 0


def test_silent_input_floor(caplog):
    with caplog.at_level(logging.WARNING):
        p = preprocess_bir(bir16(np.zeros(4000)))
    assert "silent" in caplog.text
    np.testing.assert_array_equal(p.sd_block, 1e-8)


def test_short_input():
    with pytest.raises(CodecError):
        preprocess_bir(bir16(np.zeros(2)))


@settings(max_examples=25, deadline=None)
@given(st.integers(3968, 6000), st.floats(1e-3, 1e3), st.integers(0, 2 ** 31))
def test_round_trip(n, scale, seed):
    rng = np.random.default_rng(seed)
    x = scale * rng.normal(size=(2, n))
    back = postprocess_bir(preprocess_bir(BIR(FS, x[0], x[1])))
    ref = x[:, :3968]
    assert np.linalg.norm(back.stereo - ref) / np.linalg.norm(ref) < 1e-6
    assert back.sample_rate == FS and len(back) == 3968


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 100))
def test_joint_sd_preserves_ild(seed, gain):
    rng = np.random.default_rng(seed)
    left = rng.normal(size=3968)
    right = gain * rng.normal(size=3968)
    p = preprocess_bir(BIR(FS, left, right))
    np.testing.assert_allclose(p.left[:10] / p.right[:10], left[:10] / right[:10], rtol=1e-9)


def test_sd_perturbation_recovers_gain():
    x = exp_noise(0.5, 3968)
    p = preprocess_bir(bir16(x, 0.5 * x))
    noisy = p.data.copy()
    noisy[:, 3968:] *= 1 + 0.01 * np.random.default_rng(2).uniform(-1, 1, size=(2, 128))
    sd_true = decode_sd(p)
    assert decode_sd(PreprocessedBIR(noisy)) == pytest.approx(sd_true, rel=0.01)


def test_zero_normalized_part():
    data = np.zeros((2, 4096))
    data[:, 3968:] = 2.0
    np.testing.assert_array_equal(postprocess_bir(PreprocessedBIR(data)).stereo, 0.0)


def test_corrupt_sd_block():
    with pytest.raises(CodecError, match="corrupt SD block"):
        postprocess_bir(PreprocessedBIR(np.zeros((2, 4096))))


# ---------------------------------------------------------------- ED / EDC

def test_ed_frame_zero_is_total():
    x = np.random.default_rng(3).normal(size=1024)
    power = np.abs(np.fft.rfft(stft_frames(x), axis=-1)) ** 2
    np.testing.assert_allclose(ed_relief(x)[0], power.sum(axis=0), rtol=1e-12)


def test_ed_white_noise_linear():
    x = np.random.default_rng(4).normal(size=64 * 400)
    total = ed_relief(x).sum(axis=1)
    frames = np.arange(len(total))
    fit = np.polyval(np.polyfit(frames, total, 1), frames)
    assert np.max(np.abs(total - fit)) < 0.02 * total[0]


def test_ed_zero_and_short():
    np.testing.assert_array_equal(ed_relief(np.zeros(256)), 0.0)
    with pytest.raises(MetricError):
        ed_relief(np.zeros(100))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_ed_non_increasing(seed):
    ed = ed_relief(np.random.default_rng(seed).normal(size=700))
    assert np.all(np.diff(ed, axis=0) <= 1e-9 * ed[0])


def test_edc_impulse():
    x = np.zeros(10)
    x[0] = 3.0
    np.testing.assert_array_equal(edc(x), [1.0] + [0.0] * 9)


def test_edc_exponential_slope():
    tau = 0.05
    t = np.arange(4000) / FS
    curve = np.log(edc(np.exp(-t / tau)))
    slope = np.polyfit(t[:2000], curve[:2000], 1)[0]
    assert slope == pytest.approx(-2 / tau, rel=1e-3)


def test_edc_trailing_zeros():
    x = exp_noise(0.3, 2000)
    np.testing.assert_allclose(edc(np.r_[x, np.zeros(500)])[:2000], edc(x), rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1e3, 1e3).filter(lambda a: abs(a) > 1e-3))
def test_edc_scale_invariant(a):
    x = exp_noise(0.3, 1000, seed=5)
    np.testing.assert_allclose(edc(a * x), edc(x), rtol=1e-10)


def test_edc_silent():
    with pytest.raises(MetricError, match="silent"):
        edc(np.zeros(5), db=True)


# ---------------------------------------------------------------- T60 / EDT / DRR

@pytest.mark.parametrize("target", [0.1, 0.3, 0.5, 1.0, 2.0])
def test_t60_exact_exponential(target):
    tau = target / (3 * math.log(10))
    t = np.arange(int(2.5 * target * FS)) / FS
    assert t60(np.exp(-t / tau), FS) == pytest.approx(target, rel=0.05)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_t60_noise_shaped(seed):
    assert t60(exp_noise(0.5, seed=seed), FS) == pytest.approx(0.5, rel=0.05)


def test_edt_exponential():
    tau = 0.4 / (3 * math.log(10))
    t = np.arange(FS) / FS
    assert edt(np.exp(-t / tau), FS) == pytest.approx(0.4, rel=0.05)


def test_insufficient_decay():
    with pytest.raises(MetricError, match="insufficient decay"):
        t60(np.ones(1000), FS)


def test_drr_impulse_infinite():
    x = np.zeros(1000)
    x[100] = 1.0
    assert drr(x, FS) == math.inf


def test_drr_equal_energy():
    x = np.zeros(4000)
    x[1000] = 1.0
    x[[2000, 2500, 3000, 3500]] = 0.5  # unit energy outside the +-2.5 ms window
    assert drr(x, FS) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- report

def test_center_bins():
    assert center_bins(FS).tolist() == [1, 4, 8, 16, 32]


def test_report_identity_zero():
    b = BIR(FS, exp_noise(0.4, seed=1), exp_noise(0.3, seed=2))
    rep = metric_report([b], [b])
    for k, v in rep.pairs[0].items():
        if k != "pair":
            assert v == 0.0, k


def test_report_scale_normalized_mae():
    b = BIR(FS, exp_noise(0.4, seed=1), exp_noise(0.3, seed=2))
    c = BIR(FS, 2 * b.left, 2 * b.right)
    rep = metric_report([c], [b])
    assert rep.pairs[0]["bir_mae"] == pytest.approx(0.0, abs=1e-15)
    assert rep.pairs[0]["edc_mae_left"] == pytest.approx(0.0, abs=1e-15)


def test_report_t60_difference():
    t1, t2 = 0.3, 0.6
    a = BIR(FS, exp_noise(t1, seed=3), exp_noise(t1, seed=4))
    b = BIR(FS, exp_noise(t2, seed=5), exp_noise(t2, seed=6))
    rep = metric_report([a], [b])
    # |dT60| = 3 ln10 |tau1 - tau2| = |t1 - t2|
    assert rep.mean["t60_err"] == pytest.approx(abs(t1 - t2), rel=0.05)


def test_report_flags_direct_only():
    x = np.zeros(FS)
    x[50] = 1.0
    rep = metric_report([bir16(x)], [bir16(x)])
    assert any("infinite DRR" in f for f in rep.flags)


def test_report_unpaired():
    b = bir16(exp_noise(0.3))
    with pytest.raises(MetricError, match="unpaired"):
        metric_report([b, b], [b])
    with pytest.raises(MetricError, match="mismatched"):
        metric_report([b], [bir16(exp_noise(0.3, n=FS // 2))])


def test_report_formats(tmp_path):
    b = BIR(FS, exp_noise(0.4, seed=1), exp_noise(0.3, seed=2))
    c = BIR(FS, exp_noise(0.5, seed=7), exp_noise(0.2, seed=8))
    rep = metric_report([c], [b])
    d = json.loads(rep.to_json())
    assert set(d) == {"pairs", "mean", "flags"}
    assert "t60_err" in rep.to_text()
    assert rep.to_csv().splitlines()[0].startswith("pair,")
    rep.write_curves_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().startswith("pair,method,sample,ed_difference_db")


def test_ed_difference_symmetric():
    x = exp_noise(0.3)
    assert np.all(ed_difference(bir16(x, x)) == 0.0)
    d = ed_difference(bir16(x, 0.5 * x))
    assert d[0] == pytest.approx(10 * math.log10(4), rel=1e-6)


# ---------------------------------------------------------------- WAV

def test_wav_round_trip(tmp_path):
    b = BIR(FS, 0.5 * exp_noise(0.3, 800), 0.25 * exp_noise(0.2, 800, seed=1))
    write_wav(tmp_path / "b.wav", b)
    back = read_bir(tmp_path / "b.wav")
    np.testing.assert_allclose(back.stereo, b.stereo, atol=1e-7)
    assert back.sample_rate == FS


def test_read_int16_wav(tmp_path):
    wavfile.write(tmp_path / "i.wav", 8000, np.array([[16384, -32768]], dtype=np.int16))
    fs, data = read_wav(tmp_path / "i.wav")
    assert fs == 8000
    np.testing.assert_allclose(data[:, 0], [0.5, -1.0])


def test_read_bir_needs_two_channels(tmp_path):
    write_wav(tmp_path / "m.wav", np.zeros((1, 10)), FS)
    with pytest.raises(CodecError, match="2 channels"):
        read_bir(tmp_path / "m.wav")
