import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birgen.codec import BIR, read_wav, write_wav
from birgen.renderer import (RenderError, WalkthroughSpec, convolve, frame_weights, load_dry,
                             load_walkthrough, render_walkthrough, save_walkthrough)

FS = 16000


def naive_convolve(x, h):
    out = np.zeros(len(x) + len(h) - 1)
    for i, v in enumerate(x):
        out[i:i + len(h)] += v * h
    return out


def random_bir(seed, n=200):
    rng = np.random.default_rng(seed)
    return BIR(FS, rng.normal(size=n) * np.exp(-np.arange(n) / 40), rng.normal(size=n) * 0.5)


def static_spec(pos=(1.0, 1.0, 1.0), sources=((2.0, 1.0, 1.0),), **kw):
    src = [{"position": list(s), "audio": f"s{i}.wav"} for i, s in enumerate(sources)]
    return WalkthroughSpec("room.json", src, [0.0, 1.0], [pos, pos], **kw)


def delta_bir(k=0, n=8):
    d = np.zeros(n)
    d[k] = 1.0
    return BIR(FS, d, d)


# ---------------------------------------------------------------- convolve

def test_delta_identity():
    x = np.random.default_rng(0).normal(size=100)
    y = convolve(x, delta_bir(0, 1))
    np.testing.assert_allclose(y, np.stack([x, x]), atol=1e-12)


@pytest.mark.parametrize("k", [1, 5, 17])
def test_delta_shift(k):
    x = np.random.default_rng(k).normal(size=64)
    y = convolve(x, delta_bir(k, 20))
    assert y.shape == (2, 64 + 20 - 1)
    np.testing.assert_allclose(y[0, k:k + 64], x, atol=1e-12)
    np.testing.assert_allclose(y[1, :k], 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_matches_naive(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=rng.integers(1, 400))
    m = rng.integers(1, 300)
    b = BIR(FS, rng.normal(size=m), rng.normal(size=m))
    y = convolve(x, b)
    np.testing.assert_allclose(y[0], naive_convolve(x, b.left), atol=1e-6)
    np.testing.assert_allclose(y[1], naive_convolve(x, b.right), atol=1e-6)


def test_resamples_dry():
    x = np.sin(2 * np.pi * 200 * np.arange(8000) / 8000)
    y = convolve(x, delta_bir(0, 1), dry_rate=8000)
    assert y.shape[1] == 16000


def test_empty_inputs():
    with pytest.raises(RenderError, match="empty"):
        convolve([], delta_bir())


# ---------------------------------------------------------------- crossfade weights

@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3000), st.integers(1, 400), st.floats(0, 1))
def test_partition_of_unity(n, period, frac):
    w = frame_weights(n, period, int(frac * period))
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)


def test_weights_linear_ramp():
    # fade-out of frame 0 is linear across 80..120 and mirrors the fade-in of frame 1
    w = frame_weights(400, 100, 40)
    seg = w[0, 80:121]
    np.testing.assert_allclose(seg, np.linspace(1, 0, 41), atol=1e-12)
    np.testing.assert_allclose(np.diff(seg), -1 / 40, atol=1e-12)
    np.testing.assert_allclose(seg + w[1, 80:121], 1.0, atol=1e-12)


def test_crossfade_longer_than_period():
    with pytest.raises(RenderError, match="crossfade"):
        frame_weights(100, 10, 11)


# ---------------------------------------------------------------- walkthrough spec

def test_timestamps_strictly_increasing():
    with pytest.raises(RenderError, match="increasing"):
        WalkthroughSpec("s", [], [0.0, 0.0], [[0, 0, 0], [1, 0, 0]])


def test_listener_interpolation_clamped():
    spec = WalkthroughSpec("s", [], [1.0, 3.0], [[0, 0, 0], [2, 4, 0]])
    np.testing.assert_allclose(spec.listener_at([0.0, 2.0, 9.0]),
                               [[0, 0, 0], [1, 2, 0], [2, 4, 0]])


def test_json_round_trip(tmp_path):
    spec = static_spec(sources=((2, 1, 1), (3, 2, 1)), bir_update_rate=20, crossfade_ms=25)
    save_walkthrough(spec, tmp_path / "w.json")
    back = load_walkthrough(tmp_path / "w.json")
    assert back.scene == str(tmp_path / "room.json")
    assert back.sources[1].audio == str(tmp_path / "s1.wav")
    np.testing.assert_array_equal(back.positions, spec.positions)
    assert (back.bir_update_rate, back.crossfade_ms) == (20, 25)


def test_malformed_json(tmp_path):
    (tmp_path / "w.json").write_text('{"scene": "x"}')
    with pytest.raises(RenderError, match="malformed"):
        load_walkthrough(tmp_path / "w.json")


def test_dry_downmix_warns(tmp_path, caplog):
    write_wav(tmp_path / "st.wav", np.array([[1.0, 0.5], [0.0, 0.5]]) * 0.5, FS)
    with caplog.at_level(logging.WARNING):
        fs, x = load_dry(tmp_path / "st.wav")
    assert "downmixed" in caplog.text
    np.testing.assert_allclose(x, [0.25, 0.25])


# ---------------------------------------------------------------- render

def fixed_provider(bir):
    return lambda src, lst: bir


@pytest.mark.parametrize("rate,xfade", [(10, 100), (10, 0), (25, 13)])
def test_static_listener_equals_convolve(rate, xfade):
    x = np.random.default_rng(1).normal(size=FS // 2) * 0.1
    b = random_bir(2)
    out = render_walkthrough(static_spec(bir_update_rate=rate, crossfade_ms=xfade),
                             fixed_provider(b), dry=[x], dry_rate=FS, normalize=False)
    np.testing.assert_allclose(out.audio, convolve(x, b), atol=1e-10)


def test_co_located_sources_double():
    x = np.random.default_rng(3).normal(size=5000) * 0.1
    b = random_bir(4)
    one = render_walkthrough(static_spec(), fixed_provider(b), dry=[x], dry_rate=FS,
                             normalize=False).audio
    two = render_walkthrough(static_spec(sources=((2, 1, 1), (2, 1, 1))), fixed_provider(b),
                             dry=[x, x], dry_rate=FS, normalize=False).audio
    np.testing.assert_allclose(two, 2 * one, atol=1e-10)


def distance_provider(src, lst):
    """Direct path only: 1/d gain and the propagation delay, identical ears."""
    d = float(np.linalg.norm(np.asarray(src) - np.asarray(lst)))
    h = np.zeros(400)
    h[int(round(d / 343.0 * FS))] = 1.0 / max(d, 0.1)
    return BIR(FS, h, h)


def moving_spec(sources, t_end=2.0):
    src = [{"position": list(s), "audio": "x.wav"} for s in sources]
    return WalkthroughSpec("r", src, [0.0, t_end], [[0.5, 1.0, 1.2], [4.5, 1.0, 1.2]])


def test_linearity_moving_listener():
    rng = np.random.default_rng(5)
    xs = [rng.normal(size=FS) * 0.1 for _ in range(2)]
    srcs = [(1.0, 2.5, 1.2), (3.5, 0.3, 1.5)]
    mix = render_walkthrough(moving_spec(srcs), distance_provider, dry=xs, dry_rate=FS,
                             normalize=False).audio
    parts = [render_walkthrough(moving_spec([s]), distance_provider, dry=[x], dry_rate=FS,
                                normalize=False).audio for s, x in zip(srcs, xs)]
    np.testing.assert_allclose(mix, parts[0] + parts[1], atol=1e-6)


def test_rms_peaks_at_closest_approach():
    # listener walks x = 0.5 -> 4.5 over 2 s, closest to the source at x = 2.5 (t = 1 s)
    x = np.random.default_rng(6).normal(size=2 * FS) * 0.05
    out = render_walkthrough(moving_spec([(2.5, 2.0, 1.2)]), distance_provider, dry=[x],
                             dry_rate=FS, normalize=False).audio
    period = FS // 10
    rms = [np.sqrt(np.mean(out[0, k * period:(k + 1) * period] ** 2)) for k in range(20)]
    assert abs(np.argmax(rms) - 9.5) <= 1.0
    # energy follows 1/d^2 to within the frame-noise spread
    centres = (np.arange(20) + 0.5) * 0.1
    d = np.hypot(0.5 + 2.0 * centres - 2.5, 1.0)
    ratio = np.array(rms) * d
    assert np.std(ratio) / np.mean(ratio) < 0.15


def test_clipping_normalizes_and_flags():
    x = np.ones(2000)
    out = render_walkthrough(static_spec(), fixed_provider(delta_bir(0, 4)), dry=[3 * x],
                             dry_rate=FS)
    assert out.normalized and out.flags
    assert np.max(np.abs(out.audio)) == pytest.approx(10 ** (-1 / 20))


def test_quiet_mix_untouched():
    x = 0.1 * np.ones(2000)
    out = render_walkthrough(static_spec(), fixed_provider(delta_bir(0, 4)), dry=[x], dry_rate=FS)
    assert not out.normalized and out.gain == 1.0


def test_provider_failure_wrapped():
    def bad(src, lst):
        raise RuntimeError("boom")

    with pytest.raises(RenderError, match="boom"):
        render_walkthrough(static_spec(), bad, dry=[np.ones(10)], dry_rate=FS)


def test_path_outside_scene():
    with pytest.raises(RenderError, match="outside"):
        render_walkthrough(static_spec(pos=(9, 1, 1)), fixed_provider(delta_bir()),
                           dry=[np.ones(10)], dry_rate=FS, bounds=([0, 0, 0], [5, 4, 3]))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(50, 4000))
def test_output_finite(seed, n):
    x = np.random.default_rng(seed).normal(size=n) * 1e3
    out = render_walkthrough(moving_spec([(2.0, 2.0, 1.0)], t_end=0.3), distance_provider,
                             dry=[x], dry_rate=FS)
    assert np.all(np.isfinite(out.audio))


def test_reads_dry_files(tmp_path):
    x = 0.1 * np.random.default_rng(7).normal(size=3000)
    write_wav(tmp_path / "s0.wav", x[None, :], FS)
    spec = static_spec()
    spec.sources[0].audio = str(tmp_path / "s0.wav")
    out = render_walkthrough(spec, fixed_provider(random_bir(8)), normalize=False)
    np.testing.assert_allclose(out.audio, convolve(read_wav(tmp_path / "s0.wav")[1][0],
                                                   random_bir(8)), atol=1e-10)
