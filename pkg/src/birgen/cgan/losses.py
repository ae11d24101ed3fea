"""Generator and discriminator objectives on batched (B, 2, L) layouts.

Each loss accepts tensors, arrays or ``PreprocessedBIR`` objects. A tensor
``gen`` yields a tensor (for backprop); anything else yields a float.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.signal import get_window

from .. import autodiff as ad
from ..codec import (IR_LEN, LOG_EPS, STFT_HOP, STFT_WINDOW, TRAIN_RATE, PreprocessedBIR,
                     center_bins, ed_relief)

PROB_CLAMP = 1e-7
# ED loss bins: nearest STFT bins to the octave centre frequencies
ED_BINS = tuple(int(b) for b in center_bins(TRAIN_RATE))


class LossError(ValueError):
    pass


def _batch(x):
    """(tensor-or-array (B, 2, L), ir_len hint)."""
    if isinstance(x, PreprocessedBIR):
        return x.data[None], x.ir_len
    if isinstance(x, ad.Tensor):
        return (x if x.ndim == 3 else ad.reshape(x, (1,) + x.shape)), None
    a = np.asarray(x, dtype=np.float64)
    return (a if a.ndim == 3 else a[None]), None


def _pair(gen, ref, ir_len):
    g, hint_g = _batch(gen)
    r, hint_r = _batch(ref)
    r = r.data if isinstance(r, ad.Tensor) else r
    if g.shape != r.shape:
        raise LossError(f"length mismatch: {g.shape} vs {r.shape}")
    ir = ir_len or hint_g or hint_r or IR_LEN
    return g, r, ir, isinstance(gen, ad.Tensor)


def _out(t, as_tensor):
    return t if as_tensor else float(t.data)


def loss_mse(gen, ref, ir_len=None):
    """Mean squared difference over every sample, SD block included."""
    g, r, _, keep = _pair(gen, ref, ir_len)
    d = ad.as_tensor(g) - r
    return _out(ad.tmean(d * d), keep)


def loss_bir(gen, ref, ir_len=None):
    """Mean squared mismatch of the left-minus-right difference over the IR part."""
    g, r, ir, keep = _pair(gen, ref, ir_len)
    g = ad.as_tensor(g)
    dg = g[:, 0, :ir] - g[:, 1, :ir]
    dr = r[:, 0, :ir] - r[:, 1, :ir]
    e = dg - dr
    return _out(ad.tmean(e * e), keep)


@lru_cache(maxsize=4)
def _dft(window):
    n = np.arange(window)[:, None]
    k = np.arange(window // 2 + 1)[None, :]
    ang = 2.0 * np.pi * n * k / window
    w = get_window("hann", window)[:, None]
    return w * np.cos(ang), -w * np.sin(ang)


def ed_relief_t(x, ir_len, window=STFT_WINDOW, hop=STFT_HOP, bins=None):
    """Differentiable twin of ``codec.ed_relief`` for (B, 2, L) tensors -> (B, 2, frames, bins).

    ``bins`` restricts the DFT to those columns.
    """
    if window != 2 * hop:
        raise LossError("framing assumes window == 2 * hop")
    x = ad.as_tensor(x)
    n_frames = 1 + (ir_len - window) // hop
    B = x.shape[0]
    blocks = ad.reshape(x[:, :, :hop * (n_frames + 1)], (B, 2, n_frames + 1, hop))
    frames = ad.concat([blocks[:, :, :-1], blocks[:, :, 1:]], axis=3)
    cos, sin = _dft(window)
    if bins is not None:
        cos, sin = cos[:, list(bins)], sin[:, list(bins)]
    re, im = frames @ cos, frames @ sin
    return ad.reverse_cumsum(re * re + im * im, axis=2)


def loss_ed(gen, ref, ir_len=None, eps=LOG_EPS, bins=ED_BINS):
    """Mean squared log-ratio of ED reliefs over channels, ``bins`` and frames.

    ``bins=None`` uses every STFT bin.
    """
    g, r, ir, keep = _pair(gen, ref, ir_len)

    def relief(x):
        e = np.stack([[ed_relief(ch[:ir]) for ch in b] for b in x])
        return e if bins is None else e[..., list(bins)]
    ed_r = relief(r)
    # plain arrays go through the codec on both sides so loss_ed(x, x) is exactly 0
    ed_g = ed_relief_t(g, ir, bins=bins) if keep else ad.Tensor(relief(g))
    d = ad.log(ed_g + eps) - np.log(ed_r + eps)
    return _out(ad.tmean(d * d), keep)


def clamp_prob(p):
    return ad.clip(ad.as_tensor(p), PROB_CLAMP, 1.0 - PROB_CLAMP)


def cgan_term(d_fake, non_saturating=False):
    fake = clamp_prob(d_fake)
    return -ad.log(fake) if non_saturating else ad.log(1.0 - fake)


def gan_terms(d_real, d_fake, non_saturating=False):
    """``(L_CGAN, L_D)`` per element.

    ``L_CGAN = log(1 - D(fake))`` is minimized by the generator (or
    ``-log D(fake)`` when ``non_saturating``); ``L_D = log D(real) +
    log(1 - D(fake))`` is maximized by the discriminator.
    """
    tensor_in = isinstance(d_real, ad.Tensor) or isinstance(d_fake, ad.Tensor)
    l_cgan = cgan_term(d_fake, non_saturating)
    l_d = ad.log(clamp_prob(d_real)) + ad.log(1.0 - clamp_prob(d_fake))
    if tensor_in:
        return l_cgan, l_d
    return float(np.mean(l_cgan.data)), float(np.mean(l_d.data))


def generator_objective(gen, ref, d_fake, weights=(1.0, 1.0, 1.0), ir_len=None,
                        non_saturating=False):
    """Batch mean of ``L_CGAN + l_bir L_BIR + l_ed L_ED + l_mse L_MSE``.

    Returns ``(total, terms)`` where ``terms`` maps each term name to its value.
    """
    l_bir_w, l_ed_w, l_mse_w = weights
    if isinstance(gen, PreprocessedBIR):
        gen, ir_len = gen.data[None], ir_len or gen.ir_len
    gen_t = ad.as_tensor(gen)
    l_cgan = ad.tmean(cgan_term(d_fake, non_saturating))
    lb = loss_bir(gen_t, ref, ir_len)
    le = loss_ed(gen_t, ref, ir_len)
    lm = loss_mse(gen_t, ref, ir_len)
    total = l_cgan + lb * l_bir_w + le * l_ed_w + lm * l_mse_w
    terms = {"L_CGAN": float(l_cgan.data), "L_BIR": float(lb.data), "L_ED": float(le.data),
             "L_MSE": float(lm.data)}
    return total, terms
