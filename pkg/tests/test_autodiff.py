import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from birgen import autodiff as ad


def numeric_grad(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = fn()
        x[i] = old - h
        down = fn()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def check(build, *shapes, seed=0, positive=False, rtol=1e-6):
    """Compare ``backward`` with central differences for every input of ``build``."""
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    params = [ad.parameter(a) for a in arrays]
    ad.tsum(build(*params)).backward()
    for p in params:
        num = numeric_grad(lambda: float(np.sum(build(*params).data)), p.data)
        np.testing.assert_allclose(p.grad, num, rtol=rtol, atol=1e-8)


UNARY = {
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "neg": lambda a: -a,
    "square": lambda a: a * a,
    "power": lambda a: ad.power(a, 3.0),
    "mean_axis": lambda a: ad.tmean(a, axis=1),
    "max_axis": lambda a: ad.tmax(a, axis=0),
    "reshape": lambda a: ad.reshape(a, (3, 4)) * np.arange(12.0).reshape(3, 4),
    "transpose": lambda a: ad.transpose(a) * np.arange(12.0).reshape(4, 3),
    "slice": lambda a: a[1:, ::2] * 2.0,
    "fancy": lambda a: a[[0, 0, 2]] * 3.0,
    "reverse_cumsum": lambda a: ad.reverse_cumsum(a, axis=1) * np.arange(12.0).reshape(3, 4),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    check(UNARY[name], (3, 4))


@pytest.mark.parametrize("name,fn", [("log", ad.log), ("sqrt", lambda a: ad.power(a, 0.5))])
def test_positive_domain_gradients(name, fn):
    check(fn, (3, 4), positive=True)


def test_relu_and_clip_away_from_kinks():
    check(ad.relu, (3, 4), seed=3)
    check(lambda a: ad.clip(a, -0.5, 0.5), (3, 4), seed=4)


def test_broadcast_add_mul():
    check(lambda a, b: a * b + b, (3, 4), (4,))
    check(lambda a, b: a + b, (2, 1, 4), (3, 1))


def test_matmul_and_concat():
    check(lambda a, b: a @ b, (3, 4), (4, 2))
    check(lambda a, b: ad.concat([a, b], axis=1) * np.arange(14.0).reshape(2, 7), (2, 3), (2, 4))
    check(lambda a: ad.broadcast_to(a, (3, 2, 4)) * np.arange(24.0).reshape(3, 2, 4), (2, 4))


def test_batched_matmul():
    check(lambda a, b: a @ b, (2, 3, 4), (4, 5))


def test_spmm():
    S = sp.random(5, 4, density=0.5, random_state=0, format="csr")
    check(lambda x: ad.spmm(S, x) * np.arange(15.0).reshape(5, 3), (4, 3))


# ---------------------------------------------------------------- convolutions

def conv1d_loops(x, w, b, stride, padding):
    B, C, L = x.shape
    O, _, K = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    Lout = (L + 2 * padding - K) // stride + 1
    out = np.zeros((B, O, Lout))
    for n in range(B):
        for o in range(O):
            for t in range(Lout):
                out[n, o, t] = b[o] + np.sum(w[o] * xp[n, :, t * stride:t * stride + K])
    return out


def conv_transpose_loops(x, w, b, stride, padding):
    B, C, L = x.shape
    _, O, K = w.shape
    full = np.zeros((B, O, (L - 1) * stride + K))
    for n in range(B):
        for c in range(C):
            for i in range(L):
                for k in range(K):
                    full[n, :, i * stride + k] += x[n, c, i] * w[c, :, k]
    Lout = full.shape[2] - 2 * padding
    return full[:, :, padding:padding + Lout] + b[None, :, None]


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (2, 0), (3, 2)])
def test_conv1d_matches_loops(stride, padding):
    rng = np.random.default_rng(stride + padding)
    x, w, b = rng.normal(size=(2, 3, 11)), rng.normal(size=(4, 3, 4)), rng.normal(size=4)
    got = ad.conv1d(x, w, b, stride, padding).data
    np.testing.assert_allclose(got, conv1d_loops(x, w, b, stride, padding), atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(2, 1), (2, 0), (1, 1), (3, 1)])
def test_conv_transpose_matches_loops(stride, padding):
    rng = np.random.default_rng(10 + stride)
    x, w, b = rng.normal(size=(2, 3, 6)), rng.normal(size=(3, 5, 4)), rng.normal(size=5)
    got = ad.conv_transpose1d(x, w, b, stride, padding).data
    np.testing.assert_allclose(got, conv_transpose_loops(x, w, b, stride, padding), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(3, 9))
def test_conv_transpose_is_adjoint(seed, L):
    # <convT(x; w), y> == <x, conv(y; w)> with matching stride and padding
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 3, L))
    w = rng.normal(size=(3, 2, 4))
    up = ad.conv_transpose1d(x, w, None, 2, 1).data
    y = rng.normal(size=up.shape)
    down = ad.conv1d(y, w, None, 2, 1).data
    assert np.sum(up * y) == pytest.approx(np.sum(x * down), rel=1e-10, abs=1e-10)


def test_conv_gradients():
    check(lambda x, w, b: ad.conv1d(x, w, b, 2, 1), (2, 3, 8), (4, 3, 4), (4,))
    check(lambda x, w, b: ad.conv_transpose1d(x, w, b, 2, 1), (2, 3, 5), (3, 2, 4), (2,))


# ---------------------------------------------------------------- tape behaviour

def test_gradient_accumulates_over_reuse():
    a = ad.parameter([2.0, -1.0])
    ad.tsum(a * a + a).backward()
    np.testing.assert_allclose(a.grad, 2 * a.data + 1)


def test_no_grad_builds_no_tape():
    a = ad.parameter([1.0, 2.0])
    with ad.no_grad():
        out = a * a
    assert not out.requires_grad


def test_record_kinks_collects_masks():
    a = ad.parameter([-1.0, 2.0])
    with ad.record_kinks() as masks:
        ad.relu(a)
        ad.clip(a, -0.5, 0.5)
    assert len(masks) == 2
    np.testing.assert_array_equal(np.asarray(masks[0]).ravel(), [False, True])


def test_max_ties_split_gradient_once():
    a = ad.parameter([[1.0, 3.0, 3.0]])
    ad.tsum(ad.tmax(a, axis=1)).backward()
    assert a.grad.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------- optimizer

def test_rmsprop_hand_computed():
    p = ad.parameter([1.0, -2.0])
    opt = ad.RMSprop([p], lr=0.1, alpha=0.9, eps=1e-8)
    sq = np.zeros(2)
    expect = p.data.copy()
    for _ in range(3):
        opt.zero_grad()
        ad.tsum(p * p).backward()
        g = 2 * expect
        sq = 0.9 * sq + 0.1 * g * g
        expect = expect - 0.1 * g / (np.sqrt(sq) + 1e-8)
        opt.step()
    np.testing.assert_allclose(p.data, expect, rtol=1e-14)


def test_rmsprop_skips_missing_grad():
    p = ad.parameter([1.0])
    opt = ad.RMSprop([p])
    opt.step()
    assert p.data[0] == 1.0
