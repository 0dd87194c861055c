"""Convolution kernels: numpy and compiled backends against a naive oracle."""

import numpy as np
import pytest

from robustvad._kernels import load_backend
from tests.oracles import naive_conv2d

BACKENDS = []
for name in ("numpy", "compiled"):
    try:
        BACKENDS.append((name, load_backend(name)))
    except ImportError:
        pass


def _rand_case(rng, n=3, h=9, w=9, c=2, kh=3, kw=3, f=4, stride=2, pad=1):
    x = rng.standard_normal((n, h, w, c))
    wt = rng.standard_normal((kh, kw, c, f))
    b = rng.standard_normal(f)
    return x, wt, b, stride, pad


@pytest.mark.parametrize("name,be", BACKENDS, ids=[n for n, _ in BACKENDS])
def test_forward_matches_naive(name, be, rng):
    for trial in range(5):
        x, wt, b, stride, pad = _rand_case(rng)
        got = be.conv2d_forward(x, wt, b, stride, pad)
        want = naive_conv2d(x, wt, b, stride, pad)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name,be", BACKENDS, ids=[n for n, _ in BACKENDS])
def test_forward_various_shapes(name, be, rng):
    for h, w, stride, pad in [(8, 8, 1, 0), (7, 5, 1, 1), (16, 16, 2, 1), (5, 5, 2, 0)]:
        x, wt, b, _, _ = _rand_case(rng, n=2, h=h, w=w)
        got = be.conv2d_forward(x, wt, b, stride, pad)
        want = naive_conv2d(x, wt, b, stride, pad)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension unavailable")
def test_backends_agree_bitwise_forward(rng):
    x, wt, b, stride, pad = _rand_case(rng, n=4, h=16, w=16, c=3, f=8)
    outs = [be.conv2d_forward(x, wt, b, stride, pad) for _, be in BACKENDS]
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("name,be", BACKENDS, ids=[n for n, _ in BACKENDS])
def test_backward_input_is_transpose_of_forward(name, be, rng):
    """<gy, conv(x)> == <dx, x> for dx = backward_input(gy): adjoint identity."""
    for trial in range(4):
        x, wt, b, stride, pad = _rand_case(rng)
        y = be.conv2d_forward(x, wt, np.zeros_like(b), stride, pad)
        gy = rng.standard_normal(y.shape)
        dx = be.conv2d_backward_input(gy, wt, stride, pad, x.shape[1], x.shape[2])
        assert dx.shape == x.shape
        lhs = float(np.sum(gy * y))
        rhs = float(np.sum(dx * x))
        assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.parametrize("name,be", BACKENDS, ids=[n for n, _ in BACKENDS])
def test_backward_params_matches_finite_difference(name, be, rng):
    x, wt, b, stride, pad = _rand_case(rng, n=2, h=7, w=7)
    gy = rng.standard_normal(be.conv2d_forward(x, wt, b, stride, pad).shape)

    def loss(w_, b_):
        return float(np.sum(gy * naive_conv2d(x, w_, b_, stride, pad)))

    gw, gb = be.conv2d_backward_params(x, gy, wt.shape[0], wt.shape[1], stride, pad)
    assert gw.shape == wt.shape and gb.shape == b.shape
    h = 1e-6
    for index in [(0, 0, 0, 0), (1, 2, 1, 3), (2, 0, 1, 2)]:
        wp, wm = wt.copy(), wt.copy()
        wp[index] += h
        wm[index] -= h
        fd = (loss(wp, b) - loss(wm, b)) / (2 * h)
        assert gw[index] == pytest.approx(fd, rel=1e-4, abs=1e-8)
    bp, bm = b.copy(), b.copy()
    bp[1] += h
    bm[1] -= h
    fd = (loss(wt, bp) - loss(wt, bm)) / (2 * h)
    assert gb[1] == pytest.approx(fd, rel=1e-4, abs=1e-8)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension unavailable")
def test_backends_agree_backward(rng):
    x, wt, b, stride, pad = _rand_case(rng, n=4, h=16, w=16, c=3, f=8)
    y_shape = BACKENDS[0][1].conv2d_forward(x, wt, b, stride, pad).shape
    gy = rng.standard_normal(y_shape)
    dx = [be.conv2d_backward_input(gy, wt, stride, pad, x.shape[1], x.shape[2])
          for _, be in BACKENDS]
    np.testing.assert_allclose(dx[0], dx[1], rtol=1e-12, atol=1e-13)
    gp = [be.conv2d_backward_params(x, gy, wt.shape[0], wt.shape[1], stride, pad)
          for _, be in BACKENDS]
    np.testing.assert_allclose(gp[0][0], gp[1][0], rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(gp[0][1], gp[1][1], rtol=1e-12, atol=1e-13)


def test_default_backend_exposed():
    import robustvad._kernels as K

    assert K.BACKEND in ("auto", "compiled", "numpy")
    out = K.conv2d_forward(np.zeros((1, 4, 4, 1)), np.zeros((3, 3, 1, 2)),
                           np.zeros(2), 1, 1)
    assert out.shape == (1, 4, 4, 2)
