import numpy as np
import pytest
from scipy.signal import peak_prominences as scipy_prominences

from peakcgan import _npkernels, kernels


def brute_conv(x, w, stride, padding):
    n, c, t = x.shape
    o, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    t_out = (t + 2 * padding - k) // stride + 1
    y = np.zeros((n, o, t_out))
    for a in range(n):
        for b in range(o):
            for i in range(t_out):
                y[a, b, i] = np.sum(xp[a, :, i * stride:i * stride + k] * w[b])
    return y


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 3), (2, 2), (3, 1)])
def test_conv_matches_brute_force(rng, stride, padding):
    x = rng.normal(size=(2, 3, 17))
    w = rng.normal(size=(4, 3, 5))
    assert np.allclose(kernels.conv1d_forward(x, w, stride, padding),
                       brute_conv(x, w, stride, padding), atol=1e-12)


@pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled kernels not built")
@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 3), (2, 2), (2, 3)])
def test_compiled_conv_matches_numpy(rng, stride, padding):
    c = kernels.compiled_backend
    x = rng.normal(size=(3, 4, 33))
    w = rng.normal(size=(5, 4, 7))
    y = _npkernels.conv1d_forward(x, w, stride, padding)
    assert np.allclose(c.conv1d_forward(x, w, stride, padding), y, atol=1e-12)
    dy = rng.normal(size=y.shape)
    dx_c, dw_c = c.conv1d_backward(x, w, dy, stride, padding)
    dx_n, dw_n = _npkernels.conv1d_backward(x, w, dy, stride, padding)
    assert np.allclose(dx_c, dx_n, atol=1e-12) and np.allclose(dw_c, dw_n, atol=1e-12)


def test_local_maxima_flat_top(backend):
    x = np.array([0, 1, 2, 2, 2, 1, 0, 3, 0], dtype=float)
    assert kernels.local_maxima(x).tolist() == [3, 7]


def test_prominences_match_scipy(backend, rng):
    x = rng.random(200)
    peaks = kernels.local_maxima(x)
    prom, left, right = kernels.peak_prominences(x, peaks)
    ref = scipy_prominences(x, peaks)
    assert np.allclose(prom, ref[0], atol=1e-14)
    assert left.tolist() == ref[1].tolist() and right.tolist() == ref[2].tolist()


def test_support_bounds(backend):
    x = np.array([0, 0.2, 0.5, 1.0, 0.6, 0.1, 0.0])
    lo, hi = kernels.support_bounds(x, np.array([3]), np.array([0.2]))
    assert lo.tolist() == [1] and hi.tolist() == [5]


def test_use_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
