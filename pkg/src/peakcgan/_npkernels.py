"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    # [N, C, T_out, k]
    return sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]


def conv1d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    win = _windows(x, w.shape[2], stride, padding)
    # [N, T_out, O] via one BLAS call over (C, k)
    y = np.tensordot(win, w, axes=([1, 3], [1, 2]))
    return np.ascontiguousarray(y.transpose(0, 2, 1))


def conv1d_backward(x, w, dy, stride, padding):
    k = w.shape[2]
    win = _windows(x, k, stride, padding)
    dw = np.tensordot(dy, win, axes=([0, 2], [0, 2]))
    n, c_in, length = x.shape
    t_out = dy.shape[2]
    cols = np.tensordot(dy, w, axes=([1], [0]))  # [N, T_out, C, k]
    dxp = np.zeros((n, c_in, length + 2 * padding))
    stop = stride * (t_out - 1) + 1
    for j in range(k):
        dxp[:, :, j:j + stop:stride] += cols[:, :, :, j].transpose(0, 2, 1)
    dx = dxp[:, :, padding:padding + length] if padding else dxp
    return np.ascontiguousarray(dx), np.ascontiguousarray(dw)


def local_maxima(x: np.ndarray) -> np.ndarray:
    n = len(x)
    out = []
    i = 1
    while i < n - 1:
        if x[i - 1] < x[i]:
            ahead = i + 1
            while ahead < n - 1 and x[ahead] == x[i]:
                ahead += 1
            if x[ahead] < x[i]:
                out.append((i + ahead - 1) // 2)
                i = ahead
        i += 1
    return np.asarray(out, dtype=np.intp)


def peak_prominences(x: np.ndarray, peaks: np.ndarray):
    m = len(peaks)
    prom = np.empty(m)
    left = np.empty(m, dtype=np.intp)
    right = np.empty(m, dtype=np.intp)
    for p, peak in enumerate(peaks):
        height = x[peak]
        # extent on each side until a strictly higher sample
        higher_left = np.flatnonzero(x[:peak] > height)
        lo = higher_left[-1] + 1 if len(higher_left) else 0
        higher_right = np.flatnonzero(x[peak + 1:] > height)
        hi = peak + higher_right[0] if len(higher_right) else len(x) - 1
        seg_l = x[lo:peak + 1]
        seg_r = x[peak:hi + 1]
        # ties resolve to the sample nearest the peak
        left[p] = lo + len(seg_l) - 1 - int(np.argmin(seg_l[::-1]))
        right[p] = peak + int(np.argmin(seg_r))
        prom[p] = height - max(x[left[p]], x[right[p]])
    return prom, left, right


def support_bounds(x: np.ndarray, peaks: np.ndarray, reference: np.ndarray):
    m = len(peaks)
    lo = np.empty(m, dtype=np.intp)
    hi = np.empty(m, dtype=np.intp)
    n = len(x)
    for p, peak in enumerate(peaks):
        below = np.flatnonzero(x[:peak + 1] <= reference[p])
        lo[p] = below[-1] if len(below) else 0
        below = np.flatnonzero(x[peak:] <= reference[p])
        hi[p] = peak + below[0] if len(below) else n - 1
    return lo, hi
