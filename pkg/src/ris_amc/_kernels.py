"""Fused loops for the CNN's memory-bound steps (im2col, batchnorm+ReLU+pool)."""

import numba
import numpy as np

# pool codes: which element of the pair won, or 2 when the ReLU output is 0
INACTIVE = 2


@numba.njit(cache=True)
def im2col(x, k):
    """(b, n, c) -> (b*n, k*c) with same padding; column ``j*c + ch``."""
    b, n, c = x.shape
    left = (k - 1) // 2
    out = np.zeros((b * n, k * c), dtype=x.dtype)
    for bi in range(b):
        for t in range(n):
            row = bi * n + t
            for j in range(k):
                s = t + j - left
                if 0 <= s < n:
                    for ch in range(c):
                        out[row, j * c + ch] = x[bi, s, ch]
    return out


@numba.njit(cache=True)
def col2im(dcols, b, n, c, k):
    left = (k - 1) // 2
    dx = np.zeros((b, n, c), dtype=dcols.dtype)
    for bi in range(b):
        for t in range(n):
            row = bi * n + t
            for j in range(k):
                s = t + j - left
                if 0 <= s < n:
                    for ch in range(c):
                        dx[bi, s, ch] += dcols[row, j * c + ch]
    return dx


@numba.njit(cache=True)
def channel_stats(y):
    """Per-channel mean and biased variance of a (rows, c) array, float64 sums."""
    rows, c = y.shape
    s = np.zeros(c)
    ss = np.zeros(c)
    for r in range(rows):
        for ch in range(c):
            v = y[r, ch]
            s[ch] += v
            ss[ch] += v * v
    mean = s / rows
    var = np.maximum(ss / rows - mean * mean, 0.0)
    return mean, var


@numba.njit(cache=True)
def affine_relu_pool(y, scale, shift):
    """relu(max(z[2i], z[2i+1])) with z = y*scale + shift; also the pool codes."""
    b, n, c = y.shape
    half = n // 2
    out = np.empty((b, half, c), dtype=y.dtype)
    code = np.empty((b, half, c), dtype=np.int8)
    for bi in range(b):
        for i in range(half):
            for ch in range(c):
                a = y[bi, 2 * i, ch] * scale[ch] + shift[ch]
                d = y[bi, 2 * i + 1, ch] * scale[ch] + shift[ch]
                if a >= d:
                    m, w = a, 0
                else:
                    m, w = d, 1
                if m > 0:
                    out[bi, i, ch] = m
                    code[bi, i, ch] = w
                else:
                    out[bi, i, ch] = 0
                    code[bi, i, ch] = INACTIVE
    return out, code


@numba.njit(cache=True)
def bn_relu_pool_backward(dout, code, y, mean, inv, gamma):
    """Gradient w.r.t. the conv output ``y`` through train-mode BN, ReLU and pooling."""
    b, n, c = y.shape
    half = n // 2
    cnt = b * n
    sum_dz = np.zeros(c)
    sum_dzx = np.zeros(c)
    for bi in range(b):
        for i in range(half):
            for ch in range(c):
                w = code[bi, i, ch]
                if w != INACTIVE:
                    g = dout[bi, i, ch]
                    xh = (y[bi, 2 * i + w, ch] - mean[ch]) * inv[ch]
                    sum_dz[ch] += g
                    sum_dzx[ch] += g * xh
    a = sum_dz / cnt
    bb = sum_dzx / cnt
    dy = np.empty_like(y)
    for bi in range(b):
        for t in range(n):
            i = t // 2
            for ch in range(c):
                xh = (y[bi, t, ch] - mean[ch]) * inv[ch]
                dz = dout[bi, i, ch] if code[bi, i, ch] == t - 2 * i else 0.0
                dy[bi, t, ch] = inv[ch] * gamma[ch] * (dz - a[ch] - xh * bb[ch])
    return dy, sum_dzx, sum_dz


@numba.njit(cache=True)
def affine_pool_fixed(y, scale, shift, code):
    """Like ``affine_relu_pool`` but with every pooling/ReLU decision given."""
    b, n, c = y.shape
    half = n // 2
    out = np.zeros((b, half, c), dtype=y.dtype)
    for bi in range(b):
        for i in range(half):
            for ch in range(c):
                w = code[bi, i, ch]
                if w != INACTIVE:
                    out[bi, i, ch] = y[bi, 2 * i + w, ch] * scale[ch] + shift[ch]
    return out, code
