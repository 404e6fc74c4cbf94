"""Pure-Python (numpy) forward kernels.

Fallback used when the compiled extension is unavailable. Both backends
implement the identical accumulation contract so their outputs match the
compiled kernels bit for bit:

* accumulators are float32 and every multiply and add rounds to float32;
* per output element the summation runs kernel-column major with the input
  channel innermost (conv2d: kw, kh, c; conv3d: kw, kh, kd, c; linear:
  ascending input index), starting from the bias;
* zero padding is materialized, so a NaN/Inf weight multiplied into the
  border contributes NaN exactly like it would on a real padded buffer;
* max pooling scans each window row major and lets NaN win a comparison,
  so a poisoned window yields NaN instead of silently dropping it.

The numpy updates below apply one scalar-broadcast multiply and one add per
(kernel tap, channel) step; each elementwise float32 operation rounds once,
which is the same rounding sequence the scalar loops in the compiled
backend perform.
"""

import numpy as np


def _quiet():
    # corrupted values legitimately produce NaN/Inf mid-accumulation; numpy's
    # invalid/overflow warnings would flood campaign output. Fresh instance
    # per call: errstate objects keep saved state on themselves and must not
    # be shared across worker threads.
    return np.errstate(invalid="ignore", over="ignore")


def conv2d(x, w, b, stride, padding):
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wd + 2 * padding - kw) // stride + 1
    xp = x
    if padding:
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out = np.repeat(b[:, None], h_out * w_out, axis=1).reshape(c_out, h_out, w_out)
    with _quiet():
        for j in range(kw):
            for i in range(kh):
                win = xp[:, i : i + (h_out - 1) * stride + 1 : stride,
                         j : j + (w_out - 1) * stride + 1 : stride]
                for c in range(c_in):
                    out += w[:, c, i, j][:, None, None] * win[c]
    return np.ascontiguousarray(out)


def conv3d(x, w, b, stride, padding):
    c_in, d, h, wd = x.shape
    c_out, _, kd, kh, kw = w.shape
    d_out = (d + 2 * padding - kd) // stride + 1
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wd + 2 * padding - kw) // stride + 1
    xp = x
    if padding:
        p = (padding, padding)
        xp = np.pad(x, ((0, 0), p, p, p))
    out = np.repeat(b[:, None], d_out * h_out * w_out, axis=1)
    out = out.reshape(c_out, d_out, h_out, w_out)
    with _quiet():
        for j in range(kw):
            for i in range(kh):
                for k in range(kd):
                    win = xp[:, k : k + (d_out - 1) * stride + 1 : stride,
                             i : i + (h_out - 1) * stride + 1 : stride,
                             j : j + (w_out - 1) * stride + 1 : stride]
                    for c in range(c_in):
                        out += w[:, c, k, i, j][:, None, None, None] * win[c]
    return np.ascontiguousarray(out)


def linear(x, w, b):
    out = b.copy()
    with _quiet():
        for i in range(x.shape[0]):
            out += w[:, i] * x[i]
    return out


def maxpool2d(x, k, stride):
    c_in, h, wd = x.shape
    h_out = (h - k) // stride + 1
    w_out = (wd - k) // stride + 1
    first = True
    m = None
    for i in range(k):
        for j in range(k):
            e = x[:, i : i + (h_out - 1) * stride + 1 : stride,
                  j : j + (w_out - 1) * stride + 1 : stride]
            if first:
                m = e.copy()
                first = False
            else:
                m = np.where(np.isnan(e) | (e > m), e, m)
    return np.ascontiguousarray(m)
