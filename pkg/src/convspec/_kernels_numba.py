"""numba @njit implementations of the hot inner loops.

Imported by convspec.backend when numba is available and not disabled via
CONVSPEC_BACKEND=numpy. Signatures mirror _kernels_numpy exactly.

The zero-padding conv paths hoist the valid output range of every kernel
tap out of the pixel loops, so the innermost loops run contiguously over
output rows; the circular paths keep per-pixel wrapping (they only serve
the small theory-exact experiments).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _tap_range(k_off, stride, pad, in_extent, out_extent):
    """Output index range [lo, hi) for which in = out*stride + k_off - pad
    lands inside [0, in_extent)."""
    lo = 0
    off = k_off - pad
    if off < 0:
        lo = (-off + stride - 1) // stride
    hi = (in_extent - 1 - off) // stride + 1
    if hi > out_extent:
        hi = out_extent
    if lo > hi:
        lo = hi
    return lo, hi


@njit(cache=True)
def conv2d_forward(x, w, stride, pad_top, pad_left, out_h, out_w, circular):
    """Correlation-style conv. x: (B,C,H,W), w: (k,k,D,C) -> (B,D,OH,OW)."""
    b_n, c_in, h, wd = x.shape
    k = w.shape[0]
    d_out = w.shape[2]
    y = np.zeros((b_n, d_out, out_h, out_w))
    if circular:
        for b in range(b_n):
            for dd in range(d_out):
                for c in range(c_in):
                    for a in range(k):
                        for bb in range(k):
                            wv = w[a, bb, dd, c]
                            for oh in range(out_h):
                                ih = (oh * stride - pad_top + a) % h
                                for ow in range(out_w):
                                    iw = (ow * stride - pad_left + bb) % wd
                                    y[b, dd, oh, ow] += wv * x[b, c, ih, iw]
        return y
    for b in range(b_n):
        for dd in range(d_out):
            for c in range(c_in):
                for a in range(k):
                    oh_lo, oh_hi = _tap_range(a, stride, pad_top, h, out_h)
                    for bb in range(k):
                        wv = w[a, bb, dd, c]
                        if wv == 0.0:
                            continue
                        ow_lo, ow_hi = _tap_range(bb, stride, pad_left, wd, out_w)
                        for oh in range(oh_lo, oh_hi):
                            ih = oh * stride - pad_top + a
                            iw0 = ow_lo * stride - pad_left + bb
                            for j in range(ow_hi - ow_lo):
                                y[b, dd, oh, ow_lo + j] += (
                                    wv * x[b, c, ih, iw0 + j * stride]
                                )
    return y


@njit(cache=True)
def conv2d_input_grad(dy, w, stride, pad_top, pad_left, in_h, in_w, circular):
    """Gradient of conv2d_forward w.r.t. x. dy: (B,D,OH,OW) -> (B,C,H,W)."""
    b_n, d_out, out_h, out_w = dy.shape
    k = w.shape[0]
    c_in = w.shape[3]
    dx = np.zeros((b_n, c_in, in_h, in_w))
    if circular:
        for b in range(b_n):
            for dd in range(d_out):
                for c in range(c_in):
                    for a in range(k):
                        for bb in range(k):
                            wv = w[a, bb, dd, c]
                            for oh in range(out_h):
                                ih = (oh * stride - pad_top + a) % in_h
                                for ow in range(out_w):
                                    iw = (ow * stride - pad_left + bb) % in_w
                                    dx[b, c, ih, iw] += wv * dy[b, dd, oh, ow]
        return dx
    for b in range(b_n):
        for dd in range(d_out):
            for c in range(c_in):
                for a in range(k):
                    oh_lo, oh_hi = _tap_range(a, stride, pad_top, in_h, out_h)
                    for bb in range(k):
                        wv = w[a, bb, dd, c]
                        if wv == 0.0:
                            continue
                        ow_lo, ow_hi = _tap_range(bb, stride, pad_left, in_w, out_w)
                        for oh in range(oh_lo, oh_hi):
                            ih = oh * stride - pad_top + a
                            iw0 = ow_lo * stride - pad_left + bb
                            for j in range(ow_hi - ow_lo):
                                dx[b, c, ih, iw0 + j * stride] += (
                                    wv * dy[b, dd, oh, ow_lo + j]
                                )
    return dx


@njit(cache=True)
def conv2d_weight_grad(dy, x, k, stride, pad_top, pad_left, circular):
    """Gradient of conv2d_forward w.r.t. w. Returns (k,k,D,C)."""
    b_n, d_out, out_h, out_w = dy.shape
    c_in = x.shape[1]
    h = x.shape[2]
    wd = x.shape[3]
    dw = np.zeros((k, k, d_out, c_in))
    if circular:
        for b in range(b_n):
            for dd in range(d_out):
                for c in range(c_in):
                    for a in range(k):
                        for bb in range(k):
                            acc = 0.0
                            for oh in range(out_h):
                                ih = (oh * stride - pad_top + a) % h
                                for ow in range(out_w):
                                    iw = (ow * stride - pad_left + bb) % wd
                                    acc += dy[b, dd, oh, ow] * x[b, c, ih, iw]
                            dw[a, bb, dd, c] += acc
        return dw
    for b in range(b_n):
        for dd in range(d_out):
            for c in range(c_in):
                for a in range(k):
                    oh_lo, oh_hi = _tap_range(a, stride, pad_top, h, out_h)
                    for bb in range(k):
                        ow_lo, ow_hi = _tap_range(bb, stride, pad_left, wd, out_w)
                        acc = 0.0
                        for oh in range(oh_lo, oh_hi):
                            ih = oh * stride - pad_top + a
                            iw0 = ow_lo * stride - pad_left + bb
                            for j in range(ow_hi - ow_lo):
                                acc += (
                                    dy[b, dd, oh, ow_lo + j]
                                    * x[b, c, ih, iw0 + j * stride]
                                )
                        dw[a, bb, dd, c] += acc
    return dw


@njit(cache=True)
def jacobi_sweeps(at, vt, accumulate_v, eps, max_sweeps):
    """One-sided Jacobi column orthogonalization, in place.

    at holds the columns of A as rows ((n, m), complex128); vt accumulates
    the applied rotations as rows of V. Pairs are visited in a fixed cyclic
    (lexicographic) order. Returns the number of completed sweeps, or -1 if
    the off-diagonal test never fell below eps.
    """
    n, m = at.shape
    for sweep in range(max_sweeps):
        rotated = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = 0.0
                aqq = 0.0
                apq = 0.0 + 0.0j
                for i in range(m):
                    ap = at[p, i]
                    aq = at[q, i]
                    app += ap.real * ap.real + ap.imag * ap.imag
                    aqq += aq.real * aq.real + aq.imag * aq.imag
                    apq += np.conj(ap) * aq
                if app == 0.0 or aqq == 0.0:
                    continue
                g = abs(apq)
                if g <= eps * np.sqrt(app * aqq):
                    continue
                rotated += 1
                phase_conj = np.conj(apq) / g
                tau = (aqq - app) / (2.0 * g)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                cth = 1.0 / np.sqrt(1.0 + t * t)
                sth = t * cth
                for i in range(m):
                    ap = at[p, i]
                    aq = phase_conj * at[q, i]
                    at[p, i] = cth * ap - sth * aq
                    at[q, i] = sth * ap + cth * aq
                if accumulate_v:
                    for i in range(n):
                        vp = vt[p, i]
                        vq = phase_conj * vt[q, i]
                        vt[p, i] = cth * vp - sth * vq
                        vt[q, i] = sth * vp + cth * vq
        if rotated == 0:
            return sweep
    return -1
