"""Pure-numpy implementations of the hot inner loops.

Fallback path selected via CONVSPEC_BACKEND=numpy (or when numba is not
importable). Convolutions go through im2col + BLAS matmul; the Jacobi
sweep applies the same rotations as the numba kernel with vector ops.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad_input(x, k, stride, pad_top, pad_left, out_h, out_w, circular):
    h, wd = x.shape[2], x.shape[3]
    pad_bottom = max((out_h - 1) * stride + k - h - pad_top, 0)
    pad_right = max((out_w - 1) * stride + k - wd - pad_left, 0)
    pads = ((0, 0), (0, 0), (pad_top, pad_bottom), (pad_left, pad_right))
    mode = "wrap" if circular else "constant"
    if pad_top == 0 and pad_bottom == 0 and pad_left == 0 and pad_right == 0:
        return x
    return np.pad(x, pads, mode=mode)


def _im2col(x, k, stride, pad_top, pad_left, out_h, out_w, circular):
    b_n, c_in = x.shape[0], x.shape[1]
    xp = _pad_input(x, k, stride, pad_top, pad_left, out_h, out_w, circular)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    # (B, C, OH, OW, k, k) -> (B*OH*OW, C*k*k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b_n * out_h * out_w, c_in * k * k)
    return np.ascontiguousarray(cols)


def conv2d_forward(x, w, stride, pad_top, pad_left, out_h, out_w, circular):
    """Correlation-style conv. x: (B,C,H,W), w: (k,k,D,C) -> (B,D,OH,OW)."""
    b_n, c_in = x.shape[0], x.shape[1]
    k = w.shape[0]
    d_out = w.shape[2]
    cols = _im2col(x, k, stride, pad_top, pad_left, out_h, out_w, circular)
    wmat = w.transpose(3, 0, 1, 2).reshape(c_in * k * k, d_out)
    y = cols @ wmat
    return np.ascontiguousarray(
        y.reshape(b_n, out_h, out_w, d_out).transpose(0, 3, 1, 2)
    )


def conv2d_input_grad(dy, w, stride, pad_top, pad_left, in_h, in_w, circular):
    """Gradient of conv2d_forward w.r.t. x. dy: (B,D,OH,OW) -> (B,C,H,W)."""
    b_n, d_out, out_h, out_w = dy.shape
    k = w.shape[0]
    if circular and stride != 1:
        raise NotImplementedError("circular padding requires stride 1")
    if stride > 1:
        up = np.zeros((b_n, d_out, out_h * stride, out_w * stride))
        up[:, :, ::stride, ::stride] = dy
    else:
        up = dy
    # transpose of correlation == correlation with the spatially flipped
    # kernel, in/out channels swapped, applied to the zero-stuffed grads
    wt = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    pt = k - 1 - pad_top
    pl = k - 1 - pad_left
    return conv2d_forward(up, wt, 1, pt, pl, in_h, in_w, circular)


def conv2d_weight_grad(dy, x, k, stride, pad_top, pad_left, circular):
    """Gradient of conv2d_forward w.r.t. w. Returns (k,k,D,C)."""
    b_n, d_out, out_h, out_w = dy.shape
    c_in = x.shape[1]
    cols = _im2col(x, k, stride, pad_top, pad_left, out_h, out_w, circular)
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(b_n * out_h * out_w, d_out)
    dw = cols.T @ dy_mat  # (C*k*k, D)
    return np.ascontiguousarray(
        dw.reshape(c_in, k, k, d_out).transpose(1, 2, 3, 0)
    )


def jacobi_sweeps(at, vt, accumulate_v, eps, max_sweeps):
    """Same contract as the numba kernel; rotations use numpy vector ops."""
    n = at.shape[0]
    for sweep in range(max_sweeps):
        rotated = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                rp = at[p]
                rq = at[q]
                app = np.vdot(rp, rp).real
                aqq = np.vdot(rq, rq).real
                if app == 0.0 or aqq == 0.0:
                    continue
                apq = np.vdot(rp, rq)
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
                aq = phase_conj * rq
                at[q] = sth * rp + cth * aq
                at[p] = cth * rp - sth * aq
                if accumulate_v:
                    vp = vt[p].copy()
                    vq = phase_conj * vt[q]
                    vt[p] = cth * vp - sth * vq
                    vt[q] = sth * vp + cth * vq
        if rotated == 0:
            return sweep
    return -1
