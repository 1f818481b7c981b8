"""Vectorized numpy kernels (patch-matrix formulation).

Fallback used when the compiled core is unavailable. Convolutions are
rewritten as window-gather plus matmul so BLAS does the contraction; the
scatter halves run as a short loop over kernel offsets. Results must stay
within 1e-5 relative of the direct-summation core and are gated by the
same tests.

Weight layouts: conv (Cout, Cin, kh, kw); transposed conv (Cin, Cout, kh, kw).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _conv_out(size, k, s, p):
    return (size + 2 * p - k) // s + 1


def _tconv_out(size, k, s, p, op):
    return (size - 1) * s - 2 * p + k + op


def _windows(xp, kh, kw, sh, sw):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def _pad_spatial(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d_forward(x, w, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    ho, wo = _conv_out(h, kh, sh, ph), _conv_out(wd, kw, sw, pw)
    win = _windows(_pad_spatial(x, ph, pw), kh, kw, sh, sw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * kh * kw)
    y = cols @ w.reshape(cout, -1).T
    return np.ascontiguousarray(y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, grad_y, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    ho, wo = grad_y.shape[2], grad_y.shape[3]

    win = _windows(_pad_spatial(x, ph, pw), kh, kw, sh, sw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * kh * kw)
    gy2 = np.ascontiguousarray(grad_y.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
    grad_w = (gy2 @ cols).reshape(w.shape)

    gcols = (gy2.T @ w.reshape(cout, -1)).reshape(n, ho, wo, cin, kh, kw)
    gxp = np.zeros((n, cin, h + 2 * ph, wd + 2 * pw), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u:u + sh * ho:sh, v:v + sw * wo:sw] += gcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    grad_x = np.ascontiguousarray(gxp[:, :, ph:ph + h, pw:pw + wd])
    return grad_x, grad_w


def tconv2d_forward(x, w, stride, pad, output_pad):
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    oph, opw = output_pad
    ho, wo = _tconv_out(h, kh, sh, ph, oph), _tconv_out(wd, kw, sw, pw, opw)

    x2 = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(n * h * wd, cin)
    t = (x2 @ w.reshape(cin, -1)).reshape(n, h, wd, cout, kh, kw)
    hb = (h - 1) * sh + kh + max(0, oph - ph)
    wb = (wd - 1) * sw + kw + max(0, opw - pw)
    ybig = np.zeros((n, cout, hb, wb), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            ybig[:, :, u:u + sh * h:sh, v:v + sw * wd:sw] += t[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(ybig[:, :, ph:ph + ho, pw:pw + wo])


def tconv2d_backward(x, w, grad_y, stride, pad, output_pad):
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad

    # grad wrt input is a plain convolution of grad_y with the same weight
    grad_x = conv2d_forward(grad_y, w, stride, pad)

    win = _windows(_pad_spatial(grad_y, ph, pw), kh, kw, sh, sw)  # (n, cout, h, wd, kh, kw)
    g2 = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * wd, cout * kh * kw)
    x2 = np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(cin, n * h * wd)
    grad_w = (x2 @ g2).reshape(w.shape)
    return grad_x, grad_w
