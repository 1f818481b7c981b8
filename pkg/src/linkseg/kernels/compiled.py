"""Functional wrapper around the compiled direct-summation core.

Allocates outputs, guarantees C-contiguity, and dispatches to the fused
float/double kernels in ``_core``. Import fails cleanly when the extension
was not built; the package then falls back to the numpy backend.
"""
import numpy as np

from . import _core

NAME = "compiled"


def _contig(a):
    return np.ascontiguousarray(a)


def conv2d_forward(x, w, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    y = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    _core.conv2d_forward(_contig(x), _contig(w), sh, sw, ph, pw, y)
    return y


def conv2d_backward(x, w, grad_y, stride, pad):
    sh, sw = stride
    ph, pw = pad
    grad_x = np.zeros_like(x)
    grad_w = np.zeros_like(w)
    gy = _contig(grad_y)
    _core.conv2d_backward_x(_contig(w), gy, sh, sw, ph, pw, grad_x)
    _core.conv2d_backward_w(_contig(x), gy, sh, sw, ph, pw, grad_w)
    return grad_x, grad_w


def tconv2d_forward(x, w, stride, pad, output_pad):
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    ho = (h - 1) * sh - 2 * ph + kh + output_pad[0]
    wo = (wd - 1) * sw - 2 * pw + kw + output_pad[1]
    y = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    _core.tconv2d_forward(_contig(x), _contig(w), sh, sw, ph, pw, y)
    return y


def tconv2d_backward(x, w, grad_y, stride, pad, output_pad):
    sh, sw = stride
    ph, pw = pad
    grad_x = np.zeros_like(x)
    grad_w = np.zeros_like(w)
    gy = _contig(grad_y)
    _core.tconv2d_backward_x(_contig(w), gy, sh, sw, ph, pw, grad_x)
    _core.tconv2d_backward_w(_contig(x), gy, sh, sw, ph, pw, grad_w)
    return grad_x, grad_w
