"""Differentiable array primitives: convolutions, batch norm, relu, max pool.

Every forward has a matching vjp that maps the output cotangent to input
and parameter cotangents. Ops are dtype-generic (float32 in production,
float64 under the finite-difference checker) and stateless; batch norm
state travels in an explicit BatchNormState value.
"""
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .tensor import pad2d


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one (transposed) convolution layer."""

    in_channels: int
    out_channels: int
    kernel: tuple
    stride: tuple = (1, 1)
    pad: tuple = (0, 0)
    output_pad: tuple = (0, 0)
    has_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "pad", _pair(self.pad))
        object.__setattr__(self, "output_pad", _pair(self.output_pad))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"channel counts must be positive, got {self.in_channels}->{self.out_channels}")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError(f"kernel {self.kernel} and stride {self.stride} must be >= 1")
        if min(self.pad) < 0 or min(self.output_pad) < 0:
            raise ValueError(f"padding must be >= 0, got pad={self.pad} output_pad={self.output_pad}")
        if self.output_pad[0] >= self.stride[0] or self.output_pad[1] >= self.stride[1]:
            raise ValueError(f"output_pad {self.output_pad} must be < stride {self.stride}")

    def weight_shape(self, transposed=False):
        kh, kw = self.kernel
        if transposed:
            return (self.in_channels, self.out_channels, kh, kw)
        return (self.out_channels, self.in_channels, kh, kw)


def conv_out_shape(spec, hw):
    h, w = hw
    kh, kw = spec.kernel
    sh, sw = spec.stride
    ph, pw = spec.pad
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv output would be empty: input {hw}, kernel {spec.kernel}, "
                         f"stride {spec.stride}, pad {spec.pad}")
    return ho, wo


def tconv_out_shape(spec, hw):
    h, w = hw
    kh, kw = spec.kernel
    sh, sw = spec.stride
    ph, pw = spec.pad
    oph, opw = spec.output_pad
    ho = (h - 1) * sh - 2 * ph + kh + oph
    wo = (w - 1) * sw - 2 * pw + kw + opw
    if ho < 1 or wo < 1:
        raise ValueError(f"transposed conv output would be empty: input {hw} with {spec}")
    return ho, wo


def _check_input(x, spec, what):
    if x.ndim != 4:
        raise ValueError(f"{what} expects a rank-4 array, got rank {x.ndim}")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"{what}: input has {x.shape[1]} channels, spec expects {spec.in_channels}")


def conv2d(x, spec, weight, bias=None, backend=None):
    """Cross-correlation with zero padding. Weight (Cout, Cin, kh, kw)."""
    _check_input(x, spec, "conv2d")
    if weight.shape != spec.weight_shape():
        raise ValueError(f"conv2d weight shape {weight.shape} != expected {spec.weight_shape()}")
    conv_out_shape(spec, x.shape[2:])
    be = backend or kernels.active
    y = be.conv2d_forward(x, weight, spec.stride, spec.pad)
    if spec.has_bias:
        if bias is None or bias.shape != (spec.out_channels,):
            raise ValueError("conv2d: spec has a bias but none (or a mis-shaped one) was given")
        y += bias.reshape(1, -1, 1, 1)
    elif bias is not None:
        raise ValueError("conv2d: bias passed to a bias-free spec")
    return y


def conv2d_vjp(x, spec, weight, grad_out, backend=None):
    _check_input(x, spec, "conv2d_vjp")
    ho, wo = conv_out_shape(spec, x.shape[2:])
    expect = (x.shape[0], spec.out_channels, ho, wo)
    if grad_out.shape != expect:
        raise ValueError(f"conv2d_vjp: grad_out shape {grad_out.shape} != {expect}")
    be = backend or kernels.active
    grad_x, grad_w = be.conv2d_backward(x, weight, grad_out, spec.stride, spec.pad)
    grad_b = grad_out.sum(axis=(0, 2, 3)) if spec.has_bias else None
    return grad_x, grad_w, grad_b


def conv_transpose2d(x, spec, weight, bias=None, backend=None):
    """Transposed convolution (adjoint scatter). Weight (Cin, Cout, kh, kw)."""
    _check_input(x, spec, "conv_transpose2d")
    if weight.shape != spec.weight_shape(transposed=True):
        raise ValueError(f"conv_transpose2d weight shape {weight.shape} != "
                         f"expected {spec.weight_shape(transposed=True)}")
    tconv_out_shape(spec, x.shape[2:])
    be = backend or kernels.active
    y = be.tconv2d_forward(x, weight, spec.stride, spec.pad, spec.output_pad)
    if spec.has_bias:
        if bias is None or bias.shape != (spec.out_channels,):
            raise ValueError("conv_transpose2d: spec has a bias but none (or a mis-shaped one) was given")
        y += bias.reshape(1, -1, 1, 1)
    elif bias is not None:
        raise ValueError("conv_transpose2d: bias passed to a bias-free spec")
    return y


def conv_transpose2d_vjp(x, spec, weight, grad_out, backend=None):
    _check_input(x, spec, "conv_transpose2d_vjp")
    ho, wo = tconv_out_shape(spec, x.shape[2:])
    expect = (x.shape[0], spec.out_channels, ho, wo)
    if grad_out.shape != expect:
        raise ValueError(f"conv_transpose2d_vjp: grad_out shape {grad_out.shape} != {expect}")
    be = backend or kernels.active
    grad_x, grad_w = be.tconv2d_backward(x, weight, grad_out, spec.stride, spec.pad, spec.output_pad)
    grad_b = grad_out.sum(axis=(0, 2, 3)) if spec.has_bias else None
    return grad_x, grad_w, grad_b


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1


def batchnorm2d(x, state, mode="train"):
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with biased batch statistics and folds them into
    the running estimates (new = (1 - momentum) * old + momentum * batch);
    infer mode uses the running estimates only. Returns (y, new_state, cache)
    where cache is None in infer mode.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"batchnorm2d mode must be 'train' or 'infer', got {mode!r}")
    c = state.gamma.shape[0]
    if x.ndim != 4 or x.shape[1] != c:
        raise ValueError(f"batchnorm2d: input shape {x.shape} does not carry {c} channels")
    dt = x.dtype
    gamma = state.gamma.astype(dt, copy=False).reshape(1, c, 1, 1)
    beta = state.beta.astype(dt, copy=False).reshape(1, c, 1, 1)

    if mode == "infer":
        invstd = 1.0 / np.sqrt(state.running_var.astype(np.float64) + state.epsilon)
        scale = (gamma * invstd.astype(dt).reshape(1, c, 1, 1))
        shift = beta - scale * state.running_mean.astype(dt, copy=False).reshape(1, c, 1, 1)
        return x * scale + shift, state, None

    m = x.shape[0] * x.shape[2] * x.shape[3]
    if m < 2:
        raise ValueError(f"batchnorm2d train mode needs N*H*W >= 2, got {m}")
    mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
    var = x.var(axis=(0, 2, 3), dtype=np.float64)
    if np.any(var < -1e-6):
        raise FloatingPointError(f"batchnorm2d: variance {var.min()} below -1e-6, inputs corrupt")
    var = np.maximum(var, 0.0)

    rdt = state.running_mean.dtype
    new_rm = ((1.0 - state.momentum) * state.running_mean.astype(np.float64)
              + state.momentum * mean).astype(rdt)
    new_rv = ((1.0 - state.momentum) * state.running_var.astype(np.float64)
              + state.momentum * var).astype(rdt)

    invstd = (1.0 / np.sqrt(var + state.epsilon)).astype(dt)
    xhat = (x - mean.astype(dt).reshape(1, c, 1, 1)) * invstd.reshape(1, c, 1, 1)
    y = gamma * xhat + beta
    cache = (xhat, invstd, state.gamma, m)
    return y, replace(state, running_mean=new_rm, running_var=new_rv), cache


def batchnorm2d_vjp(cache, grad_out):
    """Cotangents for train-mode batch norm: (grad_x, grad_gamma, grad_beta)."""
    if cache is None:
        raise ValueError("batchnorm2d_vjp needs the train-mode cache (infer mode has no vjp)")
    xhat, invstd, gamma, m = cache
    dt = grad_out.dtype
    c = xhat.shape[1]
    dbeta64 = grad_out.sum(axis=(0, 2, 3), dtype=np.float64)
    dgamma64 = (grad_out * xhat).sum(axis=(0, 2, 3), dtype=np.float64)
    scale = (gamma.astype(np.float64) * invstd.astype(np.float64)).astype(dt).reshape(1, c, 1, 1)
    mean_g = (dbeta64 / m).astype(dt).reshape(1, c, 1, 1)
    mean_gx = (dgamma64 / m).astype(dt).reshape(1, c, 1, 1)
    grad_x = scale * (grad_out - mean_g - xhat * mean_gx)
    return grad_x, dgamma64.astype(gamma.dtype), dbeta64.astype(gamma.dtype)


def relu(x):
    return np.maximum(x, 0)


def relu_vjp(x, grad_out):
    """Subgradient 0 at the kink: pass grad only where x > 0."""
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def maxpool2d(x, window=(3, 3), stride=(2, 2), pad=(1, 1)):
    """Max pooling; padding counts as -inf so it never wins.

    Returns (y, argmax) where argmax holds int64 flat offsets into x of the
    selected elements. Ties go to the smallest (row, col) offset within the
    window.
    """
    if x.ndim != 4:
        raise ValueError(f"maxpool2d expects a rank-4 array, got rank {x.ndim}")
    kh, kw = _pair(window)
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    if ph >= kh or pw >= kw:
        raise ValueError(f"maxpool2d pad {pad} must be smaller than window {window}")
    n, c, h, w = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"maxpool2d output would be empty for input {x.shape}")

    fill = -np.inf if np.issubdtype(x.dtype, np.floating) else np.iinfo(x.dtype).min
    xp = pad2d(x, (ph, ph, pw, pw), fill=fill)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = win.reshape(n, c, ho, wo, kh * kw)
    k = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, k[..., None], axis=-1)[..., 0]

    u, v = k // kw, k % kw
    rows = np.arange(ho).reshape(1, 1, ho, 1) * sh + u - ph
    cols = np.arange(wo).reshape(1, 1, 1, wo) * sw + v - pw
    nn = np.arange(n).reshape(n, 1, 1, 1)
    cc = np.arange(c).reshape(1, c, 1, 1)
    argmax = (((nn * c + cc) * h + rows) * w + cols).astype(np.int64)
    return np.ascontiguousarray(y), argmax


def maxpool2d_vjp(argmax, grad_out, input_shape):
    """Scatter-add grad_out to the argmax positions of the original input."""
    if argmax.shape != grad_out.shape:
        raise ValueError(f"maxpool2d_vjp: argmax shape {argmax.shape} != grad shape {grad_out.shape}")
    size = int(np.prod(input_shape))
    flat = argmax.ravel()
    if flat.size and (flat.min() < 0 or flat.max() >= size):
        raise ValueError("maxpool2d_vjp: argmax offsets fall outside the input")
    grad_x = np.zeros(size, dtype=grad_out.dtype)
    np.add.at(grad_x, flat, grad_out.ravel())
    return grad_x.reshape(input_shape)


@dataclass(frozen=True)
class GradcheckReport:
    max_rel_err: float
    per_input: tuple
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_err <= self.tolerance


def gradcheck(fn, inputs, tolerance, h=1e-4, seed=0):
    """Central finite differences against an analytic vjp, in 64-bit.

    ``fn(inputs)`` must return ``(y, vjp)`` with ``vjp(cotangent)`` giving
    one gradient per input. The output is contracted with a fixed random
    cotangent; per-element relative error is
    |a - n| / (|a| + |n| + 1e-12) and the check passes iff the max over
    all inputs is <= tolerance.
    """
    from .tensor import Prng

    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    y, vjp = fn(inputs)
    v = Prng(seed).normal(y.size).reshape(y.shape)
    analytic = vjp(v)
    if len(analytic) != len(inputs):
        raise ValueError(f"vjp returned {len(analytic)} gradients for {len(inputs)} inputs")
    per_input = []
    for k, a in enumerate(inputs):
        numeric = np.zeros_like(a)
        flat = a.reshape(-1)
        nflat = numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            yp = float(np.sum(v * fn(inputs)[0]))
            flat[idx] = orig - h
            ym = float(np.sum(v * fn(inputs)[0]))
            flat[idx] = orig
            nflat[idx] = (yp - ym) / (2.0 * h)
        an = np.asarray(analytic[k], dtype=np.float64)
        if an.shape != a.shape:
            raise ValueError(f"gradient {k} has shape {an.shape}, input has {a.shape}")
        err = np.abs(an - numeric) / (np.abs(an) + np.abs(numeric) + 1e-12)
        per_input.append(float(err.max()) if err.size else 0.0)
    worst = max(per_input) if per_input else 0.0
    return GradcheckReport(max_rel_err=worst, per_input=tuple(per_input), tolerance=tolerance)
