"""Gradient verification suites.

Wraps each differentiable primitive in a closure for ops.gradcheck on
small float64 tensors, and runs an end-to-end finite-difference probe of
the full backward sweep on a width-reduced network. Shared by the
command line and the test suite.
"""
import numpy as np

from . import ops
from .model import NetConfig, backward, build_network, forward, init_params, trainable_keys
from .tensor import INT, Prng
from .train import weighted_cross_entropy

PRIMITIVE_TOL = 1e-5
END_TO_END_TOL = 1e-4


def _rand(rng, *shape):
    return rng.normal(int(np.prod(shape))).reshape(shape)


def _conv_case(seed, stride, bias, backend):
    rng = Prng(seed)
    spec = ops.ConvSpec(2, 3, kernel=3, stride=stride, pad=1, has_bias=bias)
    x = _rand(rng, 1, 2, 4, 4)
    w = _rand(rng, 3, 2, 3, 3) * 0.5
    inputs = [x, w] + ([_rand(rng, 3) * 0.1] if bias else [])

    def fn(ins):
        b = ins[2] if bias else None
        y = ops.conv2d(ins[0], spec, ins[1], b, backend=backend)

        def vjp(g):
            gx, gw, gb = ops.conv2d_vjp(ins[0], spec, ins[1], g, backend=backend)
            return [gx, gw] + ([gb] if bias else [])
        return y, vjp
    return fn, inputs


def _tconv_case(seed, backend):
    rng = Prng(seed)
    spec = ops.ConvSpec(2, 3, kernel=3, stride=2, pad=1, output_pad=1, has_bias=True)
    x = _rand(rng, 1, 2, 3, 3)
    w = _rand(rng, 2, 3, 3, 3) * 0.5
    b = _rand(rng, 3) * 0.1

    def fn(ins):
        y = ops.conv_transpose2d(ins[0], spec, ins[1], ins[2], backend=backend)

        def vjp(g):
            gx, gw, gb = ops.conv_transpose2d_vjp(ins[0], spec, ins[1], g, backend=backend)
            return [gx, gw, gb]
        return y, vjp
    return fn, [x, w, b]


def _bn_case(seed):
    rng = Prng(seed)
    x = _rand(rng, 2, 2, 3, 3)
    gamma = 1.0 + 0.1 * _rand(rng, 2)
    beta = 0.1 * _rand(rng, 2)

    def fn(ins):
        state = ops.BatchNormState(ins[1], ins[2], np.zeros(2), np.ones(2))
        y, _, cache = ops.batchnorm2d(ins[0], state, mode="train")

        def vjp(g):
            gx, dgamma, dbeta = ops.batchnorm2d_vjp(cache, g)
            return [gx, dgamma, dbeta]
        return y, vjp
    return fn, [x, gamma, beta]


def _relu_case(seed):
    rng = Prng(seed)
    x = _rand(rng, 1, 2, 4, 4)
    x = x + np.where(x >= 0, 0.05, -0.05)   # keep clear of the kink

    def fn(ins):
        y = ops.relu(ins[0])
        return y, lambda g: [ops.relu_vjp(ins[0], g)]
    return fn, [x]


def _pool_case(seed):
    rng = Prng(seed)
    vals = rng.permutation(32).astype(np.float64) * 0.1   # distinct, gaps >> h
    x = vals.reshape(1, 2, 4, 4)

    def fn(ins):
        y, arg = ops.maxpool2d(ins[0])
        return y, lambda g: [ops.maxpool2d_vjp(arg, g, ins[0].shape)]
    return fn, [x]


def primitive_gradchecks(seeds=range(10), tolerance=PRIMITIVE_TOL, backend=None):
    """Run every primitive through gradcheck; returns [(name, report), ...]."""
    out = []
    for seed in seeds:
        cases = [
            (f"conv2d[s{seed}]", _conv_case(seed, stride=1, bias=True, backend=backend)),
            (f"conv2d_strided[s{seed}]", _conv_case(seed, stride=2, bias=False, backend=backend)),
            (f"conv_transpose2d[s{seed}]", _tconv_case(seed, backend=backend)),
            (f"batchnorm2d[s{seed}]", _bn_case(seed)),
            (f"relu[s{seed}]", _relu_case(seed)),
            (f"maxpool2d[s{seed}]", _pool_case(seed)),
        ]
        for name, (fn, inputs) in cases:
            # Cotangent stream must differ from the case's input stream: a
            # cotangent equal to x makes the batch-norm contraction nearly
            # scale-invariant, collapsing its true gradient to O(epsilon).
            out.append((name, ops.gradcheck(fn, inputs, tolerance, seed=seed + 17)))
    return out


def corrupted_gradcheck(seed=0, tolerance=PRIMITIVE_TOL):
    """Self-test: a deliberately wrong (x1.01) gradient must fail the check."""
    fn, inputs = _conv_case(seed, stride=1, bias=False, backend=None)

    def bad(ins):
        y, vjp = fn(ins)
        return y, lambda g: [1.01 * a for a in vjp(g)]
    return ops.gradcheck(bad, inputs, tolerance, seed=seed + 17)


def end_to_end_gradcheck(seed=0, tolerance=END_TO_END_TOL, num_params=20, h=1e-5,
                         atol=1e-8):
    """Finite-difference probe of the full backward pass.

    Width-reduced network (widths / 16, 3 classes) on a 3x32x32 input in
    float64; compares the analytic loss gradient on ``num_params``
    randomly sampled parameters. Returns (max_rel_err, details) where
    details lists (param key, flat index, analytic, numeric, rel err).

    The error is relative with an absolute floor: differences below
    ``atol`` never fail. Central differences on a loss of order one
    resolve a gradient only down to about 1e-12, and some parameters of
    a freshly initialized net genuinely have gradients that small. The
    step is smaller than the primitive checks use because a coarse step
    can straddle a ReLU kink somewhere in the depth of the network.
    """
    config = NetConfig.scaled(num_classes=3, width_div=16, input_hw=(32, 32))
    graph = build_network(config)
    params = {k: v.astype(np.float64) for k, v in init_params(graph, seed).items()}
    rng = Prng(seed + 1)
    # Batch of two: the deepest stage of a 32x32 input is 1x1 spatial, and
    # train-mode batch norm needs at least two values per channel.
    x = _rand(rng, 2, 3, 32, 32)
    labels = rng.randint(0, 3, 2 * 32 * 32).reshape(2, 32, 32).astype(INT)

    def loss_and_grads():
        logits, cache = forward(graph, params, x, mode="train")
        loss, glog = weighted_cross_entropy(logits, labels)
        return loss, cache, glog

    _, cache, glog = loss_and_grads()
    grads = backward(graph, params, cache, glog)

    keys = sorted(trainable_keys(params))
    pick = Prng(seed + 2)
    details = []
    worst = 0.0
    for _ in range(num_params):
        key = keys[int(pick.randint(0, len(keys), 1)[0])]
        flat = params[key].reshape(-1)
        idx = int(pick.randint(0, flat.size, 1)[0])
        orig = flat[idx]
        flat[idx] = orig + h
        lp = loss_and_grads()[0]
        flat[idx] = orig - h
        lm = loss_and_grads()[0]
        flat[idx] = orig
        numeric = (lp - lm) / (2.0 * h)
        analytic = float(grads[key].reshape(-1)[idx])
        err = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + atol / tolerance)
        worst = max(worst, err)
        details.append((key, idx, analytic, numeric, err))
    return worst, details
