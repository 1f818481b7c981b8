"""Segmentation network as an explicit operator graph.

The architecture is an encoder-decoder over residual blocks with additive
skip edges from each encoder stage into the matching decoder stage, a
strided stem in front and a learned-upsampling head behind. Nodes are
stored in executable (topological) order; parameters live in a flat
``dict[str, ndarray]`` keyed by node path, so checkpoints, the optimizer
and the analyzer all share one naming scheme.
"""
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import REAL, Prng, add, he_normal_init

ENCODER_WIDTHS = ((64, 64), (64, 128), (128, 256), (256, 512))
DECODER_WIDTHS = ((64, 64), (128, 64), (256, 128), (512, 256))

INPUT_DIVISOR = 32


class GraphBuildError(ValueError):
    pass


def _pairs(widths):
    return tuple((int(m), int(n)) for m, n in widths)


@dataclass(frozen=True)
class NetConfig:
    num_classes: int
    in_channels: int = 3
    input_hw: tuple = (512, 1024)
    bypass: bool = True
    encoder_widths: tuple = ENCODER_WIDTHS
    decoder_widths: tuple = DECODER_WIDTHS

    def __post_init__(self):
        object.__setattr__(self, "input_hw", (int(self.input_hw[0]), int(self.input_hw[1])))
        object.__setattr__(self, "encoder_widths", _pairs(self.encoder_widths))
        object.__setattr__(self, "decoder_widths", _pairs(self.decoder_widths))

    @classmethod
    def scaled(cls, num_classes, width_div=1, **kw):
        """Config with every stage width divided by ``width_div``."""
        if width_div < 1:
            raise GraphBuildError(f"width divisor must be >= 1, got {width_div}")
        for m, n in ENCODER_WIDTHS + DECODER_WIDTHS:
            if m % width_div or n % width_div:
                raise GraphBuildError(f"width divisor {width_div} does not divide stage width {m}x{n}")
        enc = tuple((m // width_div, n // width_div) for m, n in ENCODER_WIDTHS)
        dec = tuple((m // width_div, n // width_div) for m, n in DECODER_WIDTHS)
        return cls(num_classes=num_classes, encoder_widths=enc, decoder_widths=dec, **kw)

    def validate(self):
        if self.num_classes < 2:
            raise GraphBuildError(f"need at least 2 classes, got {self.num_classes}")
        if self.in_channels < 1:
            raise GraphBuildError(f"in_channels must be >= 1, got {self.in_channels}")
        h, w = self.input_hw
        if h < INPUT_DIVISOR or w < INPUT_DIVISOR or h % INPUT_DIVISOR or w % INPUT_DIVISOR:
            raise GraphBuildError(
                f"input size {h}x{w} must be divisible by {INPUT_DIVISOR} "
                f"(total encoder downsampling factor)")
        if len(self.encoder_widths) != 4 or len(self.decoder_widths) != 4:
            raise GraphBuildError("exactly 4 encoder and 4 decoder stages are supported")
        stem = self.encoder_widths[0][0]
        prev = stem
        for i, (m, n) in enumerate(self.encoder_widths, 1):
            if m != prev:
                raise GraphBuildError(f"encoder stage {i} expects {prev} input channels, widths give {m}")
            prev = n
        for i, (m, n) in enumerate(self.decoder_widths, 1):
            enc_out = self.encoder_widths[i - 1][1]
            enc_in = self.encoder_widths[i - 2][1] if i > 1 else stem
            if m != enc_out:
                raise GraphBuildError(f"decoder stage {i} input width {m} != encoder stage {i} output {enc_out}")
            if n != enc_in:
                raise GraphBuildError(f"decoder stage {i} output width {n} != encoder stage {i} input {enc_in}")
            if m % 4:
                raise GraphBuildError(f"decoder stage {i} input width {m} is not divisible by 4")
        if stem % 2:
            raise GraphBuildError(f"stem width {stem} must be even for the head")


@dataclass(frozen=True)
class Node:
    path: str
    kind: str                     # input | conv | tconv | bn | relu | pool | add
    inputs: tuple = ()
    conv: ops.ConvSpec = None
    channels: int = 0             # bn and input nodes


class Graph:
    """Topologically ordered node list; the last node is the output."""

    def __init__(self, nodes, config=None):
        self.nodes = list(nodes)
        self.config = config
        self.by_path = {}
        for node in self.nodes:
            if node.path in self.by_path:
                raise GraphBuildError(f"duplicate node path {node.path!r}")
            for ref in node.inputs:
                if ref not in self.by_path:
                    raise GraphBuildError(f"node {node.path!r} consumes {ref!r} before it is defined")
            self.by_path[node.path] = node
        self.consumers = {p: 0 for p in self.by_path}
        for node in self.nodes:
            for ref in node.inputs:
                self.consumers[ref] += 1

    @property
    def output_path(self):
        return self.nodes[-1].path if self.nodes else None

    def param_shapes(self):
        """Ordered map of parameter key -> shape (running stats included)."""
        shapes = {}
        for node in self.nodes:
            if node.kind in ("conv", "tconv"):
                spec = node.conv
                shapes[f"{node.path}.weight"] = spec.weight_shape(transposed=(node.kind == "tconv"))
                if spec.has_bias:
                    shapes[f"{node.path}.bias"] = (spec.out_channels,)
            elif node.kind == "bn":
                for name in ("gamma", "beta", "running_mean", "running_var"):
                    shapes[f"{node.path}.{name}"] = (node.channels,)
        return shapes


def _input(channels):
    return Node("input", "input", (), channels=channels)


def _conv(nodes, path, src, cin, cout, k, stride=1, pad=None, bias=False):
    if pad is None:
        pad = (k // 2 if isinstance(k, int) else k[0] // 2)
    spec = ops.ConvSpec(cin, cout, kernel=k, stride=stride, pad=pad, has_bias=bias)
    nodes.append(Node(path, "conv", (src,), conv=spec))
    return path


def _tconv(nodes, path, src, cin, cout, k, stride, pad, output_pad, bias=False):
    spec = ops.ConvSpec(cin, cout, kernel=k, stride=stride, pad=pad,
                        output_pad=output_pad, has_bias=bias)
    nodes.append(Node(path, "tconv", (src,), conv=spec))
    return path


def _bn(nodes, path, src, channels):
    nodes.append(Node(path, "bn", (src,), channels=channels))
    return path


def _relu(nodes, path, src):
    nodes.append(Node(path, "relu", (src,)))
    return path


def _emit_stem(nodes, src, in_channels, out_channels, prefix="init"):
    x = _conv(nodes, f"{prefix}.conv", src, in_channels, out_channels, 7, stride=2, pad=3)
    x = _bn(nodes, f"{prefix}.bn", x, out_channels)
    x = _relu(nodes, f"{prefix}.relu", x)
    nodes.append(Node(f"{prefix}.pool", "pool", (x,)))
    return f"{prefix}.pool"


def _emit_residual_unit(nodes, src, prefix, cin, cout, stride):
    x = _conv(nodes, f"{prefix}.conv1", src, cin, cout, 3, stride=stride, pad=1)
    x = _bn(nodes, f"{prefix}.bn1", x, cout)
    x = _relu(nodes, f"{prefix}.relu1", x)
    x = _conv(nodes, f"{prefix}.conv2", x, cout, cout, 3, stride=1, pad=1)
    x = _bn(nodes, f"{prefix}.bn2", x, cout)
    shortcut = src
    if cin != cout or stride != 1:
        s = _conv(nodes, f"{prefix}.proj", src, cin, cout, 1, stride=stride, pad=0)
        shortcut = _bn(nodes, f"{prefix}.proj_bn", s, cout)
    nodes.append(Node(f"{prefix}.add", "add", (x, shortcut)))
    return _relu(nodes, f"{prefix}.relu2", f"{prefix}.add")


def _emit_encoder_block(nodes, src, index, m, n, downsample):
    x = _emit_residual_unit(nodes, src, f"enc{index}.unit1", m, n, 2 if downsample else 1)
    return _emit_residual_unit(nodes, x, f"enc{index}.unit2", n, n, 1)


def _emit_decoder_block(nodes, src, index, m, n, upsample):
    if m % 4:
        raise GraphBuildError(f"decoder block {index}: input width {m} not divisible by 4")
    q = m // 4
    prefix = f"dec{index}"
    x = _conv(nodes, f"{prefix}.conv1", src, m, q, 1, stride=1, pad=0)
    x = _bn(nodes, f"{prefix}.bn1", x, q)
    x = _relu(nodes, f"{prefix}.relu1", x)
    if upsample:
        x = _tconv(nodes, f"{prefix}.tconv", x, q, q, 3, stride=2, pad=1, output_pad=1)
    else:
        x = _tconv(nodes, f"{prefix}.tconv", x, q, q, 3, stride=1, pad=1, output_pad=0)
    x = _bn(nodes, f"{prefix}.bn2", x, q)
    x = _relu(nodes, f"{prefix}.relu2", x)
    x = _conv(nodes, f"{prefix}.conv2", x, q, n, 1, stride=1, pad=0)
    x = _bn(nodes, f"{prefix}.bn3", x, n)
    return _relu(nodes, f"{prefix}.relu3", x)


def _emit_head(nodes, src, in_width, num_classes, prefix="final"):
    half = max(in_width // 2, 1)
    x = _tconv(nodes, f"{prefix}.tconv1", src, in_width, half, 3, stride=2, pad=1, output_pad=1)
    x = _bn(nodes, f"{prefix}.bn1", x, half)
    x = _relu(nodes, f"{prefix}.relu1", x)
    x = _conv(nodes, f"{prefix}.conv", x, half, half, 3, stride=1, pad=1)
    x = _bn(nodes, f"{prefix}.bn2", x, half)
    x = _relu(nodes, f"{prefix}.relu2", x)
    return _tconv(nodes, f"{prefix}.tconv2", x, half, num_classes, 2,
                  stride=2, pad=0, output_pad=0, bias=True)


def build_initial_block(in_channels=3, out_channels=64):
    """Stem as a standalone graph: 7x7/2 conv, bn, relu, 3x3/2 max pool."""
    nodes = [_input(in_channels)]
    _emit_stem(nodes, "input", in_channels, out_channels)
    return Graph(nodes)


def build_encoder_block(index, m, n, downsample=True):
    """Two residual units, the first strided/projected when shape changes."""
    nodes = [_input(m)]
    _emit_encoder_block(nodes, "input", index, m, n, downsample)
    return Graph(nodes)


def build_decoder_block(index, m, n, upsample=True):
    """Bottlenecked m -> m/4 -> n stage with learned upsampling in the middle."""
    nodes = [_input(m)]
    _emit_decoder_block(nodes, "input", index, m, n, upsample)
    return Graph(nodes)


def build_final_block(num_classes, in_width=64):
    """Classifier head: tconv 3x3/2, conv 3x3, tconv 2x2/2 to class scores."""
    nodes = [_input(in_width)]
    _emit_head(nodes, "input", in_width, num_classes)
    return Graph(nodes)


def build_network(config):
    """Full network graph per ``config``; raises GraphBuildError on bad configs."""
    config.validate()
    enc_w, dec_w = config.encoder_widths, config.decoder_widths
    nodes = [_input(config.in_channels)]
    x = _emit_stem(nodes, "input", config.in_channels, enc_w[0][0])
    bypass_src = []
    for i, (m, n) in enumerate(enc_w, 1):
        bypass_src.append(x)
        x = _emit_encoder_block(nodes, x, i, m, n, downsample=(i != 1))
    for i in (4, 3, 2, 1):
        m, n = dec_w[i - 1]
        x = _emit_decoder_block(nodes, x, i, m, n, upsample=(i != 1))
        if config.bypass:
            nodes.append(Node(f"bypass{i}", "add", (x, bypass_src[i - 1])))
            x = f"bypass{i}"
    _emit_head(nodes, x, enc_w[0][0], config.num_classes)
    return Graph(nodes, config)


def init_params(graph, seed):
    """Fresh parameter store, deterministic in ``seed``.

    Conv weights draw from a zero-mean normal scaled by sqrt(2 / fan_in)
    with fan_in = Cin * kh * kw; biases start at zero; norm layers start
    as the identity. A single generator stream is consumed in node order,
    so equal seeds give bit-identical stores.
    """
    rng = Prng(seed)
    store = {}
    for node in graph.nodes:
        if node.kind in ("conv", "tconv"):
            spec = node.conv
            shape = spec.weight_shape(transposed=(node.kind == "tconv"))
            fan_in = spec.in_channels * spec.kernel[0] * spec.kernel[1]
            store[f"{node.path}.weight"] = he_normal_init(rng, shape, fan_in)
            if spec.has_bias:
                store[f"{node.path}.bias"] = np.zeros(spec.out_channels, dtype=REAL)
        elif node.kind == "bn":
            c = node.channels
            store[f"{node.path}.gamma"] = np.ones(c, dtype=REAL)
            store[f"{node.path}.beta"] = np.zeros(c, dtype=REAL)
            store[f"{node.path}.running_mean"] = np.zeros(c, dtype=REAL)
            store[f"{node.path}.running_var"] = np.ones(c, dtype=REAL)
    return store


def trainable_keys(store):
    return [k for k in store if not k.endswith(".running_mean") and not k.endswith(".running_var")]


def _bn_state(params, path):
    return ops.BatchNormState(
        gamma=params[f"{path}.gamma"], beta=params[f"{path}.beta"],
        running_mean=params[f"{path}.running_mean"], running_var=params[f"{path}.running_var"])


def forward(graph, params, x, mode="train"):
    """Run the graph on a batch; returns (output, cache).

    ``mode='train'`` normalizes with batch statistics and writes updated
    running estimates back into ``params``; ``mode='infer'`` reads the
    stored estimates and touches nothing. The cache feeds ``backward``.
    Activations are dropped as soon as their last consumer has run.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"forward mode must be 'train' or 'infer', got {mode!r}")
    if not graph.nodes:
        raise ValueError("cannot run an empty graph")
    first = graph.nodes[0]
    if x.ndim != 4:
        raise ValueError(f"forward expects a rank-4 batch, got shape {x.shape}")
    if first.channels and x.shape[1] != first.channels:
        raise ValueError(f"input has {x.shape[1]} channels, graph expects {first.channels}")
    if graph.config is not None:
        h, w = x.shape[2], x.shape[3]
        if h % INPUT_DIVISOR or w % INPUT_DIVISOR:
            raise ValueError(f"input spatial size {h}x{w} must be divisible by {INPUT_DIVISOR}")

    acts = {first.path: np.ascontiguousarray(x, dtype=x.dtype)}
    remaining = dict(graph.consumers)
    remaining[graph.output_path] = remaining.get(graph.output_path, 0) + 1
    cache = {}

    def take(ref):
        a = acts[ref]
        remaining[ref] -= 1
        if remaining[ref] == 0:
            del acts[ref]
        return a

    for node in graph.nodes[1:]:
        try:
            if node.kind == "conv":
                a = take(node.inputs[0])
                y = ops.conv2d(a, node.conv, params[f"{node.path}.weight"],
                               params.get(f"{node.path}.bias"))
                cache[node.path] = a
            elif node.kind == "tconv":
                a = take(node.inputs[0])
                y = ops.conv_transpose2d(a, node.conv, params[f"{node.path}.weight"],
                                         params.get(f"{node.path}.bias"))
                cache[node.path] = a
            elif node.kind == "bn":
                a = take(node.inputs[0])
                y, new_state, c = ops.batchnorm2d(a, _bn_state(params, node.path), mode)
                if mode == "train":
                    params[f"{node.path}.running_mean"] = new_state.running_mean
                    params[f"{node.path}.running_var"] = new_state.running_var
                cache[node.path] = c
            elif node.kind == "relu":
                a = take(node.inputs[0])
                y = ops.relu(a)
                cache[node.path] = a
            elif node.kind == "pool":
                a = take(node.inputs[0])
                y, argmax = ops.maxpool2d(a)
                cache[node.path] = (argmax, a.shape)
            elif node.kind == "add":
                y = add(take(node.inputs[0]), take(node.inputs[1]))
            else:
                raise ValueError(f"unknown node kind {node.kind!r}")
        except ValueError as err:
            raise ValueError(f"at node {node.path!r}: {err}") from err
        acts[node.path] = y
    return acts[graph.output_path], cache


def backward(graph, params, cache, grad_output):
    """Reverse sweep; returns gradients for every trainable parameter.

    ``grad_output`` is the cotangent of the graph output. Fan-out (a value
    consumed by several nodes) accumulates by addition. Running statistics
    get no gradient.
    """
    gacts = {graph.output_path: grad_output}
    grads = {}

    def push(ref, g):
        if ref in gacts:
            gacts[ref] = gacts[ref] + g
        else:
            gacts[ref] = g

    for node in reversed(graph.nodes[1:]):
        gy = gacts.pop(node.path, None)
        if gy is None:
            continue
        if node.kind == "conv":
            gx, gw, gb = ops.conv2d_vjp(cache[node.path], node.conv,
                                        params[f"{node.path}.weight"], gy)
            grads[f"{node.path}.weight"] = gw
            if gb is not None:
                grads[f"{node.path}.bias"] = gb
            push(node.inputs[0], gx)
        elif node.kind == "tconv":
            gx, gw, gb = ops.conv_transpose2d_vjp(cache[node.path], node.conv,
                                                  params[f"{node.path}.weight"], gy)
            grads[f"{node.path}.weight"] = gw
            if gb is not None:
                grads[f"{node.path}.bias"] = gb
            push(node.inputs[0], gx)
        elif node.kind == "bn":
            gx, dgamma, dbeta = ops.batchnorm2d_vjp(cache[node.path], gy)
            grads[f"{node.path}.gamma"] = dgamma
            grads[f"{node.path}.beta"] = dbeta
            push(node.inputs[0], gx)
        elif node.kind == "relu":
            push(node.inputs[0], ops.relu_vjp(cache[node.path], gy))
        elif node.kind == "pool":
            argmax, in_shape = cache[node.path]
            push(node.inputs[0], ops.maxpool2d_vjp(argmax, gy, in_shape))
        elif node.kind == "add":
            push(node.inputs[0], gy)
            push(node.inputs[1], gy)
    return grads


def infer_shapes(graph, input_hw, strict=True):
    """Map node path -> (C, H, W) without running tensors.

    ``strict=False`` lets an add node adopt its first (trunk) input shape
    when the branches disagree, which keeps cost analysis usable at
    resolutions the strict runtime would reject.
    """
    if not graph.nodes:
        return {}
    first = graph.nodes[0]
    shapes = {first.path: (first.channels, int(input_hw[0]), int(input_hw[1]))}
    for node in graph.nodes[1:]:
        if node.kind in ("conv", "tconv"):
            c, h, w = shapes[node.inputs[0]]
            if c != node.conv.in_channels:
                raise GraphBuildError(f"node {node.path!r}: {c} input channels, spec wants "
                                      f"{node.conv.in_channels}")
            out = (ops.tconv_out_shape if node.kind == "tconv" else ops.conv_out_shape)(
                node.conv, (h, w))
            shapes[node.path] = (node.conv.out_channels, out[0], out[1])
        elif node.kind == "pool":
            c, h, w = shapes[node.inputs[0]]
            shapes[node.path] = (c, (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1)
        elif node.kind == "add":
            a, b = shapes[node.inputs[0]], shapes[node.inputs[1]]
            if a != b and strict:
                raise GraphBuildError(f"node {node.path!r}: branch shapes {a} and {b} differ")
            shapes[node.path] = a
        else:
            shapes[node.path] = shapes[node.inputs[0]]
    return shapes
