"""Dense tensor helpers and deterministic random initialization.

Tensors are plain numpy arrays in row-major (C) order, float32 for real
data and int32 for label/index data. Rank-4 activations use NCHW layout,
so index (n, c, h, w) lives at flat offset ((n*C + c)*H + h)*W + w.
"""
import numpy as np

REAL = np.float32
INT = np.int32

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class Prng:
    """splitmix64 generator: a 64-bit counter mixed through two xor-multiply
    rounds. Same seed gives the same stream on every platform."""

    def __init__(self, seed):
        self.state = int(seed) & 0xFFFFFFFFFFFFFFFF

    def next_u64(self, n=1):
        """Return the next n raw 64-bit outputs as a uint64 array."""
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = (np.uint64(self.state) + idx * np.uint64(_GAMMA)) & _MASK64
        self.state = (self.state + n * _GAMMA) & 0xFFFFFFFFFFFFFFFF
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n=1):
        """n float64 samples in [0, 1), 53-bit resolution."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, n=1):
        """n float64 samples from the standard normal, via Box-Muller."""
        pairs = (n + 1) // 2
        # shift into (0, 1] so log never sees zero
        u1 = ((self.next_u64(pairs) >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * 2.0 ** -53
        u2 = (self.next_u64(pairs) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def randint(self, lo, hi, n=1):
        """n int64 samples uniform over [lo, hi)."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        span = np.uint64(hi - lo)
        return (lo + (self.next_u64(n) % span).astype(np.int64))

    def permutation(self, n):
        """Deterministic Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        draws = self.next_u64(n)
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] % np.uint64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def zeros(shape, dtype=REAL):
    """All-zero tensor of the given shape. Empty shapes are rejected."""
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ValueError("empty shape")
    if any(d < 1 for d in shape):
        raise ValueError(f"all dims must be >= 1, got {shape}")
    return np.zeros(shape, dtype=dtype)


def add(a, b):
    """Elementwise sum of two same-shape real tensors."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in add: {a.shape} vs {b.shape}")
    return a + b


def pad2d(x, pad, fill=0.0):
    """Pad the spatial dims of a rank-4 NCHW tensor.

    pad is (top, bottom, left, right); the border is filled with `fill`
    (use -inf when feeding a max reduction).
    """
    if x.ndim != 4:
        raise ValueError(f"pad2d expects rank-4 input, got rank {x.ndim}")
    top, bottom, left, right = pad
    if min(top, bottom, left, right) < 0:
        raise ValueError(f"negative pad {pad}")
    if top == bottom == left == right == 0:
        return x
    n, c, h, w = x.shape
    out = np.full((n, c, h + top + bottom, w + left + right), fill, dtype=x.dtype)
    out[:, :, top:top + h, left:left + w] = x
    return out


def he_normal_init(rng, shape, fan_in):
    """Kernel init: normal(0, sqrt(2/fan_in)) draws, deterministic per rng state."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    n = int(np.prod(shape))
    std = np.sqrt(2.0 / fan_in)
    return (rng.normal(n) * std).astype(REAL).reshape(shape)


def flat_offset(shape, index):
    """Row-major flat offset of a multi-index; the NCHW formula for rank 4."""
    if len(shape) != len(index):
        raise ValueError("rank mismatch")
    off = 0
    for d, i in zip(shape, index):
        if not 0 <= i < d:
            raise IndexError(f"index {index} out of bounds for shape {shape}")
        off = off * d + i
    return off
