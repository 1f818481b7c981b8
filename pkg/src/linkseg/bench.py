"""Forward-latency measurement harness.

Times infer-mode forwards of the full network on random input at a set of
resolutions, reporting median/p10/p90 milliseconds and frames per second,
with the static MAC count alongside so throughput can be read against
arithmetic work. Timing is wall-clock and machine-dependent; everything
else in the report is deterministic.
"""
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .analyze import count_macs
from .model import INPUT_DIVISOR, NetConfig, build_network, forward, init_params
from .tensor import REAL, Prng

DEFAULT_RESOLUTIONS = ((320, 480), (360, 640), (720, 1280))   # (H, W)


@dataclass(frozen=True)
class BenchRow:
    backend: str
    requested_hw: tuple
    effective_hw: tuple
    macs: int
    median_ms: float
    p10_ms: float
    p90_ms: float

    @property
    def fps(self):
        return 1000.0 / self.median_ms


def round_up(value, divisor=INPUT_DIVISOR):
    return ((value + divisor - 1) // divisor) * divisor


def time_forward(graph, params, x, iters=20, warmup=3):
    """Millisecond latencies of repeated infer-mode forwards."""
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    for _ in range(warmup):
        forward(graph, params, x, mode="infer")
    times = np.empty(iters, dtype=np.float64)
    for i in range(iters):
        t0 = time.perf_counter()
        forward(graph, params, x, mode="infer")
        times[i] = (time.perf_counter() - t0) * 1000.0
    return times


def run_bench(resolutions=DEFAULT_RESOLUTIONS, num_classes=20, width_div=1,
              iters=20, warmup=3, backends=("auto",), seed=0):
    """Bench every (resolution, backend) pair; returns a list of BenchRow."""
    rows = []
    for hw in resolutions:
        h, w = round_up(hw[0]), round_up(hw[1])
        config = NetConfig.scaled(num_classes=num_classes, width_div=width_div,
                                  input_hw=(h, w))
        graph = build_network(config)
        params = init_params(graph, seed)
        x = Prng(seed + 1).normal(3 * h * w).reshape(1, 3, h, w).astype(REAL)
        macs = count_macs(graph, (h, w))
        for name in backends:
            with kernels.use_backend(name) as be:
                times = time_forward(graph, params, x, iters, warmup)
                rows.append(BenchRow(
                    backend=be.NAME, requested_hw=(int(hw[0]), int(hw[1])),
                    effective_hw=(h, w), macs=macs,
                    median_ms=float(np.percentile(times, 50)),
                    p10_ms=float(np.percentile(times, 10)),
                    p90_ms=float(np.percentile(times, 90))))
    return rows


def format_rows(rows):
    lines = ["backend   requested   running     MACs            median ms      p10 ms      p90 ms       fps"]
    for r in rows:
        req = f"{r.requested_hw[0]}x{r.requested_hw[1]}"
        eff = f"{r.effective_hw[0]}x{r.effective_hw[1]}"
        lines.append(f"{r.backend:<9} {req:>9}   {eff:>9}   {r.macs:>14,}  {r.median_ms:>10.2f}"
                     f"  {r.p10_ms:>10.2f}  {r.p90_ms:>10.2f}  {r.fps:>8.2f}")
    return "\n".join(lines)
