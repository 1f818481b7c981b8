"""Static cost analysis: parameter counts, multiply-accumulates, model size.

Counting rules
--------------
* conv and transposed conv: Cout * Cin * kh * kw * Hout * Wout MACs, always
  over the layer's own output size.
* batch norm: 2 * C * H * W MACs (one scale, one shift per element).
* relu / max pool / add: one elementwise op per output element, tracked
  separately from MACs.
* FLOPs = 2 * MACs. The batch dimension is excluded everywhere.

Shape propagation is relaxed (add nodes keep the trunk shape), so reports
work at resolutions the strict runtime would reject; additions carry no
MACs so totals are unaffected.
"""
from dataclasses import dataclass

from .model import infer_shapes


@dataclass(frozen=True)
class CostRow:
    path: str
    kind: str
    out_shape: tuple      # (C, H, W)
    params: int
    macs: int
    elementwise: int


@dataclass(frozen=True)
class CostReport:
    rows: tuple
    total_params: int
    total_macs: int
    total_elementwise: int

    @property
    def total_flops(self):
        return 2 * self.total_macs

    def size_bytes(self, bytes_per_param=2):
        return self.total_params * bytes_per_param


def _node_params(node):
    if node.kind in ("conv", "tconv"):
        spec = node.conv
        n = spec.out_channels * spec.in_channels * spec.kernel[0] * spec.kernel[1]
        if spec.has_bias:
            n += spec.out_channels
        return n
    if node.kind == "bn":
        return 2 * node.channels
    return 0


def count_params(graph):
    """Learnable scalars in the graph (running statistics excluded)."""
    return sum(_node_params(node) for node in graph.nodes)


def cost_report(graph, input_hw):
    """Per-node cost table for a single sample at ``input_hw`` = (H, W)."""
    shapes = infer_shapes(graph, input_hw, strict=False)
    rows = []
    for node in graph.nodes:
        c, h, w = shapes[node.path]
        macs = 0
        elementwise = 0
        if node.kind in ("conv", "tconv"):
            spec = node.conv
            macs = spec.out_channels * spec.in_channels * spec.kernel[0] * spec.kernel[1] * h * w
        elif node.kind == "bn":
            macs = 2 * c * h * w
        elif node.kind in ("relu", "pool", "add"):
            elementwise = c * h * w
        rows.append(CostRow(node.path, node.kind, (c, h, w), _node_params(node), macs, elementwise))
    return CostReport(
        rows=tuple(rows),
        total_params=sum(r.params for r in rows),
        total_macs=sum(r.macs for r in rows),
        total_elementwise=sum(r.elementwise for r in rows),
    )


def count_macs(graph, input_hw):
    return cost_report(graph, input_hw).total_macs


def model_size_bytes(graph, bytes_per_param=2):
    return count_params(graph) * bytes_per_param


def format_table(report, bytes_per_param=2):
    """Human-readable aligned table with a totals block."""
    heads = ("node", "kind", "out CxHxW", "params", "MACs", "elementwise")
    body = [(r.path, r.kind, "x".join(str(d) for d in r.out_shape),
             f"{r.params:,}", f"{r.macs:,}", f"{r.elementwise:,}") for r in report.rows]
    widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(heads)]

    def line(cells):
        parts = []
        for i, cell in enumerate(cells):
            parts.append(cell.ljust(widths[i]) if i < 3 else cell.rjust(widths[i]))
        return "  ".join(parts)
    out = [line(heads), line(tuple("-" * w for w in widths))]
    out.extend(line(row) for row in body)
    out.append(line(tuple("-" * w for w in widths)))
    out.append(line(("total", "", "", f"{report.total_params:,}",
                     f"{report.total_macs:,}", f"{report.total_elementwise:,}")))
    gmacs = report.total_macs / 1e9
    out.append("")
    out.append(f"params:       {report.total_params:,}")
    out.append(f"MACs:         {report.total_macs:,} ({gmacs:.3f} G)")
    out.append(f"FLOPs:        {report.total_flops:,} ({2 * gmacs:.3f} G)")
    out.append(f"elementwise:  {report.total_elementwise:,}")
    size = report.size_bytes(bytes_per_param)
    out.append(f"size @ {bytes_per_param} B/param: {size:,} bytes ({size / 2**20:.2f} MiB)")
    return "\n".join(out)


def format_records(report):
    """Machine-readable TSV: one row per node plus a 'total' row."""
    lines = ["path\tkind\tout_c\tout_h\tout_w\tparams\tmacs\telementwise"]
    for r in report.rows:
        c, h, w = r.out_shape
        lines.append(f"{r.path}\t{r.kind}\t{c}\t{h}\t{w}\t{r.params}\t{r.macs}\t{r.elementwise}")
    lines.append(f"total\t-\t0\t0\t0\t{report.total_params}\t{report.total_macs}\t{report.total_elementwise}")
    return "\n".join(lines)
