"""Parameter and FLOP accounting for blocks and networks.

FLOPs are analytic (closed-form per layer, see :mod:`dpit._flops` for the
counting convention) and reported for one image, i.e. batch size 1.
Parameters count only tensors with ``requires_grad`` set, so frozen
extractors are excluded.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from . import _flops
from .baselines import DAIB
from .dscra import DSCRAB
from .dscrt import DPIT, DSCRT
from .errors import ConfigurationError


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


@dataclass
class ComplexityReport:
    params: int
    flops: int
    input_size: tuple
    rows: list = field(default_factory=list)  # (name, params, flops)
    convention: str = _flops.CONVENTION

    def __post_init__(self):
        if self.rows:
            if sum(r[1] for r in self.rows) != self.params or sum(r[2] for r in self.rows) != self.flops:
                raise AssertionError("breakdown rows do not add up to the totals")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "params", "flops"])
        for name, p, f in self.rows:
            w.writerow([name, p, f])
        w.writerow(["total", self.params, self.flops])
        return buf.getvalue()

    def pretty(self) -> str:
        lines = [f"# FLOPs convention: {self.convention}",
                 f"# input: {'x'.join(str(s) for s in self.input_size)}",
                 f"{'block':<12}{'params(M)':>12}{'FLOPs(G)':>12}"]
        for name, p, f in self.rows + [("total", self.params, self.flops)]:
            lines.append(f"{name:<12}{p / 1e6:>12.4f}{f / 1e9:>12.4f}")
        return "\n".join(lines)


def _shape(input_size):
    if isinstance(input_size, int):
        return (3, input_size, input_size)
    return tuple(input_size)


def count_flops(model: nn.Module, input_size) -> int:
    """Analytic FLOPs of ``model`` for one input of ``input_size``.

    ``input_size`` is an int (square RGB image), or a ``(C, H, W)`` tuple for
    single blocks.
    """
    shape = _shape(input_size)
    if isinstance(model, DPIT):
        _, H, W = shape
        m = model.multiple
        padded = (shape[0], H + (-H) % m, W + (-W) % m)
        return model.llcn.flops(padded) + model.dscrt.flops(padded)
    if hasattr(model, "flops"):
        return int(model.flops(shape))
    return int(_flops.layer(model, shape)[0])


def report(model: nn.Module, input_size) -> ComplexityReport:
    shape = _shape(input_size)
    if isinstance(model, DPIT):
        m = model.multiple
        padded = (shape[0], shape[1] + (-shape[1]) % m, shape[2] + (-shape[2]) % m)
        rows = [("llcn", count_params(model.llcn), model.llcn.flops(padded))]
        rows += [(n, p, f) for n, p, f in model.dscrt.breakdown(padded)]
    elif isinstance(model, DSCRT):
        rows = model.breakdown(shape)
    else:
        rows = [(type(model).__name__, count_params(model), count_flops(model, shape))]
    unlisted = count_params(model) - sum(r[1] for r in rows)
    if unlisted:
        rows.append(("other", unlisted, 0))
    return ComplexityReport(params=count_params(model), flops=sum(r[2] for r in rows), input_size=shape, rows=rows)


@dataclass(frozen=True)
class BlockDims:
    channels: int = 64
    height: int = 32
    width: int = 32
    window_size: int = 4
    num_heads: int = 2
    ffn_expansion: int = 2


def _attention_calls(block: nn.Module, shape) -> int:
    attns = [m for m in block.modules() if hasattr(m, "calls")]
    for m in attns:
        m.calls = 0
    x = torch.zeros(1, *shape)
    with torch.no_grad():
        block(x, x)
    return sum(m.calls for m in attns)


def compare_blocks(dims: BlockDims = BlockDims()) -> dict:
    """DSCRAB vs DAIB at identical width, resolution, window size and heads."""
    C, H, W, ws = dims.channels, dims.height, dims.width, dims.window_size
    if C % 2 or C % dims.num_heads or H % ws or W % ws:
        raise ConfigurationError(f"incompatible block dimensions {dims}")
    shape = (C, H, W)
    dscrab = DSCRAB(C, ws, dims.num_heads, dims.ffn_expansion)
    daib = DAIB(C, ws, dims.num_heads, dims.ffn_expansion)
    f_dscrab, f_daib = dscrab.flops(shape), daib.flops(shape)
    a_dscrab, a_daib = dscrab.attention_flops(shape), daib.attention_flops(shape)
    return {
        "dims": dims,
        "params": {"dscrab": count_params(dscrab), "daib": count_params(daib)},
        "flops": {"dscrab": f_dscrab, "daib": f_daib},
        "attention_flops": {"dscrab": a_dscrab, "daib": a_daib},
        "attention_evaluations": {"dscrab": _attention_calls(dscrab, shape), "daib": _attention_calls(daib, shape)},
        "flops_ratio": f_daib / f_dscrab,
        "flops_reduction": 1.0 - f_dscrab / f_daib,
        "attention_ratio": a_dscrab / a_daib,
    }
