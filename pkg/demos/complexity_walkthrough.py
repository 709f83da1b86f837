"""Cost of the two interaction blocks and of the full network at desk dimensions.

Prints the attention-evaluation counts, the block-level FLOPs reduction of
DSCRAB over DAIB and the per-component parameter/FLOP table of DPIT.

    python demos/complexity_walkthrough.py
"""
import torch

from dpit.complexity import BlockDims, compare_blocks, report
from dpit.dscrt import DPIT, DSCRT
from dpit.llcm import LLCN, LLCNConfig

dims = BlockDims()
r = compare_blocks(dims)
print(f"block dims {dims}")
print(f"attention evaluations: {r['attention_evaluations']}")
print(f"attention-only FLOPs ratio (dscrab / daib): {r['attention_ratio']:.3f}")
print(f"whole-block FLOPs reduction: {100 * r['flops_reduction']:.1f}%")
print(f"parameters: {r['params']}")

torch.manual_seed(0)
model = DPIT(LLCN(LLCNConfig()), DSCRT())
print()
print(report(model, 224).pretty())
