import pytest
import torch
import torch.nn as nn

from dpit import _flops
from dpit.baselines import DAIB
from dpit.complexity import BlockDims, compare_blocks, count_flops, count_params, report
from dpit.dscra import DSCRAB, WindowAttention
from dpit.dscrt import DPIT, DSCRT, NetworkConfig
from dpit.errors import ConfigurationError
from dpit.llcm import LLCN, LLCNConfig

from oracles import counted_dscrab

SMALL_NET = NetworkConfig(channels=(8, 8, 16, 16), window_size=2, num_heads=1)


def _conv_loops(conv, x):
    """Direct convolution with an operation counter (MAC = 2, bias add = 1)."""
    w, b = conv.weight.tolist(), conv.bias.tolist() if conv.bias is not None else None
    C, H, W = x.shape
    kh, kw = conv.kernel_size
    s, p = conv.stride[0], conv.padding[0]
    Ho, Wo = (H + 2 * p - kh) // s + 1, (W + 2 * p - kw) // s + 1
    xs = x.tolist()
    n = 0
    out = [[[0.0] * Wo for _ in range(Ho)] for _ in range(conv.out_channels)]
    for o in range(conv.out_channels):
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0
                for c in range(C):
                    for a in range(kh):
                        for bb in range(kw):
                            y, xx = i * s + a - p, j * s + bb - p
                            v = xs[c][y][xx] if 0 <= y < H and 0 <= xx < W else 0.0
                            acc += w[o][c][a][bb] * v
                            n += 2
                if b is not None:
                    acc += b[o]
                    n += 1
                out[o][i][j] = acc
    return n, out


@pytest.mark.parametrize("k,stride,pad,bias", [(3, 1, 1, True), (3, 2, 1, True), (1, 1, 0, False)])
def test_conv_formula_matches_counter(k, stride, pad, bias):
    torch.manual_seed(0)
    conv = nn.Conv2d(2, 3, k, stride=stride, padding=pad, bias=bias).double()
    x = torch.randn(2, 6, 6, dtype=torch.float64)
    n, out = _conv_loops(conv, x)
    flops, shape = _flops.conv2d(conv, tuple(x.shape))
    assert flops == n
    assert torch.allclose(conv(x[None])[0], torch.tensor(out, dtype=torch.float64), atol=1e-12)
    assert shape == tuple(conv(x[None]).shape[1:])


def test_linear_convention():
    lin = nn.Linear(6, 6)
    assert count_params(lin) == 6 * 6 + 6
    assert count_params(nn.Linear(6, 6, bias=False)) == 36
    assert _flops.linear(lin, 10) == 2 * 10 * 36 + 10 * 6


def test_qk_term_convention():
    attn = WindowAttention(8, 2, 2)
    M, C, h = 4, 8, 2
    proj = 3 * _flops.linear(attn.q, M)
    expected = proj + 2 * M * M * C + M * M * h * (2 + _flops.SOFTMAX_PER_LOGIT) + 2 * M * M * C
    assert attn.flops(M) == expected


def test_params_match_framework_count_and_skip_frozen():
    torch.manual_seed(0)
    llcn = LLCN(LLCNConfig(widths=(4, 8), image_size=8))
    model = DPIT(llcn, DSCRT(SMALL_NET))
    assert count_params(model) == sum(p.numel() for p in model.parameters())
    llcn.requires_grad_(False)
    assert count_params(model) == sum(p.numel() for p in model.dscrt.parameters())
    b = DSCRAB(8, 2, 2)
    assert count_params(b) > 0


def test_block_counter_oracle_exact():
    for C, heads, H in ((4, 1, 4), (4, 2, 4), (8, 2, 4)):
        torch.manual_seed(C + heads)
        block = DSCRAB(C, window_size=2, num_heads=heads).double()
        x = torch.randn(2, 1, C, H, H, dtype=torch.float64)
        count, _, _ = counted_dscrab(block, x[0], x[1])
        assert count_flops(block, (C, H, H)) == count


def test_flops_linear_in_windows():
    block = DSCRAB(16, window_size=4, num_heads=2)
    a = block.attention_flops((16, 16, 16))
    b = block.attention_flops((16, 32, 16))
    assert b == 2 * a
    # the channel-attention MLP acts on pooled features, so the whole block is only affine in H*W
    f1, f2, f3 = (block.flops((16, 16 * k, 16)) for k in (1, 2, 3))
    assert f3 - f2 == f2 - f1 and f2 < 2 * f1


def test_compare_blocks_default_dims():
    r = compare_blocks()
    assert r["attention_evaluations"] == {"dscrab": 2, "daib": 4}
    assert r["attention_ratio"] == pytest.approx(0.5, abs=1e-12)
    assert r["flops_reduction"] >= 0.25
    assert r["params"]["dscrab"] == r["params"]["daib"]
    with pytest.raises(ConfigurationError):
        compare_blocks(BlockDims(channels=7))


def test_daib_costs_more_than_dscrab():
    assert count_flops(DAIB(16, 4, 2), (16, 16, 16)) > count_flops(DSCRAB(16, 4, 2), (16, 16, 16))


def test_report_rows_sum_to_totals():
    torch.manual_seed(0)
    model = DPIT(LLCN(LLCNConfig(widths=(4, 8), image_size=8)), DSCRT(SMALL_NET))
    rep = report(model, 16)
    assert sum(r[1] for r in rep.rows) == rep.params == count_params(model)
    assert sum(r[2] for r in rep.rows) == rep.flops == count_flops(model, 16)
    csv_lines = rep.to_csv().splitlines()
    assert csv_lines[0] == "name,params,flops" and csv_lines[-1].startswith("total,")
    assert "FLOPs convention" in rep.pretty()


def test_dpit_flops_add_llcn_flops():
    torch.manual_seed(0)
    llcn = LLCN(LLCNConfig(widths=(4, 8), image_size=8))
    net = DSCRT(SMALL_NET)
    model = DPIT(llcn, net)
    size = 16
    assert count_flops(model, size) == count_flops(llcn, size) + count_flops(net, size)
