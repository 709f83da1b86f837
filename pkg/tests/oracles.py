"""Independent reference implementations used by the tests.

Everything here is written with explicit Python loops over plain floats (or
float64 tensors indexed element by element) so it shares no vectorised code
path with the package.
"""
from __future__ import annotations

import math

import torch


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def _sample_indices(n, limit, gen):
    if limit is None or n <= limit:
        return range(n)
    return torch.randperm(n, generator=gen)[:limit].tolist()


def gradient_mismatches(fn, tensors, eps=1e-6, rtol=1e-3, atol=1e-5, limit=None, seed=0):
    """Compare autograd gradients of scalar ``fn()`` with central differences.

    ``tensors`` are float64 leaves with ``requires_grad``; ``limit`` caps the
    number of entries checked per tensor (sampled with a fixed generator).
    Returns a list of ``(tensor_index, flat_index, analytic, numeric)`` failures
    and the number of entries checked.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t) for t in tensors]
    gen = torch.Generator().manual_seed(seed)
    bad, checked = [], 0
    with torch.no_grad():
        for ti, t in enumerate(tensors):
            flat = t.view(-1)
            for i in _sample_indices(flat.numel(), limit, gen):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = fn().item()
                flat[i] = orig - eps
                down = fn().item()
                flat[i] = orig
                num = (up - down) / (2 * eps)
                ana = analytic[ti].view(-1)[i].item()
                checked += 1
                if abs(ana - num) > max(rtol * max(abs(ana), abs(num)), atol):
                    bad.append((ti, i, ana, num))
    return bad, checked


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def _linear(x_row, weight, bias):
    out = []
    for o in range(len(weight)):
        acc = bias[o] if bias is not None else 0.0
        for i in range(len(x_row)):
            acc += weight[o][i] * x_row[i]
        out.append(acc)
    return out


def attention_loops(q_src, kv_src, attn):
    """Brute-force window attention: loops over windows, heads, queries and keys.

    Returns ``(output, weights)`` as nested lists ``[window][token][channel]`` and
    ``[window][head][query][key]``.
    """
    Wq, bq = attn.q.weight.tolist(), attn.q.bias.tolist()
    Wk, bk = attn.k.weight.tolist(), attn.k.bias.tolist()
    Wv, bv = attn.v.weight.tolist(), attn.v.bias.tolist()
    bias = attn.position_bias().tolist()
    h, d = attn.num_heads, attn.head_dim
    scale = 1.0 / math.sqrt(d)
    out, weights = [], []
    for qw, kw in zip(q_src.tolist(), kv_src.tolist()):
        Q = [_linear(t, Wq, bq) for t in qw]
        K = [_linear(t, Wk, bk) for t in kw]
        V = [_linear(t, Wv, bv) for t in kw]
        M = len(qw)
        win = [[0.0] * (h * d) for _ in range(M)]
        w_heads = []
        for head in range(h):
            sl = range(head * d, (head + 1) * d)
            rows = []
            for i in range(M):
                logits = []
                for j in range(M):
                    dot = sum(Q[i][c] * K[j][c] for c in sl)
                    logits.append(dot * scale + bias[head][i][j])
                top = max(logits)
                exps = [math.exp(x - top) for x in logits]
                z = sum(exps)
                p = [e / z for e in exps]
                rows.append(p)
                for c in sl:
                    win[i][c] = sum(p[j] * V[j][c] for j in range(M))
            w_heads.append(rows)
        out.append(win)
        weights.append(w_heads)
    return out, weights


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def mse_loops(x, y):
    xs, ys = x.reshape(-1).tolist(), y.reshape(-1).tolist()
    return sum((a - b) ** 2 for a, b in zip(xs, ys)) / len(xs)


def ssim_loops(x, y, window=11, sigma=1.5, K1=0.01, K2=0.03, peak=1.0):
    """Per-pixel sliding-window SSIM over valid window positions, per channel, averaged."""
    half = (window - 1) / 2.0
    g = [math.exp(-((i - half) ** 2) / (2 * sigma * sigma)) for i in range(window)]
    s = sum(g)
    g = [v / s for v in g]
    c1, c2 = (K1 * peak) ** 2, (K2 * peak) ** 2
    x = x.reshape(-1, *x.shape[-2:]).tolist()
    y = y.reshape(-1, *y.shape[-2:]).tolist()
    vals = []
    for xc, yc in zip(x, y):
        H, W = len(xc), len(xc[0])
        for top in range(H - window + 1):
            for left in range(W - window + 1):
                mx = my = sxx = syy = sxy = 0.0
                for a in range(window):
                    for b in range(window):
                        w = g[a] * g[b]
                        xv, yv = xc[top + a][left + b], yc[top + a][left + b]
                        mx += w * xv
                        my += w * yv
                        sxx += w * xv * xv
                        syy += w * yv * yv
                        sxy += w * xv * yv
                vx, vy, cxy = sxx - mx * mx, syy - my * my, sxy - mx * my
                vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def sq_mean_loops(a, b):
    a, b = a.reshape(-1).tolist(), b.reshape(-1).tolist()
    return sum((p - q) ** 2 for p, q in zip(a, b)) / len(a)


def abs_mean_loops(a, b):
    a, b = a.reshape(-1).tolist(), b.reshape(-1).tolist()
    return sum(abs(p - q) for p, q in zip(a, b)) / len(a)


def gradient_l1_loops(pred, target):
    """Mean |dx(pred) - dx(target)| + mean |dy(pred) - dy(target)| with forward differences."""
    p, t = pred.tolist(), target.tolist()
    sx = sy = 0.0
    nx = ny = 0
    for pb, tb in zip(p, t):
        for pc, tc in zip(pb, tb):
            H, W = len(pc), len(pc[0])
            for i in range(H):
                for j in range(W - 1):
                    sx += abs((pc[i][j + 1] - pc[i][j]) - (tc[i][j + 1] - tc[i][j]))
                    nx += 1
            for i in range(H - 1):
                for j in range(W):
                    sy += abs((pc[i + 1][j] - pc[i][j]) - (tc[i + 1][j] - tc[i][j]))
                    ny += 1
    return sx / nx + sy / ny


# ---------------------------------------------------------------------------
# instrumented FLOP counting for a micro DSCRAB
# ---------------------------------------------------------------------------

class Counter:
    def __init__(self):
        self.n = 0

    def add(self, k=1):
        self.n += k


def _cl_linear(x, weight, bias, ctr):
    """Counted dense layer on one vector."""
    out = []
    for o in range(len(weight)):
        acc = 0.0
        for i in range(len(x)):
            acc += weight[o][i] * x[i]
            ctr.add(2)
        if bias is not None:
            acc += bias[o]
            ctr.add(1)
        out.append(acc)
    return out


def _gelu(v):
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def counted_dscrab(block, left, right):
    """Run ``block`` on ``[1, C, H, W]`` inputs with explicit loops, counting FLOPs.

    Counting rules: multiply-accumulate 2, bias add 1, layer norm 7 per
    element, softmax 3 per logit, attention scale and bias add 1 each per
    logit, activations and elementwise ops 1 per element, spatial mean 1 per
    input element, pure data movement 0. Returns ``(count, out_l, out_r)``
    with outputs as nested ``[C][H][W]`` lists.
    """
    ctr = Counter()
    C, H, W = left.shape[1:]
    ws, heads = block.window_size, block.num_heads
    d = C // heads
    L, R = left[0].tolist(), right[0].tolist()

    def layer_norm(x, ln):
        w, b = ln.weight.tolist(), ln.bias.tolist()
        out = [[[0.0] * W for _ in range(H)] for _ in range(C)]
        for i in range(H):
            for j in range(W):
                v = [x[c][i][j] for c in range(C)]
                mu = sum(v) / C
                var = sum((a - mu) ** 2 for a in v) / C
                for c in range(C):
                    out[c][i][j] = (v[c] - mu) / math.sqrt(var + ln.eps) * w[c] + b[c]
        ctr.add(7 * C * H * W)
        return out

    nl, nr = layer_norm(L, block.norm_l), layer_norm(R, block.norm_r)
    h2 = C // 2
    gen = nl[:h2] + nr[:h2]
    exch = nl[h2:] + nr[h2:]

    def attend(attn, qs, kvs):
        Wq, bq = attn.q.weight.tolist(), attn.q.bias.tolist()
        Wk, bk = attn.k.weight.tolist(), attn.k.bias.tolist()
        Wv, bv = attn.v.weight.tolist(), attn.v.bias.tolist()
        bias = attn.position_bias().tolist()
        out = [[[0.0] * W for _ in range(H)] for _ in range(C)]
        for wi in range(0, H, ws):
            for wj in range(0, W, ws):
                pos = [(wi + a, wj + b) for a in range(ws) for b in range(ws)]
                Q = [_cl_linear([qs[c][p][q] for c in range(C)], Wq, bq, ctr) for p, q in pos]
                K = [_cl_linear([kvs[c][p][q] for c in range(C)], Wk, bk, ctr) for p, q in pos]
                V = [_cl_linear([kvs[c][p][q] for c in range(C)], Wv, bv, ctr) for p, q in pos]
                M = len(pos)
                for h in range(heads):
                    sl = range(h * d, (h + 1) * d)
                    for i in range(M):
                        logits = []
                        for j in range(M):
                            dot = 0.0
                            for c in sl:
                                dot += Q[i][c] * K[j][c]
                                ctr.add(2)
                            logits.append(dot / math.sqrt(d) + bias[h][i][j])
                            ctr.add(2)
                        exps = [math.exp(v) for v in logits]
                        z = sum(exps)
                        p_row = [e / z for e in exps]
                        ctr.add(3 * M)
                        for c in sl:
                            acc = 0.0
                            for j in range(M):
                                acc += p_row[j] * V[j][c]
                                ctr.add(2)
                            out[c][pos[i][0]][pos[i][1]] = acc
        return out

    a1 = attend(block.attn_intra, gen, gen)
    a2 = attend(block.attn_cross, gen, exch)
    Wp, bp = block.proj.weight.tolist(), block.proj.bias.tolist()
    comb = [[[0.0] * W for _ in range(H)] for _ in range(C)]
    for i in range(H):
        for j in range(W):
            s = [a1[c][i][j] + a2[c][i][j] for c in range(C)]
            ctr.add(C)
            o = _cl_linear(s, Wp, bp, ctr)
            for c in range(C):
                comb[c][i][j] = o[c]
    attn_l = comb[:h2] + comb[:h2]
    attn_r = comb[h2:] + comb[h2:]
    alpha, beta = block.alpha.item(), block.beta.item()

    def scaled_residual(x, y, scale):
        out = [[[x[c][i][j] + scale * y[c][i][j] for j in range(W)] for i in range(H)] for c in range(C)]
        ctr.add(2 * C * H * W)
        return out

    res_l, res_r = scaled_residual(L, attn_l, alpha), scaled_residual(R, attn_r, alpha)

    f = block.ffn

    def conv1x1(x, conv, cin, cout):
        w = conv.weight.reshape(cout, cin).tolist()
        b = conv.bias.tolist()
        out = [[[0.0] * W for _ in range(H)] for _ in range(cout)]
        for i in range(H):
            for j in range(W):
                o = _cl_linear([x[c][i][j] for c in range(cin)], w, b, ctr)
                for c in range(cout):
                    out[c][i][j] = o[c]
        return out

    def gate(x, other):
        g = conv1x1(other, f.gate, C, C)
        out = [[[x[c][i][j] * _sigmoid(g[c][i][j]) for j in range(W)] for i in range(H)] for c in range(C)]
        ctr.add(2 * C * H * W)
        return out

    def stream(x):
        means = [sum(x[c][i][j] for i in range(H) for j in range(W)) / (H * W) for c in range(C)]
        ctr.add(C * H * W)
        hid = f.ca[0].out_channels
        z = _cl_linear(means, f.ca[0].weight.reshape(hid, C).tolist(), f.ca[0].bias.tolist(), ctr)
        z = [_gelu(v) for v in z]
        ctr.add(hid)
        z = _cl_linear(z, f.ca[2].weight.reshape(C, hid).tolist(), f.ca[2].bias.tolist(), ctr)
        z = [_sigmoid(v) for v in z]
        ctr.add(C)
        y = [[[x[c][i][j] * z[c] for j in range(W)] for i in range(H)] for c in range(C)]
        ctr.add(C * H * W)
        E = f.expand.out_channels
        e = conv1x1(y, f.expand, C, E)
        e = [[[_gelu(v) for v in row] for row in ch] for ch in e]
        ctr.add(E * H * W)
        return conv1x1(e, f.contract, E, C)

    gl, gr = gate(res_l, res_r), gate(res_r, res_l)
    fl, fr = stream(gl), stream(gr)
    out_l, out_r = scaled_residual(res_l, fl, beta), scaled_residual(res_r, fr, beta)
    return ctr.n, out_l, out_r
