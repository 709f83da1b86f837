import pytest
import torch

from dpit.complexity import count_params
from dpit.errors import ConfigurationError
from dpit.llcm import (
    CorrectionField,
    DirectGenerationNet,
    GlobalLinearNet,
    LLCN,
    LLCNConfig,
    apply_correction,
    correction_loss,
    direct_generation_baseline,
    global_linear_baseline,
    llcn_forward,
    predict_fields,
)

from oracles import gradient_mismatches

MICRO = LLCNConfig(widths=(4, 8), image_size=8)


def _randomise_heads(model, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for dec in model.decoders:
            dec.head.weight.copy_(0.3 * torch.randn(dec.head.weight.shape, generator=g))
            dec.head.bias.copy_(0.1 * torch.randn(dec.head.bias.shape, generator=g))
    return model


def test_apply_correction_examples():
    I = torch.rand(1, 3, 8, 8)
    one, zero = torch.ones_like(I), torch.zeros_like(I)
    assert torch.equal(apply_correction(I, CorrectionField(one, zero)), I)
    assert torch.equal(apply_correction(I, CorrectionField(zero, zero)), zero)
    v = apply_correction(torch.tensor(0.6), CorrectionField(torch.tensor(0.5), torch.tensor(0.1)))
    assert v.item() == pytest.approx(0.4, abs=1e-7)


def test_apply_correction_unclamped_and_shape_checked():
    I = torch.ones(1, 3, 2, 2)
    out = apply_correction(I, CorrectionField(torch.ones_like(I), torch.ones_like(I)))
    assert out.max().item() == 2.0
    with pytest.raises(ValueError):
        apply_correction(I, CorrectionField(torch.ones(1, 3, 2, 3), torch.ones_like(I)))


def test_apply_correction_affine_in_image():
    g = torch.Generator().manual_seed(0)
    s, b, I1, I2 = (torch.rand(3, 4, 4, generator=g, dtype=torch.float64) for _ in range(4))
    a = 0.3
    f = CorrectionField(s, b)
    lhs = apply_correction(a * I1 + (1 - a) * I2, f)
    rhs = a * apply_correction(I1, f) + (1 - a) * apply_correction(I2, f)
    assert torch.allclose(lhs, rhs, atol=1e-15)


def test_correction_loss_examples():
    I = torch.rand(2, 3, 4, 4)
    f = CorrectionField(torch.rand_like(I), torch.rand_like(I))
    assert correction_loss(f, I, apply_correction(I, f)).item() == 0.0
    one = torch.ones(1, 1, 1, 1)
    v = correction_loss(CorrectionField(one, 0 * one), 0.5 * one, 0.7 * one)
    assert v.item() == pytest.approx(0.04, abs=1e-7)


def test_correction_loss_matches_loop_oracle():
    g = torch.Generator().manual_seed(1)
    I, s, b, T = (torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64) for _ in range(4))
    ref = 0.0
    for c in range(3):
        for y in range(4):
            for x in range(4):
                ref += (s[0, c, y, x].item() * I[0, c, y, x].item() + b[0, c, y, x].item() - T[0, c, y, x].item()) ** 2
    ref /= 3 * 4 * 4
    assert correction_loss(CorrectionField(s, b), I, T).item() == pytest.approx(ref, abs=1e-6)
    with pytest.raises(ValueError):
        correction_loss(CorrectionField(s, b), I, T[..., :3])


def test_fields_ranges_and_zero_init():
    torch.manual_seed(0)
    model = LLCN(MICRO).eval()
    I = torch.rand(2, 3, 8, 8)
    f = predict_fields(I, model)
    assert torch.equal(f.s, torch.full_like(I, 0.5)) and torch.equal(f.b, torch.zeros_like(I))
    _randomise_heads(model)
    f = predict_fields(4 * I - 2, model)
    assert f.s.shape == I.shape
    assert (f.s > 0).all() and (f.s < 1).all() and (f.b > -1).all() and (f.b < 1).all()
    f2 = predict_fields(4 * I - 2, model)
    assert torch.equal(f.s, f2.s) and torch.equal(f.b, f2.b)


def test_llcn_forward_is_composition():
    torch.manual_seed(0)
    model = _randomise_heads(LLCN(MICRO)).eval()
    I = torch.rand(1, 3, 8, 8)
    assert torch.equal(llcn_forward(I, model), apply_correction(I, predict_fields(I, model)))


def test_llcn_rejects_indivisible_size():
    with pytest.raises(ValueError):
        LLCN(MICRO)(torch.rand(1, 3, 6, 8))
    with pytest.raises(ConfigurationError):
        LLCNConfig(widths=(4, 8), image_size=6)


def test_llcn_gradients_match_finite_differences():
    torch.manual_seed(0)
    model = _randomise_heads(LLCN(MICRO)).double()
    g = torch.Generator().manual_seed(2)
    I = torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64)
    T = torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64)
    params = list(model.parameters())
    bad, checked = gradient_mismatches(lambda: correction_loss(model.predict_fields(I), I, T), params)
    assert checked == sum(p.numel() for p in params)
    assert not bad, bad[:5]


def test_direct_generation_baseline():
    torch.manual_seed(0)
    model = DirectGenerationNet(MICRO)
    I = torch.rand(1, 3, 8, 8)
    assert direct_generation_baseline(I, model).shape == I.shape
    assert count_params(model) < count_params(LLCN(MICRO))


def test_direct_generation_trains():
    torch.manual_seed(0)
    model = DirectGenerationNet(MICRO)
    g = torch.Generator().manual_seed(0)
    I, T = torch.rand(8, 3, 8, 8, generator=g), torch.rand(8, 3, 8, 8, generator=g)
    start = (model(I) - T).pow(2).mean().item()
    opt = torch.optim.Adam(model.parameters(), lr=1e-2)
    for _ in range(30):
        opt.zero_grad()
        loss = (model(I) - T).pow(2).mean()
        loss.backward()
        opt.step()
    assert (model(I) - T).pow(2).mean().item() < start


def test_global_linear_baseline():
    torch.manual_seed(0)
    model = _randomise_heads(GlobalLinearNet(MICRO))
    I = torch.rand(1, 3, 8, 8)
    assert global_linear_baseline(I, model).shape == I.shape
    assert torch.equal(model(I, torch.ones(1), torch.zeros(1)), I)
    a, b = model.coefficients(I)
    assert a.shape == (1, 3, 1, 1) and b.shape == (1, 3, 1, 1)
    out = model(I)
    assert torch.allclose(out, a * I + b)


def test_global_linear_fits_worse_than_local_on_varying_reflection():
    # paired smoke run: a spatially varying reflection needs per-pixel fields
    g = torch.Generator().manual_seed(0)
    T = torch.rand(8, 3, 8, 8, generator=g)
    ramp = torch.linspace(0, 1, 8).view(1, 1, 1, 8)
    I = (T + 0.5 * ramp * torch.rand(8, 3, 1, 1, generator=g)).clamp(0, 1)

    def fit(cls):
        torch.manual_seed(0)
        model = cls(MICRO)
        opt = torch.optim.Adam(model.parameters(), lr=5e-3)
        for _ in range(150):
            opt.zero_grad()
            loss = (model(I) - T).pow(2).mean()
            loss.backward()
            opt.step()
        return loss.item()

    assert fit(GlobalLinearNet) >= fit(LLCN)
