import numpy as np
import pytest

from tacvit.config import LoraConfig, VitConfig
from tacvit.errors import ConfigError, ShapeError
from tacvit.models import attach_lora, collect_adapters, init_vit, lora_apply, merge_lora, vit_forward
from tacvit.models.lora import LoraAdapter
from tacvit.numcore import Adam, GradTape, Tensor, default_dtype, mse_loss

CFG = VitConfig(image_size=16, patch_size=4, embed_dim=16, num_layers=2, num_heads=2, mlp_hidden=24,
                head_layers=2, head_hidden=(8,))
LORA = LoraConfig(rank=2, alpha=4.0, targets=("q", "k", "v", "o"))


def _adapted(seed=0, scale=0.2):
    params = init_vit(CFG, seed)
    attach_lora(params, CFG, LORA, seed)
    rng = np.random.default_rng(seed)
    for n, t in params.items():
        if n.endswith(".lora.q.b") or n.endswith(".lora.k.b") or n.endswith(".lora.v.b") or n.endswith(".lora.o.b"):
            t.data = (rng.standard_normal(t.shape) * scale).astype(t.data.dtype)
    return params


def test_lora_apply_equals_merged_weight():
    rng = np.random.default_rng(0)
    with default_dtype(np.float64):
        w, b = Tensor(rng.standard_normal((6, 6))), Tensor(rng.standard_normal(6))
        ad = LoraAdapter(Tensor(rng.standard_normal((6, 2))), Tensor(rng.standard_normal((2, 6))), 2, 3.0, "q")
        x = Tensor(rng.standard_normal((4, 6)))
        merged = x.data @ (w.data + 1.5 * ad.a.data @ ad.b.data).T + b.data
        np.testing.assert_allclose(lora_apply(w, ad, x, b).data, merged, rtol=1e-12)
    with pytest.raises(ShapeError):
        lora_apply(Tensor(np.zeros((6, 6))), LoraAdapter(Tensor(np.zeros((5, 2))), Tensor(np.zeros((2, 6))),
                                                         2, 1.0, "q"), Tensor(np.zeros((1, 6))))


def test_adapter_and_merged_forward_agree_on_20_inputs():
    params = _adapted()
    adapters = collect_adapters(params, CFG, LORA)
    merged = merge_lora(params, adapters)
    assert not any(".lora." in n for n in merged)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        x = Tensor(rng.standard_normal((2, 1, 16, 16)))
        a = vit_forward(x, params, CFG, adapters).data.astype(np.float64)
        m = vit_forward(x, merged, CFG).data.astype(np.float64)
        worst = max(worst, np.abs(a - m).max() / np.abs(m).max())
    assert worst < 1e-5


def test_zero_init_adapter_leaves_output_bit_identical():
    base = init_vit(CFG, 0)
    x = Tensor(np.random.default_rng(2).standard_normal((3, 1, 16, 16)))
    before = vit_forward(x, base, CFG).data
    tuned = base.copy()
    adapters = attach_lora(tuned, CFG, LoraConfig(rank=2, alpha=8.0), seed=5)
    assert all(not ad.b.data.any() for ad in adapters.values())
    assert np.array_equal(vit_forward(x, tuned, CFG, adapters).data, before)


def test_frozen_base_bit_identical_after_100_steps():
    params = init_vit(CFG, 0)
    attach_lora(params, CFG, LORA, 0)
    for n, t in params.items():
        t.requires_grad = ".lora." in n or n.startswith("head.")
    frozen = {n: t.data.copy() for n, t in params.items() if not t.requires_grad}
    trained = {n: t.data.copy() for n, t in params.items() if t.requires_grad}
    adapters = collect_adapters(params, CFG, LORA)
    opt = Adam(lr=1e-3, weight_decay=1e-2)
    rng = np.random.default_rng(3)
    for _ in range(100):
        x = Tensor(rng.standard_normal((4, 1, 16, 16)))
        y = Tensor(rng.standard_normal((4, 6)))
        with GradTape() as tape:
            loss = mse_loss(vit_forward(x, params, CFG, adapters), y)
        tape.backward(loss)
        opt.step(params.tensors)
    assert all(params[n].data.tobytes() == v.tobytes() for n, v in frozen.items())
    assert any(not np.array_equal(params[n].data, v) for n, v in trained.items())


def test_lora_only_trainable_count_is_small():
    params = init_vit(VitConfig(), 0)
    attach_lora(params, VitConfig(), LoraConfig(), 0)
    n_lora = sum(t.size for n, t in params.items() if ".lora." in n)
    # 4 blocks x 2 targets x (d*r + r*d) with d=64, r=4
    assert n_lora == 4 * 2 * 2 * 64 * 4


def test_lora_rank_validation_and_mismatched_rank():
    with pytest.raises(ConfigError):
        attach_lora(init_vit(CFG, 0), CFG, LoraConfig(rank=5), 0)   # d/4 = 4
    params = init_vit(CFG, 0)
    attach_lora(params, CFG, LoraConfig(rank=2), 0)
    with pytest.raises(ConfigError):
        collect_adapters(params, CFG, LoraConfig(rank=3))
