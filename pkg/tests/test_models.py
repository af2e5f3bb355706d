import numpy as np
import pytest

from tacvit.config import CnnConfig, LoraConfig, VitConfig, default_schedule, profile
from tacvit.errors import ConfigError, ShapeError
from tacvit.models import ModelSpec, cnn_forward, freeze_schedule, init_cnn, init_vit, patchify, unpatchify
from tacvit.models.cnn import cnn_param_count
from tacvit.models.freeze import trainable_at
from tacvit.models.lora import attach_lora
from tacvit.models.params import ModelParams
from tacvit.models.vit import vit_param_count
from tacvit.numcore import Tensor

FULL_VIT = profile("full").vit


def closed_form_vit_count(image, patch, ch, d, layers, mlp, head_widths):
    """Independent hand-summed count (no use of the model's shape table)."""
    tokens = (image // patch) ** 2 + 1
    embed = (ch * patch * patch) * d + d + d + tokens * d
    block = 2 * d + 4 * (d * d + d) + 2 * d + (d * mlp + mlp) + (mlp * d + d)
    head = sum(a * b + b for a, b in zip(head_widths[:-1], head_widths[1:]))
    return embed + layers * block + 2 * d + head


def test_reference_vit_has_196_patches():
    assert FULL_VIT.image_size == 224 and FULL_VIT.patch_size == 16
    assert FULL_VIT.num_patches == 196
    img = np.zeros((3, 224, 224))
    assert patchify(img, 16).shape == (196, 768)


def test_reference_vit_parameter_count_fixture():
    # ViT-B/16 encoder: 86,567,656 with the 1000-class classifier, minus 768*1000 + 1000
    encoder = 86_567_656 - (768 * 1000 + 1000)
    assert encoder == 85_798_656
    head = (768 * 512 + 512) + (512 * 256 + 256) + (256 * 64 + 64) + (64 * 6 + 6)
    assert head == 541_894
    assert vit_param_count(FULL_VIT) == encoder + head == 86_340_550
    assert closed_form_vit_count(224, 16, 3, 768, 12, 3072, [768, 512, 256, 64, 6]) == 86_340_550


@pytest.mark.parametrize("cfg", [VitConfig(), VitConfig(image_size=32, patch_size=4, embed_dim=16, num_layers=3,
                                                        num_heads=2, mlp_hidden=20, head_layers=2, head_hidden=(7,))])
def test_vit_count_matches_allocation_and_closed_form(cfg):
    params = init_vit(cfg, 0)
    widths = [cfg.embed_dim, *cfg.head_hidden, cfg.output_dim]
    expected = closed_form_vit_count(cfg.image_size, cfg.patch_size, cfg.channels, cfg.embed_dim,
                                     cfg.num_layers, cfg.mlp_hidden, widths)
    assert params.num_params() == vit_param_count(cfg) == expected


def test_cnn_parameter_count_by_hand():
    cfg = CnnConfig()
    conv = (1 * 9 * 32 + 32) + 3 * (32 * 9 * 32 + 32)
    fc = (32 * 4 * 4 * 512 + 512) + (512 * 6 + 6)
    assert cnn_param_count(cfg) == init_cnn(cfg, 0).num_params() == conv + fc == 293_798
    # reference-table CNN: 480 kernels as a per-layer width or split over 4 layers
    assert CnnConfig(kernels=480, kernels_mode="total").kernels_per_layer == 120


@pytest.mark.parametrize("family", ["cnn", "tacvit"])
def test_output_shape_n_by_6(family):
    spec = ModelSpec.from_settings(family, profile("desk"))
    params = spec.init(0)
    x = Tensor(np.random.default_rng(0).standard_normal((3, 1, 64, 64)))
    assert spec.forward(params, x).shape == (3, 6)


def test_patchify_round_trip_and_order():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((2, 3, 8, 12))
    p = patchify(img, 4)
    assert p.shape == (2, 6, 48)
    np.testing.assert_array_equal(p[0, 1], img[0, :, 0:4, 4:8].reshape(-1))  # row-major grid
    np.testing.assert_array_equal(unpatchify(p, 4, 3, 8, 12), img)
    with pytest.raises(ConfigError):
        patchify(img, 5)


def test_vit_rejects_wrong_input_shape():
    cfg = VitConfig(image_size=16, patch_size=4, embed_dim=8, num_layers=1, num_heads=2, mlp_hidden=8)
    params = init_vit(cfg, 0)
    with pytest.raises(ShapeError):
        ModelSpec("tacvit", vit=cfg).forward(params, Tensor(np.zeros((1, 1, 12, 12))))


def test_cnn_zero_weights_output_equals_last_bias():
    cfg = CnnConfig(image_size=16, kernels=4, fc_hidden=8)
    params = init_cnn(cfg, 0)
    for n, t in params.items():
        t.data = np.zeros_like(t.data)
    params["cnn.fc1.b"].data = np.arange(6, dtype=np.float32)
    out = cnn_forward(Tensor(np.random.default_rng(1).standard_normal((2, 1, 16, 16))), params, cfg)
    np.testing.assert_array_equal(out.data, np.tile(np.arange(6.0), (2, 1)))
    with pytest.raises(ShapeError):
        cnn_forward(Tensor(np.zeros((1, 1, 8, 8))), params, cfg)


def test_init_is_deterministic_per_seed_and_name():
    a, b, c = init_vit(VitConfig(), 3), init_vit(VitConfig(), 3), init_vit(VitConfig(), 4)
    assert all(np.array_equal(a[n].data, b[n].data) for n in a)
    assert not np.array_equal(a["vit.block0.attn.wq"].data, c["vit.block0.attn.wq"].data)


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        VitConfig(image_size=30, patch_size=8).validate()
    with pytest.raises(ConfigError):
        VitConfig(embed_dim=10, num_heads=4).validate()
    with pytest.raises(ConfigError):
        VitConfig(dropout=0.1).validate()
    with pytest.raises(ConfigError):
        CnnConfig(dropout=0.5).validate()
    with pytest.raises(ConfigError):
        LoraConfig(rank=17).validate(64)


# -- freeze scheduling -------------------------------------------------------

def _lora_params():
    cfg = VitConfig()
    params = init_vit(cfg, 0)
    attach_lora(params, cfg, LoraConfig(), 0)
    return params, cfg


def test_freeze_schedule_epoch0_trains_head_and_adapters_only():
    params, cfg = _lora_params()
    keep = freeze_schedule(params, 0, default_schedule(cfg.num_layers))
    assert keep and all(n.startswith("head.") or ".lora." in n for n in keep)
    assert "vit.block0.attn.wq" not in keep and params.is_frozen("vit.patch.w")


def test_freeze_schedule_unfreezes_listed_blocks_at_trigger():
    params, _ = _lora_params()
    sched = ((2, ("vit.block3",)), (4, ("vit.block2", "vit.ln")))
    assert "vit.block3.mlp.w1" not in trainable_at(params, 1, sched)
    at2 = trainable_at(params, 2, sched)
    assert "vit.block3.mlp.w1" in at2 and "vit.block2.mlp.w1" not in at2
    at4 = trainable_at(params, 4, sched)
    assert {"vit.block2.ln1.g", "vit.ln.g", "vit.ln.b"} <= at4 and "vit.block1.attn.wq" not in at4
    # the trainable set only grows
    sets = [trainable_at(params, e, sched) for e in range(6)]
    assert all(a <= b for a, b in zip(sets, sets[1:]))


def test_freeze_prefix_does_not_match_longer_block_index():
    params = ModelParams({n: Tensor(np.zeros(1)) for n in ("vit.block1.w", "vit.block10.w", "head.fc0.w")})
    assert trainable_at(params, 0, ((0, ("vit.block1",)),)) == {"vit.block1.w", "head.fc0.w"}


def test_freeze_schedule_rejects_unknown_prefix_and_negative_epoch():
    params, _ = _lora_params()
    with pytest.raises(ConfigError):
        freeze_schedule(params, 0, ((1, ("vit.block99",)),))
    with pytest.raises(ConfigError):
        freeze_schedule(params, 0, ((-1, ("vit.block0",)),))


def test_params_state_dict_strict_mismatch():
    params = init_cnn(CnnConfig(image_size=16, kernels=2, fc_hidden=4), 0)
    state = params.state_dict()
    state.pop("cnn.fc0.w")
    with pytest.raises(ConfigError):
        params.load_state_dict(state)
