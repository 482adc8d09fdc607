import numpy as np
import pytest
import torch

from mmfusion.backbone import (
    DESKNET,
    FULLSCALE_B0,
    BackboneConfig,
    DeskNet,
    ShapeError,
    build_backbone,
    desknet_init,
    forward_stages,
    get_config,
)


def test_desknet_stage_shapes():
    maps = forward_stages(np.random.default_rng(0).random((64, 64, 3)), desknet_init(0), DESKNET)
    assert [m.stage_index for m in maps] == [1, 2, 3, 4]
    assert [m.shape for m in maps] == [(32, 32, 16), (16, 16, 32), (8, 8, 64), (4, 4, 128)]


def test_weight_layout_is_hwio():
    w = desknet_init(0)
    assert w["stage3.conv_weight"].shape == (3, 3, 32, 64)
    assert w["stage1.bn_running_var"].shape == (16,)


def test_init_is_seed_deterministic():
    a, b, c = desknet_init(5), desknet_init(5), desknet_init(6)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["stage1.conv_weight"], c["stage1.conv_weight"])


def test_he_normal_scale():
    w = desknet_init(0)["stage4.conv_weight"]
    assert w.std() == pytest.approx(np.sqrt(2.0 / (9 * 64)), rel=0.05)


def test_zero_input_gives_finite_maps():
    maps = forward_stages(np.zeros((64, 64, 3)), desknet_init(1), DESKNET, training=True)
    assert all(np.isfinite(m.tensor).all() for m in maps)


def test_forward_does_not_touch_weights():
    w = desknet_init(2)
    before = {k: v.copy() for k, v in w.items()}
    forward_stages(np.ones((64, 64, 3)) * 0.3, w, DESKNET, training=True)
    assert all(np.array_equal(before[k], w[k]) for k in w)


def test_module_roundtrip():
    w = desknet_init(3)
    net = DeskNet.from_weights(w)
    out = net.export_weights()
    assert set(out) == set(w)
    assert all(np.array_equal(out[k], w[k]) for k in w)


@pytest.mark.parametrize("shape", [(63, 64, 3), (64, 64, 1), (64, 64)])
def test_shape_error(shape):
    with pytest.raises(ShapeError) as err:
        forward_stages(np.zeros(shape), desknet_init(0), DESKNET)
    assert err.value.expected == (64, 64, 3)
    assert err.value.actual == shape


def test_early_fusion_width():
    maps = forward_stages(np.zeros((64, 128, 3)), desknet_init(0), DESKNET, width_multiple=2)
    assert maps[-1].shape == (4, 8, 128)


def test_config_validation_and_roundtrip():
    assert BackboneConfig.from_dict(FULLSCALE_B0.to_dict()) == FULLSCALE_B0
    assert get_config("desknet", mmtm_tap_stages=(3, 4)).mmtm_tap_stages == (3, 4)
    with pytest.raises(ValueError):
        get_config("desknet", mmtm_tap_stages=(5,))
    with pytest.raises(ValueError):
        get_config("desknet", pretrained_weights_path="w.pth")


def test_fullscale_stage_channels():
    net = build_backbone(FULLSCALE_B0, 0).eval()
    with torch.no_grad():
        maps = net.forward_stages(torch.zeros(1, 3, 224, 224))
    assert [m.shape[1] for m in maps] == list(FULLSCALE_B0.stage_channels)
    assert maps[-1].shape[2:] == (7, 7)
