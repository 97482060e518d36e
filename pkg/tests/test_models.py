"""Network shapes, receptive field, parameter naming, init statistics."""

import numpy as np
import pytest

from bass2drums.models import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    ResnetGenerator,
    UNetConfig,
    UNetGenerator,
    receptive_field,
)
from bass2drums.autograd import Tensor


def _rng():
    return np.random.default_rng(0)


def test_receptive_field_formula():
    assert receptive_field([(3, 1)]) == 3
    assert receptive_field([(3, 1), (3, 1)]) == 5
    # three stride-2 4x4 convs plus two stride-1 4x4 convs
    assert receptive_field([(4, 2), (4, 2), (4, 2), (4, 1), (4, 1)]) == 70


def test_patch_discriminator_receptive_field_70():
    d = PatchDiscriminator(DiscriminatorConfig(), _rng())
    assert receptive_field(d.layer_specs()) == 70


def test_discriminator_output_shapes():
    d = PatchDiscriminator(DiscriminatorConfig.desk(), _rng())
    out = d(Tensor(np.zeros((2, 1, 64, 64), dtype=np.float32)))
    assert out.data.shape == (2, 1, 6, 6)
    d_full = PatchDiscriminator(DiscriminatorConfig(), _rng())
    out = d_full(Tensor(np.zeros((1, 1, 256, 256), dtype=np.float32)))
    assert out.data.shape == (1, 1, 30, 30)


def test_discriminator_features_shape():
    cfg = DiscriminatorConfig.desk()
    d = PatchDiscriminator(cfg, _rng())
    feats = d.features(Tensor(np.zeros((3, 1, 64, 64), dtype=np.float32)))
    # default block: after the last stride-2 conv, 64 / 2^3 = 8
    assert feats.data.shape == (3, d.embed_dim, 8, 8)
    assert d.embed_dim == 4 * cfg.base_channels
    with pytest.raises(ValueError):
        d.features(Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32)), block=99)


def test_generator_preserves_shape():
    g = ResnetGenerator(GeneratorConfig.desk(), _rng())
    x = np.random.default_rng(1).normal(size=(2, 1, 64, 64)).astype(np.float32)
    out = g(Tensor(x))
    assert out.data.shape == x.shape
    assert np.all(np.abs(out.data) <= 1.0)  # tanh range


def test_unet_preserves_shape():
    g = UNetGenerator(UNetConfig.desk(), _rng())
    x = np.random.default_rng(2).normal(size=(1, 1, 64, 64)).astype(np.float32)
    out = g(Tensor(x))
    assert out.data.shape == x.shape
    assert np.all(np.abs(out.data) <= 1.0)


def test_params_dict_names_and_uniqueness():
    g = ResnetGenerator(GeneratorConfig.desk(), _rng())
    params = g.params_dict("G_XY.")
    assert all(k.startswith("G_XY.") for k in params)
    assert "G_XY.head.w" in params
    assert "G_XY.res0.conv1.w" in params
    assert len(params) == len(set(params))
    for p in params.values():
        assert p.requires_grad


def test_weight_init_statistics():
    g = ResnetGenerator(GeneratorConfig(base_channels=32, n_res_blocks=2,
                                        image_size=64), _rng())
    w = g.head.w.data
    assert abs(w.std() - 0.02) < 0.005
    assert abs(w.mean()) < 0.005
    np.testing.assert_array_equal(g.head.b.data, 0.0)


def test_set_trainable_toggles_everything():
    d = PatchDiscriminator(DiscriminatorConfig.desk(), _rng())
    d.set_trainable(False)
    assert not any(p.requires_grad for p in d.params_dict().values())
    d.set_trainable(True)
    assert all(p.requires_grad for p in d.params_dict().values())


def test_load_arrays_round_trip():
    cfg = GeneratorConfig.desk()
    g1 = ResnetGenerator(cfg, np.random.default_rng(5))
    g2 = ResnetGenerator(cfg, np.random.default_rng(6))
    arrays = {k: p.data.copy() for k, p in g1.params_dict("g.").items()}
    g2.load_arrays(arrays, "g.")
    x = Tensor(np.random.default_rng(7).normal(size=(1, 1, 64, 64)).astype(np.float32))
    np.testing.assert_array_equal(g1(x).data, g2(x).data)


def test_load_arrays_rejects_missing_and_misshapen():
    g = ResnetGenerator(GeneratorConfig.desk(), _rng())
    good = {k: p.data.copy() for k, p in g.params_dict("g.").items()}
    incomplete = dict(list(good.items())[:-1])
    with pytest.raises(KeyError):
        g.load_arrays(incomplete, "g.")
    bad = dict(good)
    first = next(iter(bad))
    bad[first] = np.zeros((1, 1))
    with pytest.raises(ValueError):
        g.load_arrays(bad, "g.")


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(image_size=63)  # not divisible by 2^n_down
    with pytest.raises(ValueError):
        GeneratorConfig(base_channels=0)
    with pytest.raises(ValueError):
        DiscriminatorConfig(image_size=30, n_layers=3)
    with pytest.raises(ValueError):
        UNetConfig(depth=1)
    with pytest.raises(ValueError):
        UNetConfig(depth=7, image_size=64)  # bottleneck under 2x2


def test_same_seed_same_network():
    cfg = UNetConfig.desk()
    g1 = UNetGenerator(cfg, np.random.default_rng(9))
    g2 = UNetGenerator(cfg, np.random.default_rng(9))
    for (k1, p1), (k2, p2) in zip(g1.params_dict().items(),
                                  g2.params_dict().items()):
        assert k1 == k2
        np.testing.assert_array_equal(p1.data, p2.data)
