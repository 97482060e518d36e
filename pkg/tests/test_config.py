"""Config parsing, presets, overrides, and serialization."""

import pytest

from bass2drums.config import (
    ConfigError,
    RunConfig,
    build_config,
    load_config,
    parse_config_text,
    serialize_config,
)


def test_defaults_are_paper_scale():
    cfg = RunConfig()
    assert cfg.n_mels == 256
    assert cfg.chunk_width == 256
    assert cfg.n_res_blocks == 9
    assert cfg.base_channels == 64
    assert cfg.lr == 2e-4
    assert (cfg.beta1, cfg.beta2) == (0.5, 0.999)
    assert cfg.lambda_cycle == 10.0
    assert cfg.lambda_identity == 0.0
    assert cfg.pool_size == 50


def test_desk_preset():
    cfg = build_config({}, {"preset": "desk"})
    assert cfg.n_mels == 64
    assert cfg.chunk_width == 64
    assert cfg.chunk_overlap == 12
    assert cfg.n_res_blocks == 3
    assert cfg.base_channels == 16
    assert cfg.unet_depth == 4
    # unrelated knobs keep their defaults
    assert cfg.lr == 2e-4
    assert cfg.hop == 512


def test_override_precedence():
    # file overrides preset, explicit --set overrides both
    items = parse_config_text("preset = desk\nn_mels = 32\n")
    cfg = build_config(items, {"seed": "7"})
    assert cfg.n_mels == 32
    assert cfg.chunk_width == 64  # still from the preset
    assert cfg.seed == 7
    cfg2 = build_config(items, {"n_mels": "16"})
    assert cfg2.n_mels == 16


def test_parse_rejects_unknown_and_duplicate_keys():
    with pytest.raises(ConfigError):
        parse_config_text("no_such_knob = 3\n")
    with pytest.raises(ConfigError):
        parse_config_text("n_mels = 8\nn_mels = 9\n")
    with pytest.raises(ConfigError):
        parse_config_text("n_mels\n")


def test_parse_comments_and_blanks():
    items = parse_config_text("# a comment\n\nn_mels = 16  \n")
    assert items == {"n_mels": "16"}


def test_type_coercion_errors():
    with pytest.raises(ConfigError):
        build_config({}, {"n_mels": "many"})
    with pytest.raises(ConfigError):
        build_config({}, {"lr": "fast"})
    with pytest.raises(ConfigError):
        build_config({}, {"preset": "gpu_cluster"})


def test_validation_errors():
    with pytest.raises(ConfigError):
        build_config({}, {"n_fft": "0"})
    with pytest.raises(ConfigError):
        build_config({}, {"hop": "4096"})  # hop > n_fft
    with pytest.raises(ConfigError):
        build_config({}, {"floor_db": "1.0"})
    with pytest.raises(ConfigError):
        build_config({}, {"chunk_overlap": "256"})  # overlap >= width
    with pytest.raises(ConfigError):
        build_config({}, {"gan_mode": "wasserstein"})


def test_serialize_round_trip(tmp_path):
    cfg = build_config({}, {"preset": "desk", "lr": "0.00037", "seed": "11"})
    text = serialize_config(cfg)
    p = tmp_path / "run.cfg"
    p.write_text(text)
    back = load_config(p)
    assert back == cfg


def test_fingerprint_tracks_spectral_identity():
    a = build_config({}, {})
    b = build_config({}, {"n_mels": "128"})
    c = build_config({}, {"seed": "99"})
    assert a.fingerprint() != b.fingerprint()
    assert a.fingerprint() == c.fingerprint()  # seed is not spectral identity
    assert set(a.fingerprint()) == {
        "sample_rate", "n_fft", "hop", "n_mels", "floor_db",
        "chunk_width", "chunk_overlap",
    }
