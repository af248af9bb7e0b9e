import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasipot.config import (DEFAULT_SEED, PRESETS, ExperimentConfig, check, parse_config, preset,
                             serialize_config, set_key)
from quasipot.errors import ConfigError


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.sim.seed == DEFAULT_SEED == 0xC0FFEE


def test_parse_types_and_comments():
    cfg = parse_config("""
        # a comment
        command = mam
        sim.eps = 0.25        # trailing comment
        sim.seed = 0x10
        sim.x0 = -2, 0.5
        ensemble.eps_list = 0.4, 0.5, 0.6
        two_well.bins = (10, 20)
    """)
    assert cfg.command == "mam"
    assert cfg.sim.eps == 0.25 and cfg.sim.seed == 16
    assert cfg.sim.x0 == (-2.0, 0.5)
    assert cfg.ensemble.eps_list == (0.4, 0.5, 0.6)
    assert cfg.two_well.bins == (10, 20)


def test_roundtrip_idempotent():
    cfg = preset("fig2-from-O1")
    text = serialize_config(cfg)
    assert serialize_config(parse_config(text)) == text
    assert parse_config(text) == cfg


@pytest.mark.parametrize("text,key", [
    ("sim.eps = -1", "sim.eps"),
    ("sim.h = 0", "sim.h"),
    ("sim.seed = -3", "sim.seed"),
    ("landscape = nope", "landscape"),
    ("diffusion = diag(3.0)", "diffusion"),
    ("command = fly", "command"),
    ("domain.gamma_radius = 0.5", "domain.gamma_radius"),
    ("two_well.mu1 = 2.5", "two_well.mu1"),
    ("two_well.bins = 0, 4", "two_well.bins"),
    ("minibatch.m = 9", "minibatch.m"),
    ("hj.candidate = zero", "hj.candidate"),
    ("mam.target = 1, 0, 0", "mam.target"),
])
def test_validation_names_key(text, key):
    with pytest.raises(ConfigError) as info:
        check(parse_config(text))
    assert info.value.key == key
    assert key in str(info.value)


@pytest.mark.parametrize("text,key", [
    ("sim.eps = abc", "sim.eps"),
    ("nosuch.key = 1", "nosuch.key"),
    ("sim.nokey = 1", "sim.nokey"),
    ("sim = 1", "sim"),
    ("just words", "line 1"),
])
def test_parse_errors_name_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key


def test_presets_match_published_parameters():
    a = preset("fig1-anisotropic")
    assert (a.command, a.landscape, a.diffusion) == ("exit-time", "quadratic_bowl", "diag(1.9999)")
    assert (a.sim.eps, a.sim.h, a.sim.max_steps, a.sim.x0) == (0.1, 0.01, 140000, (0.0, 0.0))
    i = preset("fig1-isotropic")
    assert i.diffusion == "diag(1.0)"
    assert (i.sim.eps, i.sim.h, i.sim.max_steps) == (0.1, 0.01, 140000)
    for name, x0 in (("fig2-from-O1", (-2.0, 0.0)), ("fig2-from-O2", (2.0, 0.0))):
        c = preset(name)
        assert (c.command, c.landscape) == ("two-well", "two_well")
        assert (c.two_well.mu1, c.two_well.mu2) == (1.9999, 1.0001)
        assert (c.sim.eps, c.sim.h, c.sim.max_steps, c.sim.x0) == (0.2, 0.01, 22000, x0)
    assert set(PRESETS) == {"fig1-anisotropic", "fig1-isotropic", "fig2-from-O1", "fig2-from-O2"}
    for name in PRESETS:
        preset(name).validate()
    with pytest.raises(ConfigError):
        preset("fig3")


def test_set_key_override():
    cfg = preset("fig1-anisotropic")
    set_key(cfg, "sim.eps", "0.3")
    assert cfg.sim.eps == 0.3 and cfg.sim.max_steps == 140000


floats = st.floats(1e-3, 10.0, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(floats, floats, st.integers(1, 10 ** 7), st.integers(0, 2 ** 64 - 1),
       st.lists(floats, max_size=5), st.sampled_from(["simulate", "exit-time", "two-well"]))
def test_roundtrip_property(eps, h, steps, seed, eps_list, command):
    cfg = ExperimentConfig(command=command)
    cfg.sim.eps, cfg.sim.h, cfg.sim.max_steps, cfg.sim.seed = eps, h, steps, seed
    cfg.ensemble.eps_list = tuple(eps_list)
    once = serialize_config(parse_config(serialize_config(cfg)))
    assert once == serialize_config(cfg)
    assert parse_config(once) == cfg
