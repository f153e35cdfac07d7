import pytest
from hypothesis import given, strategies as st

from drci import config as C
from drci.trainer import TrainConfig


def test_defaults_roundtrip():
    text = C.dumps()
    assert C.build(C.parse(text)) == C.RunConfig()


def test_keys_are_prefixed():
    keys = set(C.schema())
    for key in ("steps", "rho", "net.embed_dim", "loss.focal_alpha", "gen.speed", "crop.max_shift",
                "track.window_weight", "bench.seed", "bench.gen.speed"):
        assert key in keys
    assert "out_dir" not in keys and "loss.rho" not in keys


def test_parse_and_build():
    text = """
    # a comment
    steps = 12   # trailing comment
    rho = 0.3
    net.channels = 8, 8, 16
    net.pad = false
    loss.focal_alpha = none
    gen.illumination_range = 0.8, 1.2
    track.window_weight = 0.5
    bench.gen.speed = 1.0
    """
    run = C.build(C.parse(text))
    assert run.train.steps == 12 and run.train.rho == 0.3
    assert run.train.net_cfg.channels == (8, 8, 16) and run.train.net_cfg.pad is False
    assert run.train.loss_cfg.focal_alpha is None
    assert run.train.gen_cfg.illumination_range == (0.8, 1.2)
    assert run.track.window_weight == 0.5
    assert run.bench.gen_cfg.speed == 1.0
    assert run.train.gen_cfg.speed == 2.0  # untouched


def test_changed_values_survive_dump_and_load(tmp_path):
    run = C.build({"steps": 7, "net.embed_dim": 32, "loss.focal_alpha": None, "bench.length": 9})
    path = C.save(tmp_path / "run.txt", run)
    assert C.load(path) == run


@pytest.mark.parametrize(
    "text, match",
    [
        ("nonsense = 1", r"<config>:1: unknown key 'nonsense'"),
        ("steps = 1\nsteps = 2", r"<config>:2: 'steps' set twice"),
        ("steps = ten", r"bad value for 'steps'"),
        ("rho = nan", r"must be finite"),
        ("net.pad = maybe", r"true/false"),
        ("gen.illumination_range = 0.5", r"expected 2"),
        ("just words", r"expected 'key = value'"),
        ("out_dir = /tmp", r"unknown key 'out_dir'"),
    ],
)
def test_parse_errors(text, match):
    with pytest.raises(C.ConfigError, match=match):
        C.parse(text)


def test_validation_errors_become_config_errors():
    with pytest.raises(C.ConfigError, match="steps"):
        C.build(C.parse("steps = 0"))


def test_missing_file(tmp_path):
    with pytest.raises(C.ConfigError, match="cannot read"):
        C.load(tmp_path / "absent.txt")


@given(
    steps=st.integers(1, 10_000),
    lr=st.floats(1e-6, 1.0),
    alpha=st.one_of(st.none(), st.floats(0.0, 1.0)),
    log_timing=st.booleans(),
)
def test_value_roundtrip(steps, lr, alpha, log_timing):
    run = C.build({"steps": steps, "learning_rate": lr, "loss.focal_alpha": alpha, "log_timing": log_timing})
    assert C.build(C.parse(C.dumps(run))) == run


def test_format_value():
    assert C.format_value((1, 2)) == "1, 2"
    assert C.format_value(None) == "none"
    assert C.format_value(True) == "true"
    assert C.format_value(0.1) == "0.1"
    assert isinstance(C.RunConfig().train, TrainConfig)
