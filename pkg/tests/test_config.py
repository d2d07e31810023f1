import pytest

from posediff.config import ENV_OUTPUT_DIR, ENV_WORKERS, ExperimentConfig, config_keys, dump_config, load_config
from posediff.errors import ConfigError, ParseError


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg == ExperimentConfig()
    assert cfg.train.epochs == 36 and cfg.eval.default_m == 50


def test_file_and_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train: {epochs: 3}\nseed: 4\n")
    cfg = load_config(p, ["train.lr=0.01", "eval.ms=[1, 2]", "train.unet.channels=[2, 8, 2]"])
    assert cfg.train.epochs == 3 and cfg.train.lr == 0.01 and cfg.seed == 4
    assert cfg.eval.ms == (1, 2) and cfg.train.unet.channels == (2, 8, 2)
    assert cfg.resolved_train().seed == 4


def test_round_trip_dump(tmp_path):
    cfg = load_config(None, ["train.strategy=input_concat"])
    p = tmp_path / "d.yaml"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_env_overrides(monkeypatch):
    monkeypatch.setenv(ENV_OUTPUT_DIR, "/tmp/elsewhere")
    monkeypatch.setenv(ENV_WORKERS, "3")
    cfg = load_config(None)
    assert cfg.output_dir == "/tmp/elsewhere" and cfg.workers == 3


@pytest.mark.parametrize("bad", ["train.bogus=1", "nokey", "train.epochs.x=1"])
def test_bad_overrides(bad):
    with pytest.raises(ConfigError):
        load_config(None, [bad])


def test_unparseable_and_missing_file(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("train: [unclosed\n")
    with pytest.raises(ParseError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_config_keys_cover_nested_fields():
    keys = config_keys()
    for k in ("seed", "train.lr", "train.unet.channels", "train.diffusion.schedule", "eval.ms",
              "data.train_manifest", "ablation.tasks"):
        assert k in keys
