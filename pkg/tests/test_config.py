import pytest

from cxrcad.config import PipelineConfig, load_config, parse_config_text
from cxrcad.errors import DataError


def test_default_training_setup():
    cfg = PipelineConfig()
    assert cfg.optimizer.batch_size == 4
    assert cfg.optimizer.max_epochs == 200
    assert cfg.optimizer.learning_rate == 1e-5
    assert cfg.optimizer.patience == 5
    assert cfg.optimizer.lr_factor == 0.8
    assert cfg.preprocess.threshold_fraction == 0.9
    assert cfg.split.test_fraction == 0.1
    assert cfg.split.val_fraction == 0.1


def test_parse_sections_and_overrides():
    cfg = parse_config_text(
        """
        # comment line
        preprocess.threshold_fraction = 0.85
        preprocess.fill_value_policy = zero
        augment.zoom_range = 0.8, 1.2
        augment.enabled = false
        optimizer.learning_rate = 0.001   # inline comment
        optimizer.max_epochs = 30
        schedule.patience = 3
        schedule.factor = 0.5
        split.seed = 99
        net.widths = 2,4,4,8,8
        net.head = 64,32
        net.freeze_below = 2
        paths.sample_dir = /tmp/samples
        """
    )
    assert cfg.preprocess.threshold_fraction == 0.85
    assert cfg.preprocess.fill_value_policy == "zero"
    assert cfg.augment.zoom_range == (0.8, 1.2)
    assert cfg.augment_enabled is False
    assert cfg.optimizer.learning_rate == 0.001
    assert cfg.optimizer.max_epochs == 30
    assert cfg.optimizer.patience == 3
    assert cfg.optimizer.lr_factor == 0.5
    assert cfg.split.seed == 99
    assert cfg.net.widths == (2, 4, 4, 8, 8)
    assert cfg.net.head == (64, 32)
    assert cfg.net.freeze_below == 2
    assert cfg.paths.sample_dir == "/tmp/samples"


def test_unknown_key_rejected():
    with pytest.raises(DataError, match="unknown config key"):
        parse_config_text("optimizer.momentum = 0.9")
    with pytest.raises(DataError, match="unknown config key"):
        parse_config_text("nosection = 1")


def test_bad_value_rejected():
    with pytest.raises(DataError):
        parse_config_text("optimizer.batch_size = four")
    with pytest.raises(DataError):
        parse_config_text("preprocess.threshold_fraction = 1.5")
    with pytest.raises(DataError):
        parse_config_text("split.test_fraction = 0")


def test_malformed_line():
    with pytest.raises(DataError, match="expected"):
        parse_config_text("just some words")


def test_load_config_file(tmp_path):
    path = tmp_path / "p.cfg"
    path.write_text("optimizer.seed = 7\n")
    assert load_config(path).optimizer.seed == 7
    with pytest.raises(DataError):
        load_config(tmp_path / "missing.cfg")
