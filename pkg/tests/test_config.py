import pytest

from ainnoseg.config import RunConfig, from_dict, load_run_config
from ainnoseg.errors import ConfigError


def test_defaults_round_trip(tmp_path):
    cfg = RunConfig()
    cfg.save(tmp_path / "c.yaml")
    assert load_run_config(tmp_path / "c.yaml").to_dict() == cfg.to_dict()


def test_published_values_are_representable(tmp_path):
    cfg = RunConfig.full_scale()
    cfg.save(tmp_path / "p.yaml")
    back = load_run_config(tmp_path / "p.yaml")
    w = back.loss
    assert (w.alpha, w.beta, w.gamma) == (0.1, 0.3, 1.0)
    assert back.inference.base_scales == (520, 640, 800)
    assert back.inference.multiples == (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
    assert back.augment.mosaic_ratio == 0.3 and back.selftrain.rounds == 2
    assert back.to_dict() == cfg.to_dict()


def test_partial_document_fills_defaults():
    cfg = from_dict({"loss": {"alpha": 0.5}, "train": {"steps": 7}})
    assert cfg.loss.alpha == 0.5 and cfg.loss.beta == 0.3 and cfg.train.steps == 7
    assert cfg.train.weights is cfg.loss


@pytest.mark.parametrize("doc", [{"modle": {}}, {"model": {"clases": 3}}, {"train": {"weights": {}}},
                                 {"loss": {"delta": 1.0}}, {"model": [1, 2]}])
def test_unknown_keys_are_rejected(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_invalid_values_surface_as_config_errors():
    with pytest.raises(ConfigError):
        from_dict({"inference": {"multiples": []}})


def test_invalid_yaml(tmp_path):
    (tmp_path / "bad.yaml").write_text("model: {num_classes: [")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "bad.yaml")


def test_exponent_floats_parse_as_numbers(tmp_path):
    (tmp_path / "e.yaml").write_text("train: {lr: 1e-3, steps: 5}\n")
    cfg = load_run_config(tmp_path / "e.yaml")
    assert cfg.train.lr == 0.001 and cfg.train.steps == 5
