import math

import numpy as np
import pytest

from ainnoseg.augment import AugmentConfig
from ainnoseg.errors import ConfigError, NumericError
from ainnoseg.model import ModelConfig
from ainnoseg.tensor import Tensor
from ainnoseg.train import TrainConfig, clip_grad_norm, train


def quick(**kw):
    base = dict(steps=3, batch_size=4, log_every=0)
    base.update(kw)
    return TrainConfig(**base)


def test_first_step_loss_is_near_weighted_log_c(small_cfg, synth8):
    loss = train(small_cfg, synth8, quick(steps=1)).losses[0]
    assert abs(loss - 1.4 * math.log(5)) / (1.4 * math.log(5)) < 0.01


def test_same_seed_gives_identical_weights(small_cfg, synth8):
    a = train(small_cfg, synth8, quick(seed=5)).model.state()
    b = train(small_cfg, synth8, quick(seed=5)).model.state()
    c = train(small_cfg, synth8, quick(seed=6)).model.state()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)


def test_head_losses_are_logged(small_cfg, synth8):
    r = train(small_cfg, synth8, quick())
    assert len(r.losses) == 3 and set(r.head_losses[0]) == {"da", "ocr", "final"}
    h = r.head_losses[0]
    assert abs(0.1 * h["da"] + 0.3 * h["ocr"] + h["final"] - r.losses[0]) < 1e-12


def test_divergence_reports_step(small_cfg, synth8):
    tc = quick(steps=50, lr=1e6, momentum=0.0, grad_clip=None, lr_schedule="constant")
    with np.errstate(all="ignore"), pytest.raises(NumericError, match=r"step \d+"):
        train(small_cfg, synth8, tc)


def test_augmented_training_runs(synth8):
    cfg = ModelConfig(input_size=(32, 32))
    aug = AugmentConfig(base_scales=(32,), scale_jitter=(0.75, 1.25), crop_size=(32, 32))
    assert len(train(cfg, synth8, quick(augment=True, augment_cfg=aug)).losses) == 3


def test_mixed_sizes_without_augmentation(synth8):
    from ainnoseg.synth import generate

    with pytest.raises(ConfigError):
        train(ModelConfig(), synth8[:2] + generate(2, 1, size=48), quick(batch_size=4))


def test_poly_schedule():
    tc = TrainConfig(steps=10, lr=0.2)
    assert tc.lr_at(0) == 0.2 and tc.lr_at(5) == pytest.approx(0.2 * 0.5 ** 0.9)
    assert TrainConfig(lr=0.2, lr_schedule="constant").lr_at(7) == 0.2


def test_clip_grad_norm():
    a, b = Tensor([0.0], requires_grad=True), Tensor([0.0, 0.0], requires_grad=True)
    a.grad, b.grad = np.array([3.0]), np.array([0.0, 4.0])
    assert clip_grad_norm([a, b], 1.0) == 5.0
    assert np.allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])


@pytest.mark.parametrize("kw", [dict(steps=0), dict(lr=0.0), dict(momentum=1.0), dict(lr_schedule="cosine")])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_empty_data(small_cfg):
    with pytest.raises(ConfigError):
        train(small_cfg, [], quick())
