import numpy as np
import pytest

from ainnoseg import tensor as T
from ainnoseg.errors import ConfigError
from ainnoseg.inference import InferenceConfig, fuse_probabilities, infer_single, multiscale_infer, to_input
from ainnoseg.tensor import no_grad


@pytest.fixture(scope="module")
def image(synth8):
    return synth8[3].image


def test_native_scale_equals_plain_forward(trained, image):
    with no_grad():
        want = T.softmax(trained(to_input(image)).final_logits, axis=0).data
    assert np.array_equal(infer_single(trained, image, 32), want)


@pytest.mark.parametrize("scale", [16, 24, 40, 64])
def test_resized_probabilities_are_normalised(trained, image, scale):
    p = infer_single(trained, image, scale)
    assert p.shape == (5, 32, 32)
    assert np.abs(p.sum(0) - 1).max() < 1e-9 and p.min() > 0 and p.max() <= 1


def test_non_square_input(trained, synth8):
    img = np.concatenate([synth8[0].image, synth8[1].image[:, :16]], axis=1)  # 32 x 48
    labels, probs = multiscale_infer(trained, img, InferenceConfig((32,), (0.75, 1.0)))
    assert labels.shape == (32, 48) and probs.shape == (5, 32, 48)


def test_inference_is_deterministic(trained, image, desk_inference):
    a, b = multiscale_infer(trained, image, desk_inference), multiscale_infer(trained, image, desk_inference)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_single_entry_grid_equals_single_scale(trained, image):
    _, probs = multiscale_infer(trained, image, InferenceConfig((32,), (1.0,)))
    assert np.array_equal(probs, infer_single(trained, image, 32))


def test_enumeration_order_is_irrelevant(trained, image):
    a = multiscale_infer(trained, image, InferenceConfig((32, 16), (2.0, 0.5, 1.0)))[1]
    b = multiscale_infer(trained, image, InferenceConfig((16, 32), (1.0, 2.0, 0.5)))[1]
    assert np.array_equal(a, b)


def test_duplicate_scale_is_weighted_mean(trained, image):
    fused = multiscale_infer(trained, image, InferenceConfig((32,), (1.0, 1.0, 0.5)))[1]
    p1, p05 = infer_single(trained, image, 32), infer_single(trained, image, 16)
    assert np.allclose(fused, (2 * p1 + p05) / 3, rtol=0, atol=1e-15)


def test_fused_map_is_stochastic(trained, image, desk_inference):
    _, probs = multiscale_infer(trained, image, desk_inference)
    assert np.abs(probs.sum(0) - 1).max() < 1e-9


def test_agreeing_maps_keep_their_argmax(rng):
    target = rng.integers(0, 4, (6, 6))
    maps = []
    for _ in range(5):
        p = rng.uniform(0, 1, (4, 6, 6))
        p[target, np.arange(6)[:, None], np.arange(6)] = 2.0
        maps.append(p / p.sum(0))
    assert np.array_equal(np.argmax(fuse_probabilities(maps), 0), target)


def test_argmax_invariant_to_positive_scaling(rng):
    p = rng.uniform(size=(5, 4, 4))
    assert np.array_equal(np.argmax(p, 0), np.argmax(p * 3.7, 0))


def test_ties_break_to_lowest_class():
    assert (np.argmax(fuse_probabilities([np.full((3, 2, 2), 1 / 3)]), 0) == 0).all()


@pytest.mark.parametrize("kw", [dict(base_scales=()), dict(multiples=()), dict(multiples=(0.0,)),
                                dict(fuse="geometric")])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        InferenceConfig(**kw)


def test_presets():
    full = InferenceConfig.full_scale()
    assert full.base_scales == (520, 640, 800) and len(full.grid()) == 21
    assert InferenceConfig.full_scale_short().multiples == (0.5, 1.0, 1.5, 2.0)
