import numpy as np
import pytest

import oracles as O
from scribblecrf.core import ImageBuffer, LabelMask, SoftSeg, UnaryField, argmax_labeling, softmax_over_classes
from scribblecrf.crf import (
    CrfConfig,
    CrfKernels,
    mean_field_init,
    mean_field_step,
    pairwise_energy,
    refine,
    total_energy,
    unary_energy,
)

# frozen from the loop oracle on default_rng(123): 3x3 image, 2 classes
FROZEN_ENERGY = 52.92864171530268


def _frozen_instance():
    r = np.random.default_rng(123)
    rgb = r.integers(0, 256, (3, 3, 3)).astype(float)
    logits = r.normal(0, 1, (3, 3, 2))
    labels = r.integers(0, 2, (3, 3))
    return rgb, logits, labels


def test_frozen_energy():
    rgb, logits, labels = _frozen_instance()
    e = total_energy(LabelMask(labels), UnaryField(logits), ImageBuffer(rgb), CrfConfig())
    assert e == pytest.approx(FROZEN_ENERGY, abs=1e-9)
    assert O.crf_energy(labels, logits, rgb, 3, 4, 67, 3, 1) == pytest.approx(FROZEN_ENERGY, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        CrfConfig(sigma_beta=0)
    with pytest.raises(ValueError):
        CrfConfig(w1=-1)
    with pytest.raises(ValueError):
        CrfConfig(iterations=0)


def test_constant_labeling_has_zero_pairwise():
    img = ImageBuffer(np.random.default_rng(0).uniform(0, 255, (4, 5, 3)))
    assert pairwise_energy(LabelMask(np.full((4, 5), 2)), img, CrfConfig()) == 0.0


def test_two_pixel_pairwise_by_hand():
    img = ImageBuffer(np.zeros((1, 2, 3)))
    e = pairwise_energy(LabelMask(np.array([[0, 1]])), img, CrfConfig())
    # ordered pairs: both directions pay w1 * exp(-1/2a^2) + w2 * exp(-1/2g^2)
    expected = 2 * (3 * np.exp(-1 / (2 * 67.0 ** 2)) + 4 * np.exp(-0.5))
    assert e == pytest.approx(expected, abs=1e-12)


def test_unary_energy_and_errors():
    u = UnaryField(np.log(np.array([[[0.25, 0.75]]])))
    assert unary_energy(LabelMask(np.array([[1]])), u) == pytest.approx(-np.log(0.75))
    with pytest.raises(ValueError, match="complete"):
        unary_energy(LabelMask(np.array([[255]])), u)
    with pytest.raises(ValueError):
        unary_energy(LabelMask(np.array([[2]])), u)


def test_mean_field_init_is_softmax():
    u = UnaryField(np.random.default_rng(1).normal(0, 1, (3, 3, 4)))
    np.testing.assert_array_equal(mean_field_init(u).probs, softmax_over_classes(u).probs)


def test_mean_field_step_matches_direct_messages():
    r = np.random.default_rng(5)
    rgb = r.uniform(0, 255, (3, 3, 3))
    u = UnaryField(r.normal(0, 1, (3, 3, 3)))
    q = softmax_over_classes(UnaryField(r.normal(0, 1, (3, 3, 3))))
    cfg = CrfConfig()
    out = mean_field_step(q, u, ImageBuffer(rgb), cfg, exact=True).probs.reshape(-1, 3)
    ka = O.kernel_matrix(O.pixel_features(rgb, 67, 3))
    ks = O.kernel_matrix(O.pixel_features(rgb, 1, None))
    k = 3 * (ka - np.eye(9)) + 4 * (ks - np.eye(9))
    qf = q.probs.reshape(-1, 3)
    phi = u.potentials().reshape(-1, 3)
    logits = -phi - np.stack([sum(k @ qf[:, m] for m in range(3) if m != l) for l in range(3)], 1)
    expected = np.exp(logits - logits.max(1, keepdims=True))
    expected /= expected.sum(1, keepdims=True)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_zero_weights_return_unary_argmax():
    r = np.random.default_rng(2)
    u = UnaryField(r.normal(0, 1, (6, 6, 3)))
    img = ImageBuffer(r.uniform(0, 255, (6, 6, 3)))
    mask, soft = refine(u, img, CrfConfig(w1=0, w2=0))
    assert np.array_equal(mask.labels, argmax_labeling(softmax_over_classes(u)).labels)
    np.testing.assert_allclose(soft.probs, softmax_over_classes(u).probs, atol=1e-15)


def test_refine_does_not_raise_energy_small(rng):
    for _ in range(10):
        u = UnaryField(rng.normal(0, 1, (3, 3, 2)))
        img = ImageBuffer(rng.uniform(0, 255, (3, 3, 3)))
        mask, _ = refine(u, img, exact=True)
        start = argmax_labeling(softmax_over_classes(u))
        assert total_energy(mask, u, img, CrfConfig()) <= total_energy(start, u, img, CrfConfig()) + 1e-9


def test_refine_returns_argmax_of_final_q():
    r = np.random.default_rng(3)
    u = UnaryField(r.normal(0, 1, (5, 4, 3)))
    img = ImageBuffer(r.uniform(0, 255, (5, 4, 3)))
    mask, soft = refine(u, img)
    assert np.array_equal(mask.labels, argmax_labeling(soft).labels)


def test_kernels_skip_zero_weight():
    img = ImageBuffer(np.zeros((2, 2, 3)))
    k = CrfKernels(img, CrfConfig(w1=0))
    assert k.appearance is None and k.smoothness is not None


def test_shape_mismatch():
    with pytest.raises(ValueError):
        refine(UnaryField(np.zeros((2, 2, 2))), ImageBuffer(np.zeros((3, 2, 3))))
    with pytest.raises(ValueError):
        mean_field_step(SoftSeg(np.full((2, 2, 3), 1 / 3)), UnaryField(np.zeros((2, 2, 2))),
                        ImageBuffer(np.zeros((2, 2, 3))), CrfConfig())
