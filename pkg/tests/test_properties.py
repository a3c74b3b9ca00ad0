"""Invariants checked on generated inputs."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scribblecrf.core import IGNORE, ClassPalette, ImageBuffer, LabelMask, SoftSeg, UnaryField, _softmax, one_hot
from scribblecrf.crf import CrfConfig, pairwise_energy
from scribblecrf.filtering import PermutohedralLattice, brute_force_filter
from scribblecrf.io import load_mask, load_unary, save_mask, save_unary
from scribblecrf.losses import LossConfig, dense_crf_loss, partial_cross_entropy
from scribblecrf.metrics import ConfusionMatrix, accumulate, miou

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
SETTINGS = settings(max_examples=40, deadline=None)


@st.composite
def points(draw, max_n=20, max_d=5):
    n = draw(st.integers(1, max_n))
    d = draw(st.integers(1, max_d))
    f = draw(arrays(np.float64, (n, d), elements=st.floats(-3, 3)))
    return f


@st.composite
def image_and_probs(draw, max_side=5, max_c=4):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    c = draw(st.integers(1, max_c))
    rgb = draw(arrays(np.float64, (h, w, 3), elements=st.floats(0, 255)))
    logits = draw(arrays(np.float64, (h, w, c), elements=finite))
    return ImageBuffer(rgb), SoftSeg(_softmax(logits))


@SETTINGS
@given(points(), st.data())
def test_brute_force_symmetry_and_linearity(f, data):
    n = f.shape[0]
    u = data.draw(arrays(np.float64, n, elements=finite))
    v = data.draw(arrays(np.float64, n, elements=finite))
    a, b = data.draw(finite), data.draw(finite)
    assert abs(u @ brute_force_filter(v, f) - v @ brute_force_filter(u, f)) <= 1e-9 * (1 + np.abs(u).sum() * np.abs(v).sum())
    lhs = brute_force_filter(a * u + b * v, f)
    rhs = a * brute_force_filter(u, f) + b * brute_force_filter(v, f)
    assert np.allclose(lhs, rhs, atol=1e-9)


@SETTINGS
@given(points(), st.data())
def test_brute_force_monotone_mass(f, data):
    v = data.draw(arrays(np.float64, f.shape[0], elements=st.floats(0, 5)))
    assert np.all(brute_force_filter(v, f) >= v)


@settings(max_examples=15, deadline=None)
@given(points(max_n=12))
def test_lattice_positive_and_exclude_self(f):
    lat = PermutohedralLattice(f)
    ones = np.ones(f.shape[0])
    assert np.all(lat.filter(ones) > 0)
    assert np.array_equal(lat.filter(ones, include_self=False), lat.filter(ones) - ones)


@SETTINGS
@given(image_and_probs())
def test_crf_loss_nonnegative(args):
    img, s = args
    assert dense_crf_loss(s, img, LossConfig(scale=1), exact=True)[0] >= 0


@SETTINGS
@given(image_and_probs(), st.integers(0, 3))
def test_constant_one_hot_zero_loss(args, label):
    img, s = args
    c = max(s.classes, label + 1)
    hot = one_hot(LabelMask(np.full(img.shape, label)), c)
    assert dense_crf_loss(hot, img, LossConfig(), exact=True)[0] == 0.0


@SETTINGS
@given(image_and_probs(), st.data())
def test_pce_zero_set_and_full_ce(args, data):
    img, s = args
    c = s.classes
    labels = data.draw(arrays(np.int64, img.shape, elements=st.integers(0, c - 1)))
    drop = data.draw(arrays(np.bool_, img.shape))
    partial = np.where(drop, IGNORE, labels)
    _, g = partial_cross_entropy(s, LabelMask(partial))
    assert not g[drop].any()
    full, _ = partial_cross_entropy(s, LabelMask(labels))
    p = np.take_along_axis(s.probs, labels[..., None], axis=2)
    assert abs(full + np.log(p).sum()) <= 1e-9 * max(1.0, abs(full))


@SETTINGS
@given(st.integers(1, 4), st.integers(1, 4), st.integers(2, 4), st.data())
def test_pairwise_energy_label_permutation_invariant(h, w, c, data):
    rgb = data.draw(arrays(np.float64, (h, w, 3), elements=st.floats(0, 255)))
    labels = data.draw(arrays(np.int64, (h, w), elements=st.integers(0, c - 1)))
    perm = np.array(data.draw(st.permutations(range(c))))
    img = ImageBuffer(rgb)
    a = pairwise_energy(LabelMask(labels), img, CrfConfig())
    b = pairwise_energy(LabelMask(perm[labels]), img, CrfConfig())
    assert abs(a - b) <= 1e-9 * max(1.0, a)


@st.composite
def mask_pair(draw):
    c = draw(st.integers(2, 5))
    h = draw(st.integers(1, 8))
    w = draw(st.integers(1, 8))
    pred = draw(arrays(np.int64, (h, w), elements=st.integers(0, c - 1)))
    gt = draw(arrays(np.int64, (h, w), elements=st.integers(0, c - 1)))
    return c, pred, gt


@SETTINGS
@given(mask_pair(), st.data())
def test_miou_permutation_invariant(mp, data):
    c, pred, gt = mp
    perm = np.array(data.draw(st.permutations(range(c))))
    cm1 = accumulate(ConfusionMatrix.empty(c), LabelMask(pred), LabelMask(gt))
    cm2 = accumulate(ConfusionMatrix.empty(c), LabelMask(perm[pred]), LabelMask(perm[gt]))
    assert abs(miou(cm1)[0] - miou(cm2)[0]) <= 1e-12


@SETTINGS
@given(mask_pair(), st.data())
def test_miou_monotone_under_correction(mp, data):
    c, pred, gt = mp
    wrong = np.argwhere(pred != gt)
    if len(wrong) == 0:
        return
    y, x = wrong[data.draw(st.integers(0, len(wrong) - 1))]
    fixed = pred.copy()
    fixed[y, x] = gt[y, x]
    if len(np.unique(gt)) < c or len(np.unique(fixed)) < c or len(np.unique(pred)) < c:
        return
    before = miou(accumulate(ConfusionMatrix.empty(c), LabelMask(pred), LabelMask(gt)))[0]
    after = miou(accumulate(ConfusionMatrix.empty(c), LabelMask(fixed), LabelMask(gt)))[0]
    assert after >= before - 1e-12


@SETTINGS
@given(st.lists(mask_pair(), min_size=2, max_size=4), st.randoms())
def test_accumulation_order_independent(pairs, rnd):
    c = 5
    pairs = [(p, g) for _, p, g in pairs]
    cm = ConfusionMatrix.empty(c)
    for p, g in pairs:
        cm = accumulate(cm, LabelMask(p), LabelMask(g))
    rnd.shuffle(pairs)
    cm2 = ConfusionMatrix.empty(c)
    for p, g in pairs:
        cm2 = accumulate(cm2, LabelMask(p), LabelMask(g))
    assert np.array_equal(cm.counts, cm2.counts)
    assert cm.total == sum(g.size for _, g in pairs)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.data())
def test_unary_round_trip(h, w, c, data):
    import tempfile
    from pathlib import Path

    vals = data.draw(arrays(np.float32, (h, w, c), elements=st.floats(-1e6, 1e6, width=32)))
    with tempfile.TemporaryDirectory() as d:
        save_unary(UnaryField(vals), Path(d) / "u")
        assert np.array_equal(load_unary(Path(d) / "u").logits, vals.astype(np.float64))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_mask_round_trip(h, w, data):
    import tempfile
    from pathlib import Path

    labels = data.draw(arrays(np.int64, (h, w), elements=st.sampled_from([0, 1, 5, 20, IGNORE])))
    with tempfile.TemporaryDirectory() as d:
        save_mask(LabelMask(labels), ClassPalette.voc(), Path(d) / "m.png")
        assert np.array_equal(load_mask(Path(d) / "m.png", 21).labels, labels)
