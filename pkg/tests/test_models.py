import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmfinterp.audio import FrameParams
from nmfinterp.autodiff import Tensor
from nmfinterp.models import (
    ClassifierConfig,
    HeadConfig,
    HeadTheta,
    InterpreterConfig,
    InterpreterPsi,
    InterpreterSystem,
    MaxPoolTheta,
    ModelError,
    TappedClassifier,
    bydesign_forward,
    classifier_forward,
    head_forward,
    interpreter_forward,
)

SMALL = dict(channels=(4, 6, 8))


def _mel(seed=0, bands=32, frames=20, n=2):
    return np.random.default_rng(seed).uniform(0, 2, (n, 1, bands, frames))


def test_multiclass_probs_sum_to_one():
    clf = TappedClassifier(ClassifierConfig(32, 5, **SMALL), seed=3)
    out = classifier_forward(clf, _mel())
    np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-5)


def test_multilabel_probs_in_unit_interval():
    clf = TappedClassifier(ClassifierConfig(32, 4, multilabel=True, **SMALL), seed=3)
    p = classifier_forward(clf, _mel()).probs.data
    assert p.min() >= 0 and p.max() <= 1


def test_zero_head_gives_uniform():
    clf = TappedClassifier(ClassifierConfig(32, 4, **SMALL))
    clf.params["head.w"].data[:] = 0
    np.testing.assert_allclose(classifier_forward(clf, _mel()).probs.data, 0.25, atol=1e-7)


def test_louder_input_changes_output():
    clf = TappedClassifier(ClassifierConfig(32, 3, **SMALL), seed=1)
    mel = _mel()
    a = classifier_forward(clf, mel)
    b = classifier_forward(clf, 2 * mel)
    assert not np.allclose(a.probs.data, b.probs.data)
    assert not np.allclose(a.taps[0].data, b.taps[0].data)


def test_taps_in_block_order():
    clf = TappedClassifier(ClassifierConfig(32, 3, **SMALL))
    taps = classifier_forward(clf, _mel(frames=24)).taps
    assert [t.shape[1:] for t in taps] == clf.tap_shapes(24) == [(4, 16, 12), (6, 8, 6), (8, 4, 3)]
    sub = TappedClassifier(ClassifierConfig(32, 3, taps=(0, 2), **SMALL))
    assert [t.shape[1] for t in classifier_forward(sub, _mel()).taps] == [4, 8]


def test_classifier_config_validation():
    with pytest.raises(ModelError):
        ClassifierConfig(32, 3, taps=())
    with pytest.raises(ModelError):
        ClassifierConfig(32, 3, channels=(2, 2, 2, 2), taps=(0, 1, 2, 3))
    with pytest.raises(ModelError):
        ClassifierConfig(32, 3, taps=(3,))
    with pytest.raises(ModelError):
        classifier_forward(TappedClassifier(ClassifierConfig(32, 3, **SMALL)), _mel(bands=16))


def test_default_channels():
    assert ClassifierConfig(64, 3).channels == (16, 32, 64)


# -- interpreter -------------------------------------------------------------


def _psi_for(clf, k=5, seed=2):
    return InterpreterPsi(InterpreterConfig.for_classifier(clf.config, k, adapter_channels=4, fusion_channels=6), seed)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(8, 30))
def test_activations_nonnegative_with_frame_count(seed, frames):
    clf = TappedClassifier(ClassifierConfig(32, 3, **SMALL), seed=seed)
    psi = _psi_for(clf, seed=seed)
    mel = np.random.default_rng(seed).normal(0, 2, (1, 1, 32, frames))
    H = interpreter_forward(psi, classifier_forward(clf, mel).taps, frames)
    assert H.shape == (1, 5, frames)
    assert H.data.min() >= 0


def test_zero_taps_give_zero_activations():
    clf = TappedClassifier(ClassifierConfig(32, 3, **SMALL))
    psi = _psi_for(clf)
    taps = [Tensor(np.zeros((1, *s))) for s in clf.tap_shapes(20)]
    assert np.all(interpreter_forward(psi, taps, 20).data == 0)


def test_five_second_clip_frame_count():
    n_frames = FrameParams().n_frames(5 * 44100)
    assert n_frames == 431
    clf = TappedClassifier(ClassifierConfig(16, 2, channels=(2, 2, 2)))
    psi = _psi_for(clf, k=3)
    mel = _mel(bands=16, frames=n_frames, n=1)
    assert interpreter_forward(psi, classifier_forward(clf, mel).taps, n_frames).shape == (1, 3, 431)


def test_tap_mismatch():
    clf = TappedClassifier(ClassifierConfig(32, 3, **SMALL))
    psi = _psi_for(clf)
    taps = classifier_forward(clf, _mel()).taps
    with pytest.raises(ModelError):
        interpreter_forward(psi, taps[:2], 20)
    with pytest.raises(ModelError):
        interpreter_forward(psi, [taps[1], taps[0], taps[2]], 20)


def test_interpreter_is_small():
    clf = TappedClassifier(ClassifierConfig(128, 50))
    psi = InterpreterPsi(InterpreterConfig.for_classifier(clf.config, 100))
    assert sum(p.size for p in psi.parameters()) < 10**5


# -- heads -------------------------------------------------------------------


def test_constant_activations_pool_to_first_frame():
    theta = HeadTheta(HeadConfig(4, 3), seed=5)
    col = np.array([0.5, 1.0, 0.0, 2.0])
    out = head_forward(theta, np.tile(col[:, None], (1, 7)))
    np.testing.assert_allclose(out.z.data[0], col, rtol=1e-6)
    assert abs(out.attention.data.sum() - 1) < 1e-5


def test_max_pool_reads_spike_heights():
    H = np.zeros((3, 6))
    H[0, 2], H[1, 5], H[2, 0] = 1.5, 0.25, 3.0
    out = head_forward(MaxPoolTheta(3, 2), H)
    np.testing.assert_allclose(out.z.data[0], [1.5, 0.25, 3.0])
    assert out.attention is None


def test_attention_weights_by_hand():
    theta = HeadTheta(HeadConfig(2, 2, attention_hidden=3), seed=9)
    p = {k: v.data.astype(np.float64) for k, v in theta.params.items()}
    H = np.array([[0.1, 0.9, 0.4], [1.2, 0.0, 0.3]])
    scores = []
    for t in range(3):
        hidden = [np.tanh(sum(p["att.w1"][j, k] * H[k, t] for k in range(2)) + p["att.b1"][j]) for j in range(3)]
        scores.append(sum(p["att.w2"][0, j] * hidden[j] for j in range(3)) + p["att.b2"][0])
    e = np.exp(np.array(scores) - max(scores))
    np.testing.assert_allclose(head_forward(theta, H).attention.data[0], e / e.sum(), rtol=1e-5)


def test_head_k_mismatch():
    with pytest.raises(ModelError):
        head_forward(HeadTheta(HeadConfig(4, 3)), np.ones((5, 7)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_attention_is_a_distribution(seed):
    r = np.random.default_rng(seed)
    theta = HeadTheta(HeadConfig(6, 3), seed=seed)
    for name in ("att.w1", "att.w2"):
        theta.params[name].data = r.normal(0, 3, theta.params[name].shape).astype(np.float32)
    out = head_forward(theta, r.uniform(0, 5, (2, 6, 11)))
    a = out.attention.data
    assert a.min() >= 0
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-5)
    np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-5)


# -- composition -------------------------------------------------------------


def _system(n_classes=3, seed=0):
    cfg = ClassifierConfig(32, n_classes, **SMALL)
    s = InterpreterSystem.build(cfg, 5, seed=seed)
    s.theta.params["cls.w"].data = np.random.default_rng(seed).normal(0, 1, (n_classes, 5)).astype(np.float32)
    return s


def test_bydesign_equals_sequential_composition():
    s = _system()
    mel = _mel()
    f = classifier_forward(s.classifier, mel)
    H = interpreter_forward(s.psi, f.taps, mel.shape[-1])
    expected = head_forward(s.theta, H).probs.data
    assert bydesign_forward(s, mel).data.tobytes() == expected.tobytes()


def test_classifier_perturbation_reaches_bydesign_output():
    s = _system(seed=4)
    s.psi.freeze()
    s.theta.freeze()
    mel = _mel()
    before = bydesign_forward(s, mel).data.copy()
    s.classifier.params["block1.conv2.w"].data *= 1.5
    assert not np.allclose(before, bydesign_forward(s, mel).data)


def test_two_class_zero_weights_uniform():
    s = InterpreterSystem.build(ClassifierConfig(32, 2, **SMALL), 5)
    for module in (s.classifier, s.psi, s.theta):
        for p in module.parameters():
            p.data[:] = 0
    np.testing.assert_allclose(bydesign_forward(s, _mel()).data, 0.5)


def test_fresh_head_is_neutral():
    theta = HeadTheta(HeadConfig(4, 3))
    assert not theta.class_weights.any()


def test_checksum_tracks_parameters():
    clf = TappedClassifier(ClassifierConfig(32, 3, **SMALL))
    c = clf.checksum()
    assert TappedClassifier(ClassifierConfig(32, 3, **SMALL)).checksum() == c
    clf.params["head.b"].data[0] += 1
    assert clf.checksum() != c
