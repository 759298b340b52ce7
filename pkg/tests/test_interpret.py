import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SR, band_energy_fraction, rel_l2, sine
from nmfinterp.audio import FrameParams, Waveform, istft, soft_mask_components, stft
from nmfinterp.data import FeatureConfig
from nmfinterp.interpret import (
    InterpretError,
    check_pair,
    interpret_sample,
    relevance,
    removal_signal,
    removal_spectrogram,
    select_components,
)
from nmfinterp.models import ClassifierConfig, InterpreterSystem
from nmfinterp.nmf import Dictionary


def test_relevance_examples():
    np.testing.assert_allclose(relevance([1, 2], [1, 1]).values, [0.5, 1.0])
    np.testing.assert_allclose(relevance([1, 1], [2, -2]).values, [1.0, -1.0])


def test_relevance_matches_elementwise_oracle(rng):
    z, th = rng.uniform(0, 3, 5), rng.normal(0, 1, 5)
    prods = [z[i] * th[i] for i in range(5)]
    biggest = max(abs(p) for p in prods)
    np.testing.assert_allclose(relevance(z, th).values, [p / biggest for p in prods], rtol=1e-12)


def test_relevance_of_zero_contributions():
    r = relevance([0.0, 2.0], [1.0, 0.0])
    assert np.all(r.values == 0)
    with pytest.raises(InterpretError):
        relevance([1, 2, 3], [1, 2])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=8),
    st.floats(0.01, 100),
    st.integers(0, 2**31 - 1),
)
def test_relevance_normalised_and_scale_free(z, c, seed):
    th = np.random.default_rng(seed).normal(0, 1, len(z))
    r = relevance(z, th).values
    if np.any(np.asarray(z) * th != 0):
        assert np.max(np.abs(r)) == pytest.approx(1.0)
    np.testing.assert_allclose(relevance(c * np.asarray(z), c * th).values, r, atol=1e-12)


def test_selection_examples():
    assert select_components(np.array([0.5, 1.0]), 0.7) == [1]
    assert select_components(np.array([0.5, 0.2]), 0.5) == []
    assert select_components(np.array([-0.3, -1.0]), 0.1) == []
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(InterpretError):
            select_components(np.array([1.0]), bad)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.98), st.floats(0.001, 0.5))
def test_selection_shrinks_as_tau_rises(seed, t1, gap):
    t2 = min(t1 + gap, 0.99)
    r = relevance(*np.random.default_rng(seed).normal(0, 1, (2, 6)))
    assert set(select_components(r, t2)) <= set(select_components(r, t1))


# -- removal -----------------------------------------------------------------


def _random_case(seed, F=33, T=12, K=4):
    r = np.random.default_rng(seed)
    fp = FrameParams(2 * (F - 1), F - 1)
    x = r.standard_normal(fp.hop * (T - 1))
    spec = stft(Waveform(x, SR), fp)
    W = r.uniform(0.05, 1, (F, K))
    H = r.uniform(0.05, 1, (K, spec.shape[1]))
    return spec, W, H


def test_empty_removal_is_plain_inverse():
    spec, W, H = _random_case(0)
    assert removal_signal(spec, W, H, []).samples.tobytes() == istft(spec).samples.tobytes()


def test_full_removal_is_near_silent():
    spec, W, H = _random_case(1)
    x = istft(spec).samples.astype(np.float64)
    x2 = removal_signal(spec, W, H, range(4)).samples.astype(np.float64)
    assert np.sum(x2**2) < 1e-6 * np.sum(x**2)


@pytest.mark.parametrize("seed", range(10))
def test_removal_algebra(seed):
    spec, W, H = _random_case(seed)
    chosen = sorted(np.random.default_rng(seed).choice(4, size=1 + seed % 4, replace=False))
    per, removed = soft_mask_components(spec, W, H, chosen)
    raw = spec.log_mag.astype(np.float64) - removed
    assert raw.min() >= -1e-7
    X2 = removal_spectrogram(spec, W, H, chosen)
    np.testing.assert_allclose(X2 + sum(per.values()), spec.log_mag, atol=1e-5)


# -- whole-sample interpretation ----------------------------------------------


FEAT = FeatureConfig(mel_bands=32)


def _tone_noise_model():
    """Two atoms (440 Hz, flat) and a model whose class 0 leans on the tone atom."""
    freqs = np.fft.rfftfreq(1024, 1 / SR)
    tone = np.exp(-0.5 * ((freqs - 440) / 30.0) ** 2)
    W = Dictionary.normalized(np.stack([tone, np.ones_like(freqs)], axis=1))
    system = InterpreterSystem.build(ClassifierConfig(32, 2, channels=(4, 4, 4)), 2, seed=0)
    for p in system.psi.parameters() + system.classifier.parameters():
        p.data = np.abs(p.data) + 0.01
    system.theta.params["cls.w"].data = np.array([[1.0, -1.0], [-1.0, 1.0]], np.float32)
    x = sine(440, 1.0, amp=0.5) + 0.05 * np.random.default_rng(3).standard_normal(SR)
    return system, W, Waveform(x, SR)


def test_tone_class_selects_tone_atom():
    system, W, wave = _tone_noise_model()
    b = interpret_sample(system, W, wave, class_index=0, tau=0.1, features=FEAT)
    assert b.selected == [0]
    assert band_energy_fraction(b.x_int.samples, SR, 400, 480) >= 0.9
    assert len(b.x_int) == len(wave)
    assert list(b.per_component_audio) == [0]


def test_tau_near_one_keeps_at_most_the_top_component():
    system, W, wave = _tone_noise_model()
    b = interpret_sample(system, W, wave, class_index=1, tau=0.999, features=FEAT)
    assert set(b.selected) <= {int(np.argmax(b.relevance.values))}
    if b.selected:
        k = b.selected[0]
        assert b.x_int.samples.tobytes() == b.per_component_audio[k].samples.tobytes()
    else:
        assert not b.x_int.samples.any()


def test_interpretation_is_deterministic():
    system, W, wave = _tone_noise_model()
    a = interpret_sample(system, W, wave, features=FEAT)
    b = interpret_sample(system, W, wave, features=FEAT)
    assert a.x_int.samples.tobytes() == b.x_int.samples.tobytes()
    assert a.relevance.values.tobytes() == b.relevance.values.tobytes()
    assert a.relevance.class_index == int(np.argmax(a.class_probs))


def test_full_selection_reproduces_input():
    system, W, wave = _tone_noise_model()
    system.theta.params["cls.w"].data = np.ones((2, 2), np.float32)
    b = interpret_sample(system, W, wave, class_index=0, tau=0.1, features=FEAT)
    assert b.selected == [0, 1]
    assert rel_l2(b.x_int.samples, istft(stft(wave)).samples) < 1e-4


def test_k_mismatch_is_reported():
    system, _, wave = _tone_noise_model()
    W3 = Dictionary.normalized(np.ones((513, 3)))
    with pytest.raises(InterpretError, match="K=2.*K=3"):
        check_pair(system, W3)
    with pytest.raises(InterpretError):
        interpret_sample(system, W3, wave, features=FEAT)


def test_bad_class_index():
    system, W, wave = _tone_noise_model()
    with pytest.raises(InterpretError):
        interpret_sample(system, W, wave, class_index=5, features=FEAT)
