import hashlib

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from conftest import band_energy_fraction
from nmfinterp.audio import load_wav
from nmfinterp.data import (
    MULTICLASS,
    MULTILABEL,
    FeatureConfig,
    ManifestError,
    label_vector,
    load_manifest,
    load_samples,
    write_manifest,
)
from nmfinterp.synth import NOISELESS, PALETTE, Recipe, SynthError, SynthSpec, default_recipes, generate, render_source


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_counts_for_single_label_set(tmp_path):
    m = generate(SynthSpec(default_recipes(3), per_class=20, duration_s=0.5), tmp_path)
    assert len(list((tmp_path / "audio").glob("*.wav"))) == 60
    assert len(m.entries) == 60
    assert all(len(e.labels) == 1 for e in m.entries)
    assert m.task_kind == MULTICLASS
    assert (len(m.split("train")), len(m.split("test"))) == (39, 21)


def test_same_seed_same_bytes(tmp_path):
    spec = SynthSpec(default_recipes(3), per_class=3, duration_s=0.5, seed=11)
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    generate(SynthSpec(default_recipes(3), per_class=3, duration_s=0.5, seed=12), tmp_path / "c")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_noiseless_tone_stays_in_band(tmp_path):
    tone = PALETTE[0]
    assert tone.kind == "tone"
    m = generate(SynthSpec(default_recipes(2), per_class=4, duration_s=1.0, snr_db=NOISELESS), tmp_path)
    for e in m.entries:
        if e.labels == (tone.name,):
            w = load_wav(e.path)
            assert band_energy_fraction(w.samples, w.sample_rate, tone.freq - 40, tone.freq + 40) >= 0.99


@pytest.mark.parametrize("recipe", PALETTE, ids=lambda r: r.name)
def test_each_recipe_concentrates_energy_in_its_band(recipe):
    sr = 44100
    x = render_source(recipe, sr, sr, np.random.default_rng(0))
    lo, hi = recipe.centre_band
    assert band_energy_fraction(x, sr, lo - 100, hi + 100) >= 0.95


def test_round_trip_through_manifest(tmp_path):
    m = generate(SynthSpec(default_recipes(4), per_class=3, duration_s=0.5), tmp_path)
    again = load_manifest(tmp_path / "manifest.csv")
    assert again.class_names == m.class_names == [r.name for r in default_recipes(4)]
    assert [(e.path, e.split, e.labels) for e in again.entries] == [(e.path, e.split, e.labels) for e in m.entries]


def test_multilabel_generation(tmp_path):
    spec = SynthSpec(default_recipes(4), per_class=10, duration_s=0.5, multilabel=True, seed=3)
    m = generate(spec, tmp_path)
    assert m.task_kind == MULTILABEL
    sizes = [len(e.labels) for e in m.entries]
    assert max(sizes) <= 3
    assert any(s >= 2 for s in sizes)
    assert any(s == 0 for s in sizes)
    assert m.class_names == [r.name for r in default_recipes(4)]


def test_classes_are_linearly_separable(tmp_path):
    m = generate(SynthSpec(default_recipes(3), per_class=10, duration_s=0.5, seed=5), tmp_path)
    samples = load_samples(m, "train", FeatureConfig(mel_bands=32)) + load_samples(m, "test", FeatureConfig(mel_bands=32))
    x = np.stack([s.mel.values.mean(axis=1) for s in samples])
    y = np.array([np.argmax(s.label) for s in samples])
    assert LogisticRegression(max_iter=2000).fit(x, y).score(x, y) >= 0.95


def test_spec_validation(tmp_path):
    with pytest.raises(SynthError):
        SynthSpec(default_recipes(2)[:1])
    with pytest.raises(SynthError):
        SynthSpec(default_recipes(2), duration_s=0.4)
    with pytest.raises(SynthError):
        SynthSpec([Recipe("x", "tone", freq=30000.0), PALETTE[1]])
    with pytest.raises(SynthError):
        default_recipes(1)
    (tmp_path / "file").write_text("")
    with pytest.raises(SynthError):
        generate(SynthSpec(default_recipes(2), per_class=2, duration_s=0.5), tmp_path / "file")


# -- manifests ---------------------------------------------------------------


def _touch(root, *names):
    for n in names:
        (root / n).write_bytes(b"")


def test_two_row_manifest(tmp_path):
    _touch(tmp_path, "a.wav", "b.wav")
    write_manifest(tmp_path / "m.csv", [("a.wav", "train", ["dog"]), ("b.wav", "test", ["cat"])])
    m = load_manifest(tmp_path / "m.csv")
    assert len(m.entries) == 2 and m.n_classes == 2
    assert m.class_table == {"dog": 0, "cat": 1}
    assert m.entries[0].path == tmp_path / "a.wav"


def test_multilabel_is_inferred(tmp_path):
    _touch(tmp_path, "a.wav", "b.wav")
    (tmp_path / "m.csv").write_text("path,split,labels\na.wav,train,dog;music\nb.wav,test,dog\n")
    m = load_manifest(tmp_path / "m.csv")
    assert m.task_kind == MULTILABEL
    with pytest.raises(ManifestError, match="2 labels"):
        load_manifest(tmp_path / "m.csv", task_kind=MULTICLASS)


def test_manifest_errors(tmp_path):
    _touch(tmp_path, "a.wav", "b.wav")
    (tmp_path / "bad_split.csv").write_text("path,split,labels\na.wav,valid,dog\nb.wav,test,dog\n")
    with pytest.raises(ManifestError, match="unknown split"):
        load_manifest(tmp_path / "bad_split.csv")
    (tmp_path / "missing.csv").write_text("path,split,labels\nzzz.wav,train,dog\nb.wav,test,dog\n")
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "missing.csv")
    (tmp_path / "one_split.csv").write_text("path,split,labels\na.wav,train,dog\n")
    with pytest.raises(ManifestError, match="empty"):
        load_manifest(tmp_path / "one_split.csv")
    (tmp_path / "header.csv").write_text("file,split,labels\na.wav,train,dog\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "header.csv")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "absent.csv")


def test_label_vectors(tmp_path):
    _touch(tmp_path, "a.wav", "b.wav", "c.wav", "d.wav", "e.wav")
    (tmp_path / "m.csv").write_text(
        "path,split,labels\na.wav,train,w\nb.wav,train,x\nc.wav,test,y;w\nd.wav,test,z;w\ne.wav,test,\n"
    )
    m = load_manifest(tmp_path / "m.csv")
    e = {x.path.name: x for x in m.entries}
    np.testing.assert_array_equal(label_vector(e["c.wav"], m), [1, 0, 1, 0])
    np.testing.assert_array_equal(label_vector(e["e.wav"], m), [0, 0, 0, 0])
    np.testing.assert_array_equal(label_vector(e["d.wav"], m), [1, 0, 0, 1])

    (tmp_path / "mc.csv").write_text("path,split,labels\na.wav,train,p\nb.wav,train,q\nc.wav,test,r\nd.wav,test,s\n")
    mc = load_manifest(tmp_path / "mc.csv")
    np.testing.assert_array_equal(label_vector(mc.entries[2], mc), [0, 0, 1, 0])
