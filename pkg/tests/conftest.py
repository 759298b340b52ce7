import numpy as np
import pytest

SR = 44100


def sine(freq, seconds, sr=SR, amp=0.5):
    t = np.arange(int(round(seconds * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def naive_dft(x):
    """O(N^2) one-sided DFT by direct summation."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    k = np.arange(n // 2 + 1)[:, None]
    m = np.arange(n)[None, :]
    return (x[None, :] * np.exp(-2j * np.pi * k * m / n)).sum(axis=1)


def band_energy_fraction(x, sr, lo, hi):
    """Share of signal energy between lo and hi Hz, from a full-length DFT."""
    x = np.asarray(x, dtype=np.float64)
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / sr)
    total = power.sum()
    if total == 0:
        return 0.0
    return float(power[(freqs >= lo) & (freqs <= hi)].sum() / total)


def rel_l2(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Tiny:
    """A small trained setup shared by the slower tests."""

    def __init__(self, root):
        from nmfinterp.data import FeatureConfig, load_samples
        from nmfinterp.models import ClassifierConfig, TappedClassifier
        from nmfinterp.nmf import NmfConfig, learn_dictionary_flat
        from nmfinterp.synth import SynthSpec, default_recipes, generate
        from nmfinterp.training import TrainConfig, train_classifier

        self.root = root
        self.manifest = generate(SynthSpec(default_recipes(3), per_class=6, duration_s=0.5, seed=0), root / "data")
        self.features = FeatureConfig(mel_bands=32)
        self.train = load_samples(self.manifest, "train", self.features)
        self.test = load_samples(self.manifest, "test", self.features)
        self.W = learn_dictionary_flat([s.spec for s in self.train], NmfConfig(k=6, max_iters=100))
        self.clf_config = ClassifierConfig(32, 3, channels=(4, 8, 8))
        self.classifier = TappedClassifier(self.clf_config, seed=0)
        train_classifier(self.classifier, self.train, TrainConfig(epochs=25, lr=3e-3, batch_size=4))

    def fresh_classifier(self):
        from nmfinterp.models import TappedClassifier

        clf = TappedClassifier(self.clf_config)
        clf.load_state(self.classifier.state())
        return clf


@pytest.fixture(scope="session")
def tiny(tmp_path_factory):
    return Tiny(tmp_path_factory.mktemp("tiny"))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
