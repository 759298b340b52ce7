"""Seeded synthetic sound-event datasets written as WAV files plus a manifest."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, save_wav
from .data import Manifest, load_manifest, write_manifest

NOISELESS = math.inf
FADE_S = 0.01
SOURCE_AMPLITUDE = (0.3, 0.6)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Recipe:
    """One sound class. ``kind`` is tone, chirp, noise-burst or am-tone."""

    name: str
    kind: str
    freq: float = 0.0
    f0: float = 0.0
    f1: float = 0.0
    band: tuple[float, float] = (0.0, 0.0)
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("tone", "chirp", "noise-burst", "am-tone"):
            raise SynthError(f"unknown recipe kind {self.kind!r}")

    @property
    def centre_band(self) -> tuple[float, float]:
        """Frequency range carrying the recipe's energy."""
        if self.kind in ("tone", "am-tone"):
            return (self.freq, self.freq)
        if self.kind == "chirp":
            return (min(self.f0, self.f1), max(self.f0, self.f1))
        return tuple(self.band)


PALETTE = (
    Recipe("tone", "tone", freq=440.0),
    Recipe("chirp", "chirp", f0=1000.0, f1=4000.0),
    Recipe("noise", "noise-burst", band=(5000.0, 10000.0)),
    Recipe("amtone", "am-tone", freq=1500.0, rate=8.0),
    Recipe("tone2", "tone", freq=2500.0),
    Recipe("downchirp", "chirp", f0=8000.0, f1=5000.0),
    Recipe("hiss", "noise-burst", band=(12000.0, 16000.0)),
    Recipe("amtone2", "am-tone", freq=3300.0, rate=12.0),
)


def default_recipes(n: int) -> list[Recipe]:
    if not 2 <= n <= len(PALETTE):
        raise SynthError(f"between 2 and {len(PALETTE)} built-in classes are available, got {n}")
    return list(PALETTE[:n])


@dataclass
class SynthSpec:
    classes: list[Recipe]
    per_class: int = 20
    duration_s: float = 1.0
    snr_db: float = 20.0
    multilabel: bool = False
    mix_prob: float = 0.5
    empty_prob: float = 0.1
    seed: int = 0
    sample_rate: int = 44100
    test_fraction: float = 1.0 / 3.0

    def __post_init__(self):
        if len(self.classes) < 2:
            raise SynthError("at least 2 classes are required")
        if len({r.name for r in self.classes}) != len(self.classes):
            raise SynthError("class names must be unique")
        if self.duration_s < 0.5:
            raise SynthError(f"duration must be >= 0.5 s, got {self.duration_s}")
        if self.per_class < 2:
            raise SynthError("per_class must be >= 2 so both splits get samples")
        if not 0.0 < self.test_fraction < 1.0:
            raise SynthError("test_fraction must lie in (0, 1)")
        for r in self.classes:
            lo, hi = r.centre_band
            if hi >= self.sample_rate / 2:
                raise SynthError(f"class {r.name!r} reaches {hi} Hz, above Nyquist")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_db"] = "inf" if math.isinf(self.snr_db) else self.snr_db
        return d


def _envelope(n: int, sr: int) -> np.ndarray:
    fade = min(int(FADE_S * sr), n // 2)
    env = np.ones(n)
    if fade:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        env[:fade] = ramp
        env[n - fade:] = ramp[::-1]
    return env


def render_source(recipe: Recipe, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-peak-ish event of ``n`` samples for one recipe."""
    t = np.arange(n) / sr
    if recipe.kind == "tone":
        x = np.sin(2 * np.pi * recipe.freq * t + rng.uniform(0, 2 * np.pi))
    elif recipe.kind == "am-tone":
        carrier = np.sin(2 * np.pi * recipe.freq * t + rng.uniform(0, 2 * np.pi))
        x = carrier * (1.0 + 0.8 * np.sin(2 * np.pi * recipe.rate * t)) / 1.8
    elif recipe.kind == "chirp":
        dur = n / sr
        x = np.sin(2 * np.pi * (recipe.f0 * t + 0.5 * (recipe.f1 - recipe.f0) / dur * t * t))
    else:
        spectrum = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        lo, hi = recipe.band
        spectrum[(freqs < lo) | (freqs > hi)] = 0.0
        x = np.fft.irfft(spectrum, n=n)
        x /= max(np.max(np.abs(x)), 1e-12)
    return x * _envelope(n, sr)


def _place_event(recipe: Recipe, n_total: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    length = int(rng.integers(n_total // 2, n_total + 1))
    start = int(rng.integers(0, n_total - length + 1))
    out = np.zeros(n_total)
    out[start:start + length] = rng.uniform(*SOURCE_AMPLITUDE) * render_source(recipe, length, sr, rng)
    return out


def render_clip(spec: SynthSpec, recipes: list[Recipe], rng: np.random.Generator) -> np.ndarray:
    n = int(round(spec.duration_s * spec.sample_rate))
    clip = np.zeros(n)
    for r in recipes:
        clip += _place_event(r, n, spec.sample_rate, rng)
    if not math.isinf(spec.snr_db):
        power = np.mean(clip ** 2) if recipes else 0.5 * np.mean(SOURCE_AMPLITUDE) ** 2
        clip += rng.standard_normal(n) * math.sqrt(power / 10 ** (spec.snr_db / 10))
    peak = np.max(np.abs(clip))
    if peak > 0.99:
        clip *= 0.99 / peak
    return clip


def _clip_plan(spec: SynthSpec) -> list[tuple[str, list[int]]]:
    """(split, class indices) per clip, in file order."""
    n_test = max(1, int(round(spec.per_class * spec.test_fraction)))
    plan = []
    if not spec.multilabel:
        for c in range(len(spec.classes)):
            for i in range(spec.per_class):
                plan.append(("train" if i < spec.per_class - n_test else "test", [c]))
        return plan
    rng = np.random.default_rng([spec.seed, 1])
    total = spec.per_class * len(spec.classes)
    n_test_total = max(1, int(round(total * spec.test_fraction)))
    for i in range(total):
        split = "train" if i < total - n_test_total else "test"
        if i < len(spec.classes):
            # one clean clip per class first, so class order follows the recipes
            plan.append((split, [i]))
            continue
        if rng.random() < spec.empty_prob:
            plan.append((split, []))
            continue
        chosen = [int(rng.integers(len(spec.classes)))]
        while len(chosen) < 3 and rng.random() < spec.mix_prob:
            rest = [c for c in range(len(spec.classes)) if c not in chosen]
            chosen.append(int(rng.choice(rest)))
        plan.append((split, sorted(chosen)))
    return plan


def generate(spec: SynthSpec, out_dir: str | os.PathLike) -> Manifest:
    """Render every clip to ``out_dir/audio`` and write ``out_dir/manifest.csv``."""
    out = Path(out_dir)
    try:
        (out / "audio").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SynthError(f"cannot create {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise SynthError(f"{out} is not writable")
    rows = []
    for idx, (split, classes) in enumerate(_clip_plan(spec)):
        rng = np.random.default_rng([spec.seed, 0, idx])
        samples = render_clip(spec, [spec.classes[c] for c in classes], rng)
        rel = f"audio/clip{idx:05d}.wav"
        save_wav(Waveform(samples, spec.sample_rate), out / rel)
        rows.append((rel, split, [spec.classes[c].name for c in classes]))
    write_manifest(out / "manifest.csv", rows)
    return load_manifest(out / "manifest.csv", task_kind="multi-label" if spec.multilabel else "multi-class")
