"""Component relevance, selection and listenable interpretations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Spectrogram, Waveform, generate_interpretation_audio, istft, soft_mask_components
from .data import FeatureConfig, featurize
from .models import InterpreterSystem
from .nmf import Dictionary

DEFAULT_TAU = 0.1


class InterpretError(ValueError):
    pass


@dataclass(frozen=True)
class RelevanceVector:
    values: np.ndarray
    class_index: int = 0
    sample_id: str = ""


def relevance(z, theta_row, class_index: int = 0, sample_id: str = "") -> RelevanceVector:
    """Contributions ``z_k * theta_k`` divided by their largest magnitude.

    All-zero contributions give an all-zero vector.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    theta_row = np.asarray(theta_row, dtype=np.float64).reshape(-1)
    if z.shape != theta_row.shape:
        raise InterpretError(f"relevance: z has {z.size} entries, class weights have {theta_row.size}")
    contrib = z * theta_row
    scale = np.max(np.abs(contrib)) if contrib.size else 0.0
    values = contrib / scale if scale > 0 else np.zeros_like(contrib)
    return RelevanceVector(values, int(class_index), sample_id)


def select_components(r: RelevanceVector | np.ndarray, tau: float) -> list[int]:
    """Indices whose relevance is strictly above ``tau``."""
    if not 0.0 < tau < 1.0:
        raise InterpretError(f"tau must lie in (0, 1), got {tau}")
    values = r.values if isinstance(r, RelevanceVector) else np.asarray(r)
    return [int(k) for k in np.flatnonzero(values > tau)]


@dataclass
class InterpretationBundle:
    relevance: RelevanceVector
    tau: float
    selected: list[int]
    per_component_audio: dict[int, Waveform]
    x_int: Waveform
    class_probs: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class Analysis:
    """Everything the interpretable path computes for one clip."""

    spec: Spectrogram
    classifier_probs: np.ndarray  # (C,)
    interp_probs: np.ndarray
    H: np.ndarray  # (K, T)
    z: np.ndarray  # (K,)


def check_pair(system: InterpreterSystem, W: Dictionary) -> None:
    if system.k != W.k:
        raise InterpretError(f"K mismatch: model has K={system.k}, dictionary has K={W.k}")


def analyse(system: InterpreterSystem, W: Dictionary, waveform: Waveform, features: FeatureConfig) -> Analysis:
    check_pair(system, W)
    spec, mel = featurize(waveform, features)
    if spec.shape[0] != W.n_bins:
        raise InterpretError(f"dictionary has {W.n_bins} frequency rows, spectrogram has {spec.shape[0]}")
    f_out, H, head = system.forward(mel.values[None, None])
    return Analysis(
        spec,
        f_out.probs.data[0].astype(np.float64),
        head.probs.data[0].astype(np.float64),
        H.data[0].astype(np.float64),
        head.z.data[0].astype(np.float64),
    )


def interpret_sample(
    system: InterpreterSystem,
    W: Dictionary,
    waveform: Waveform,
    class_index: int | None = None,
    tau: float = DEFAULT_TAU,
    features: FeatureConfig | None = None,
    sample_id: str = "",
) -> InterpretationBundle:
    """Explain the classifier's decision for ``class_index`` (default: its top class)."""
    features = features or FeatureConfig(mel_bands=system.classifier.config.mel_bands)
    a = analyse(system, W, waveform, features)
    c = int(np.argmax(a.classifier_probs)) if class_index is None else int(class_index)
    if not 0 <= c < len(a.classifier_probs):
        raise InterpretError(f"class index {c} outside 0..{len(a.classifier_probs) - 1}")
    r = relevance(a.z, system.theta.class_weights[c], c, sample_id)
    selected = select_components(r, tau)
    per_component, x_int = generate_interpretation_audio(a.spec, W.atoms, a.H, selected)
    return InterpretationBundle(r, tau, selected, per_component, x_int, a.classifier_probs)


def removal_spectrogram(spec: Spectrogram, W: np.ndarray, H: np.ndarray, components) -> np.ndarray:
    """``X`` minus the soft-masked parts of ``components``, floored at zero."""
    _, removed = soft_mask_components(spec, W, H, components)
    return np.maximum(np.asarray(spec.log_mag, dtype=np.float64) - removed, 0.0)


def removal_signal(spec: Spectrogram, W: Dictionary | np.ndarray, H: np.ndarray, components) -> Waveform:
    """Waveform with ``components`` masked out, inverted with the input phase."""
    atoms = W.atoms if isinstance(W, Dictionary) else np.asarray(W)
    components = list(components)
    if not components:
        return istft(spec)
    return istft(spec.with_log_mag(removal_spectrogram(spec, atoms, H, components)))
