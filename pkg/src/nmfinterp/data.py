"""Dataset manifests and per-sample feature extraction."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import FrameParams, MelSpectrogram, Spectrogram, Waveform, load_wav, log_mel, stft

SPLITS = ("train", "test")
MULTICLASS = "multi-class"
MULTILABEL = "multi-label"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    split: str
    labels: tuple[str, ...]

    @property
    def sample_id(self) -> str:
        return self.path.stem


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    class_table: dict[str, int]
    task_kind: str
    source: Path | None = None

    @property
    def class_names(self) -> list[str]:
        return sorted(self.class_table, key=self.class_table.get)

    @property
    def n_classes(self) -> int:
        return len(self.class_table)

    @property
    def multilabel(self) -> bool:
        return self.task_kind == MULTILABEL

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def load_manifest(path: str | os.PathLike, task_kind: str | None = None, check_files: bool = True) -> Manifest:
    """Read a ``path,split,labels`` CSV (labels separated by ``;``).

    Relative paths resolve against the manifest's directory. The task kind is
    multi-label if any row has zero or several labels, unless ``task_kind``
    forces it.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} does not exist")
    base = path.parent
    entries: list[ManifestEntry] = []
    class_table: dict[str, int] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:3]] != ["path", "split", "labels"]:
            raise ManifestError(f"{path}: header must be path,split,labels")
        for lineno, row in enumerate(reader, start=2):
            split = (row["split"] or "").strip()
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {split!r} (expected train or test)")
            labels = tuple(lbl.strip() for lbl in (row["labels"] or "").split(";") if lbl.strip())
            entry_path = Path(row["path"].strip())
            if not entry_path.is_absolute():
                entry_path = base / entry_path
            if check_files and not entry_path.is_file():
                raise ManifestError(f"{path}:{lineno}: audio file {entry_path} not found")
            for lbl in labels:
                class_table.setdefault(lbl, len(class_table))
            entries.append(ManifestEntry(entry_path, split, labels))
    if not entries:
        raise ManifestError(f"{path}: no entries")
    inferred = MULTILABEL if any(len(e.labels) != 1 for e in entries) else MULTICLASS
    kind = task_kind or inferred
    if kind == MULTICLASS:
        for e in entries:
            if len(e.labels) != 1:
                raise ManifestError(f"{path}: multi-class row {e.path.name} has {len(e.labels)} labels")
    for split in SPLITS:
        if not any(e.split == split for e in entries):
            raise ManifestError(f"{path}: split {split!r} is empty")
    return Manifest(entries, class_table, kind, path)


def write_manifest(manifest_path: str | os.PathLike, rows: list[tuple[str, str, list[str]]]) -> None:
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "split", "labels"])
        for p, split, labels in rows:
            writer.writerow([p, split, ";".join(labels)])


def label_vector(entry: ManifestEntry, manifest: Manifest) -> np.ndarray:
    """One-hot (multi-class) or multi-hot (multi-label) target vector."""
    y = np.zeros(manifest.n_classes, dtype=np.float32)
    for lbl in entry.labels:
        y[manifest.class_table[lbl]] = 1.0
    return y


# ---------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class FeatureConfig:
    fft_size: int = 1024
    hop: int = 512
    mel_bands: int = 128

    @property
    def frame_params(self) -> FrameParams:
        return FrameParams(self.fft_size, self.hop)


@dataclass
class Sample:
    sample_id: str
    waveform: Waveform
    spec: Spectrogram
    mel: MelSpectrogram
    label: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))


def featurize(w: Waveform, cfg: FeatureConfig) -> tuple[Spectrogram, MelSpectrogram]:
    spec = stft(w, cfg.frame_params)
    return spec, log_mel(spec, cfg.mel_bands)


def load_samples(manifest: Manifest, split: str, cfg: FeatureConfig) -> list[Sample]:
    samples = []
    for entry in manifest.split(split):
        w = load_wav(entry.path)
        spec, mel = featurize(w, cfg)
        samples.append(Sample(entry.sample_id, w, spec, mel, label_vector(entry, manifest)))
    return samples
