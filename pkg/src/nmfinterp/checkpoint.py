"""Saving and restoring dictionaries and networks through the tensor container."""

from __future__ import annotations

import os

import numpy as np

from . import __version__
from .container import Container, ContainerError, load_container, save_container
from .data import FeatureConfig
from .models import (
    ClassifierConfig,
    HeadConfig,
    HeadTheta,
    InterpreterConfig,
    InterpreterPsi,
    InterpreterSystem,
    TappedClassifier,
)
from .nmf import Dictionary

ROLES = ("dictionary", "classifier", "posthoc", "bydesign")


def _meta(role: str, **extra) -> dict:
    return {"role": role, "version": __version__, **extra}


def _check_role(c: Container, allowed: tuple[str, ...], source) -> None:
    role = c.metadata.get("role")
    if role not in allowed:
        raise ContainerError(f"{source}: expected a {' or '.join(allowed)} checkpoint, found role {role!r}")


def save_dictionary(path: str | os.PathLike, W: Dictionary, **meta) -> None:
    tensors = {"atoms": W.atoms, "frozen": W.frozen.astype(np.float32)}
    save_container(path, Container(tensors, _meta("dictionary", atom_labels=list(W.atom_labels), **meta)))


def load_dictionary(path: str | os.PathLike) -> tuple[Dictionary, dict]:
    c = load_container(path)
    _check_role(c, ("dictionary",), path)
    atoms = c["atoms"].astype(np.float64)
    return Dictionary(atoms, c["frozen"] > 0.5, list(c.metadata.get("atom_labels", []))), c.metadata


def _classifier_config(d: dict) -> ClassifierConfig:
    return ClassifierConfig(d["mel_bands"], d["n_classes"], tuple(d["channels"]), tuple(d["taps"]), d["multilabel"])


def save_classifier(path: str | os.PathLike, clf: TappedClassifier, **meta) -> None:
    tensors = {f"classifier.{k}": v for k, v in clf.state().items()}
    arch = {"classifier": _asdict(clf.config)}
    save_container(path, Container(tensors, _meta("classifier", architecture=arch, **meta)))


def _asdict(cfg) -> dict:
    from dataclasses import asdict

    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_classifier(path: str | os.PathLike) -> tuple[TappedClassifier, dict]:
    c = load_container(path)
    _check_role(c, ("classifier",), path)
    clf = TappedClassifier(_classifier_config(c.metadata["architecture"]["classifier"]))
    clf.load_state(c.with_prefix("classifier."))
    return clf, c.metadata


def save_system(path: str | os.PathLike, system: InterpreterSystem, role: str, **meta) -> None:
    if role not in ("posthoc", "bydesign"):
        raise ContainerError(f"unknown system role {role!r}")
    tensors = {}
    for prefix, module in (("classifier", system.classifier), ("psi", system.psi), ("theta", system.theta)):
        tensors.update({f"{prefix}.{k}": v for k, v in module.state().items()})
    arch = {
        "classifier": _asdict(system.classifier.config),
        "interpreter": _asdict(system.psi.config),
        "head": _asdict(system.theta.config),
    }
    save_container(path, Container(tensors, _meta(role, architecture=arch, **meta)))


def load_system(path: str | os.PathLike) -> tuple[InterpreterSystem, dict]:
    c = load_container(path)
    _check_role(c, ("posthoc", "bydesign"), path)
    arch = c.metadata["architecture"]
    clf = TappedClassifier(_classifier_config(arch["classifier"]))
    ic = arch["interpreter"]
    psi = InterpreterPsi(
        InterpreterConfig(
            tuple(ic["tap_channels"]), tuple(ic["tap_levels"]), ic["mel_bands"], ic["k"],
            ic["adapter_channels"], ic["fusion_channels"],
        )
    )
    hc = arch["head"]
    theta = HeadTheta(HeadConfig(hc["k"], hc["n_classes"], hc["multilabel"], hc["pooling"], hc["attention_hidden"]))
    clf.load_state(c.with_prefix("classifier."))
    psi.load_state(c.with_prefix("psi."))
    theta.load_state(c.with_prefix("theta."))
    return InterpreterSystem(clf, psi, theta, dict(c.metadata)), c.metadata


def features_from_meta(meta: dict) -> FeatureConfig:
    f = meta.get("features") or {}
    return FeatureConfig(f.get("fft_size", 1024), f.get("hop", 512), f.get("mel_bands", 128))
