"""Sparse NMF dictionary learning with multiplicative updates.

Minimizes ``||X - W H||_F^2 + mu * ||H||_1`` subject to ``W, H >= 0`` and unit
Euclidean norm for every column of ``W``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .audio import Spectrogram

log = logging.getLogger(__name__)

_TINY = 1e-12
INIT_FLOOR = 1e-3


class NmfError(ValueError):
    pass


@dataclass
class NmfConfig:
    k: int
    mu: float = 0.1
    max_iters: int = 500
    rel_tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise NmfError(f"k must be >= 1, got {self.k}")
        if self.mu < 0:
            raise NmfError(f"mu must be >= 0, got {self.mu}")
        if self.max_iters < 1:
            raise NmfError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.rel_tol < 0:
            raise NmfError(f"rel_tol must be >= 0, got {self.rel_tol}")


@dataclass
class Dictionary:
    """Nonnegative spectral atoms (F x K) with unit-norm columns."""

    atoms: np.ndarray
    frozen: np.ndarray | None = None
    atom_labels: list[str | None] = field(default_factory=list)

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2:
            raise NmfError(f"atoms must be a matrix, got shape {self.atoms.shape}")
        if np.any(self.atoms < 0):
            raise NmfError("dictionary atoms must be nonnegative")
        norms = np.linalg.norm(self.atoms, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise NmfError("dictionary columns must have unit norm")
        if self.frozen is None:
            self.frozen = np.zeros(self.k, dtype=bool)
        self.frozen = np.asarray(self.frozen, dtype=bool)
        if self.frozen.shape != (self.k,):
            raise NmfError(f"frozen mask has shape {self.frozen.shape}, expected ({self.k},)")
        if self.atom_labels and len(self.atom_labels) != self.k:
            raise NmfError("atom_labels must be empty or have one entry per atom")

    @property
    def k(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_bins(self) -> int:
        return self.atoms.shape[0]

    @classmethod
    def normalized(cls, atoms, frozen=None, atom_labels=None) -> "Dictionary":
        atoms = np.asarray(atoms, dtype=np.float64)
        return cls(atoms / np.linalg.norm(atoms, axis=0), frozen, list(atom_labels or []))


@dataclass
class NmfResult:
    W: Dictionary
    H: np.ndarray
    objective_trace: list[float]


def objective(X: np.ndarray, W: np.ndarray, H: np.ndarray, mu: float) -> float:
    R = X - W @ H
    return float(np.sum(R * R) + mu * np.sum(H))


def _update_h(X, W, H, mu):
    return H * (W.T @ X) / (W.T @ W @ H + mu / 2.0 + _TINY)


def _update_w(X, W, H, free):
    num = X @ H.T
    den = W @ (H @ H.T) + _TINY
    W_new = W.copy()
    W_new[:, free] = W[:, free] * num[:, free] / den[:, free]
    return W_new


def _renormalize(W, H, free):
    norms = np.linalg.norm(W[:, free], axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    W = W.copy()
    H = H.copy()
    W[:, free] /= norms
    H[free, :] *= norms[:, None]
    return W, H


def _run(X, W, H, cfg, free, label):
    trace: list[float] = []
    prev = objective(X, W, H, cfg.mu)
    update_w = bool(np.any(free))
    for it in range(cfg.max_iters):
        H = _update_h(X, W, H, cfg.mu)
        if update_w:
            W = _update_w(X, W, H, free)
            W, H = _renormalize(W, H, free)
        cur = objective(X, W, H, cfg.mu)
        trace.append(cur)
        improvement = (prev - cur) / max(abs(prev), _TINY)
        prev = cur
        if improvement < cfg.rel_tol:
            break
    log.debug("%s: %d iterations, objective %.6g", label, len(trace), trace[-1] if trace else prev)
    return W, H, trace


def sparse_nmf_fit(X_train: np.ndarray, cfg: NmfConfig, init_W: Dictionary | None = None) -> NmfResult:
    """Learn a dictionary of ``cfg.k`` atoms.

    When ``init_W`` is given it must have ``cfg.k`` columns. Its frozen columns
    stay bitwise fixed; the remaining columns start from the seeded random draw.
    """
    X = np.asarray(X_train, dtype=np.float64)
    if X.ndim != 2:
        raise NmfError(f"X_train must be a matrix, got shape {X.shape}")
    if np.any(X < 0):
        raise NmfError("X_train has negative entries")
    F, N = X.shape
    if cfg.k > min(F, N):
        raise NmfError(f"k={cfg.k} exceeds min(F, N)=min({F}, {N})")
    rng = np.random.default_rng(cfg.seed)
    W = rng.uniform(INIT_FLOOR, 1.0, size=(F, cfg.k))
    H = rng.uniform(INIT_FLOOR, 1.0, size=(cfg.k, N))
    frozen = np.zeros(cfg.k, dtype=bool)
    labels: list[str | None] = []
    if init_W is not None:
        if init_W.atoms.shape != (F, cfg.k):
            raise NmfError(f"init_W has shape {init_W.atoms.shape}, expected {(F, cfg.k)}")
        frozen = init_W.frozen.copy()
        W[:, frozen] = init_W.atoms[:, frozen]
        labels = list(init_W.atom_labels)
    free = ~frozen
    W[:, free] /= np.linalg.norm(W[:, free], axis=0)
    W, H, trace = _run(X, W, H, cfg, free, "fit")
    return NmfResult(Dictionary(W, frozen, labels), H, trace)


def infer_activations(X: np.ndarray, W: Dictionary, cfg: NmfConfig) -> np.ndarray:
    """Activations for ``X`` with every atom of ``W`` held fixed."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != W.n_bins:
        raise NmfError(f"X shape {X.shape} does not match dictionary with {W.n_bins} rows")
    if np.any(X < 0):
        raise NmfError("X has negative entries")
    rng = np.random.default_rng(cfg.seed)
    H = rng.uniform(INIT_FLOOR, 1.0, size=(W.k, X.shape[1]))
    _, H, _ = _run(X, W.atoms, H, cfg, np.zeros(W.k, dtype=bool), "infer")
    return H


def build_training_matrix(specs: Sequence[Spectrogram | np.ndarray], chunk: int = 5) -> np.ndarray:
    """Concatenate log-magnitude frames after averaging non-overlapping chunks of ``chunk`` frames."""
    if chunk < 1:
        raise NmfError(f"chunk must be >= 1, got {chunk}")
    if len(specs) == 0:
        raise NmfError("no spectrograms given")
    blocks = []
    for spec in specs:
        X = np.asarray(spec.log_mag if isinstance(spec, Spectrogram) else spec, dtype=np.float64)
        T = X.shape[1]
        cols = [X[:, s:s + chunk].mean(axis=1) for s in range(0, T, chunk)]
        blocks.append(np.stack(cols, axis=1))
    return np.concatenate(blocks, axis=1)


def learn_dictionary_flat(specs: Sequence[Spectrogram], cfg: NmfConfig, chunk: int = 5) -> Dictionary:
    """Single joint factorization of all training spectrograms."""
    X = build_training_matrix(specs, chunk)
    return sparse_nmf_fit(X, cfg).W


def learn_dictionary_class_noise(
    specs: Sequence[Spectrogram],
    labels: np.ndarray,
    class_names: Sequence[str],
    noise_k: int,
    per_class_k: int,
    per_class_sample_cap: int,
    cfg: NmfConfig,
    chunk: int = 5,
) -> Dictionary:
    """Class-wise dictionary with a shared, frozen noise model.

    Stage 1 fits ``noise_k`` atoms on the samples with no positive label.
    Stage 2 fits ``per_class_k`` atoms per class on up to
    ``per_class_sample_cap`` positive samples, with the noise atoms frozen.
    Only the class atoms are kept in the returned dictionary.
    """
    labels = np.asarray(labels)
    if per_class_k < 1:
        raise NmfError("per_class_k must be >= 1")
    if noise_k < 1:
        raise NmfError("noise_k must be >= 1")
    if labels.shape != (len(specs), len(class_names)):
        raise NmfError(f"labels shape {labels.shape} does not match {len(specs)} samples x {len(class_names)} classes")
    negatives = [s for s, row in zip(specs, labels) if not np.any(row > 0)]
    if not negatives:
        raise NmfError("class-noise strategy needs samples without any positive label")
    rng = np.random.default_rng(cfg.seed)
    noise_cfg = NmfConfig(noise_k, cfg.mu, cfg.max_iters, cfg.rel_tol, cfg.seed)
    W_noise = sparse_nmf_fit(build_training_matrix(negatives, chunk), noise_cfg).W.atoms

    atoms, atom_labels = [], []
    for c, name in enumerate(class_names):
        positive = np.flatnonzero(labels[:, c] > 0)
        if positive.size == 0:
            raise NmfError(f"class {name!r} has no positive samples")
        if positive.size > per_class_sample_cap:
            positive = np.sort(rng.choice(positive, size=per_class_sample_cap, replace=False))
        X_c = build_training_matrix([specs[i] for i in positive], chunk)
        k_total = noise_k + per_class_k
        init = np.hstack([W_noise, np.full((W_noise.shape[0], per_class_k), 1.0 / np.sqrt(W_noise.shape[0]))])
        frozen = np.r_[np.ones(noise_k, dtype=bool), np.zeros(per_class_k, dtype=bool)]
        class_cfg = NmfConfig(k_total, cfg.mu, cfg.max_iters, cfg.rel_tol, cfg.seed + 1 + c)
        fit = sparse_nmf_fit(X_c, class_cfg, Dictionary(init, frozen))
        atoms.append(fit.W.atoms[:, noise_k:])
        atom_labels.extend([name] * per_class_k)
    return Dictionary(np.hstack(atoms), None, atom_labels)
