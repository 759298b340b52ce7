"""Losses and training loops for the classifier, the post-hoc interpreter and by-design models.

Every loss is mean-reduced: over samples for the classification terms, over
all ``F * T`` entries for the reconstruction term and over all ``K * T``
entries for the sparsity term.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Adam, Tensor, backward, clip_grad_norm, ops
from .data import MULTICLASS, MULTILABEL, Sample
from .models import HeadTheta, InterpreterPsi, InterpreterSystem, TappedClassifier
from .nmf import Dictionary

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
VARIANTS = ("posthoc", "bydesign", "bydesign_nopred")


class TrainingError(ValueError):
    pass


@dataclass
class LossWeights:
    alpha: float = 10.0
    beta: float = 0.8
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise TrainingError(f"{name} must be >= 0, got {getattr(self, name)}")


POSTHOC_WEIGHTS = LossWeights(alpha=10.0, beta=0.8)
BYDESIGN_WEIGHTS = LossWeights(alpha=3.0, beta=0.2, gamma=1.0)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 2e-4
    seed: int = 0
    task_kind: str = MULTICLASS
    variant: str = "posthoc"
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise TrainingError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.task_kind not in (MULTICLASS, MULTILABEL):
            raise TrainingError(f"unknown task kind {self.task_kind!r}")
        if self.variant not in VARIANTS:
            raise TrainingError(f"unknown variant {self.variant!r}")

    @property
    def multilabel(self) -> bool:
        return self.task_kind == MULTILABEL


@dataclass
class TrainReport:
    history: list[dict] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [h["total"] for h in self.history]


# ---------------------------------------------------------------------------
# losses


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def fidelity_loss(interp_probs, classifier_probs, task_kind: str = MULTICLASS) -> Tensor:
    """Cross-entropy of interpreter probabilities against classifier probabilities.

    Multi-class uses ``-t . log p``; multi-label uses binary cross-entropy with
    the soft targets ``t``, summed over classes. Both average over samples.
    The targets carry no gradient.
    """
    p = _as_tensor(interp_probs)
    t = np.asarray(classifier_probs.data if isinstance(classifier_probs, Tensor) else classifier_probs)
    if p.shape != t.shape:
        raise TrainingError(f"fidelity_loss: probabilities {p.shape} and targets {t.shape} differ")
    if p.ndim == 1:
        p = p.reshape(1, -1)
        t = t.reshape(1, -1)
    target = Tensor(t.astype(p.data.dtype))
    log_p = ops.log(ops.clamp(p, PROB_FLOOR, None))
    per_class = target * log_p
    if task_kind == MULTILABEL:
        log_q = ops.log(ops.clamp(1.0 - p, PROB_FLOOR, None))
        per_class = per_class + Tensor((1.0 - t).astype(p.data.dtype)) * log_q
    elif task_kind != MULTICLASS:
        raise TrainingError(f"unknown task kind {task_kind!r}")
    return -ops.sum(per_class) / p.shape[0]


classification_loss = fidelity_loss


def nmf_loss(X, W: Dictionary | np.ndarray, H) -> Tensor:
    """Mean squared reconstruction error of ``X`` by ``W H``; ``W`` is a constant."""
    atoms = W.atoms if isinstance(W, Dictionary) else np.asarray(W)
    H = _as_tensor(H)
    X = np.asarray(X)
    if H.ndim == 2:
        H = H.reshape(1, *H.shape)
    if X.ndim == 2:
        X = X[None]
    if atoms.shape[1] != H.shape[1]:
        raise TrainingError(f"nmf_loss: dictionary has K={atoms.shape[1]} atoms, activations have K={H.shape[1]}")
    if X.shape != (H.shape[0], atoms.shape[0], H.shape[2]):
        raise TrainingError(f"nmf_loss: spectrogram {X.shape} does not match W {atoms.shape} and H {H.shape}")
    dtype = H.data.dtype
    residual = Tensor(X.astype(dtype)) - ops.matmul(Tensor(atoms.astype(dtype)), H)
    return ops.mean(ops.square(residual))


def sparsity_loss(H) -> Tensor:
    """Mean absolute activation."""
    H = _as_tensor(H)
    return ops.mean(ops.relu(H) + ops.relu(-H))


# ---------------------------------------------------------------------------
# batching helpers


def _stack(arrays: Sequence[np.ndarray], what: str) -> np.ndarray:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise TrainingError(f"all {what} in a run must share one shape, found {sorted(shapes)}")
    return np.stack(arrays)


def _mels(samples: Sequence[Sample]) -> np.ndarray:
    return _stack([s.mel.values for s in samples], "log-mel spectrograms")[:, None]


def _specs(samples: Sequence[Sample]) -> np.ndarray:
    return _stack([s.spec.log_mag for s in samples], "spectrograms")


def _labels(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.label for s in samples]).astype(np.float32)


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def check_dictionary(W: Dictionary, psi: InterpreterPsi, theta: HeadTheta, n_bins: int | None = None) -> None:
    if W.k != psi.config.k:
        raise TrainingError(f"K mismatch: dictionary has K={W.k}, interpreter has K={psi.config.k}")
    if theta.config.k != psi.config.k:
        raise TrainingError(f"K mismatch: head has K={theta.config.k}, interpreter has K={psi.config.k}")
    if n_bins is not None and n_bins != W.n_bins:
        raise TrainingError(f"dictionary has {W.n_bins} frequency rows, spectrograms have {n_bins}")


class _EpochMeter:
    def __init__(self):
        self.sums: dict[str, float] = {}
        self.count = 0

    def add(self, n: int, **terms: Tensor | float) -> None:
        self.count += n
        for key, value in terms.items():
            v = float(value.data) if isinstance(value, Tensor) else float(value)
            self.sums[key] = self.sums.get(key, 0.0) + n * v

    def row(self, epoch: int) -> dict:
        out = {"epoch": epoch}
        for key in ("L_FID", "L_NMF", "L_sparse", "L_f", "total"):
            out[key] = self.sums.get(key, 0.0) / max(self.count, 1)
        return out


def _log_epoch(report: TrainReport, row: dict, log_path: str | os.PathLike | None) -> None:
    report.history.append(row)
    log.info("epoch %d total %.6f", row["epoch"], row["total"])
    if log_path is not None:
        with open(log_path, "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _reported_total(weights: LossWeights, l_fid, l_nmf, l_sp, l_f=None) -> float:
    """Loss total for the report, summed in float64 from the float32 parts."""
    total = weights.alpha * float(l_nmf.data) + weights.beta * float(l_sp.data)
    if l_f is None:
        return total + float(l_fid.data)
    return total + float(l_f.data) + weights.gamma * float(l_fid.data)


def _optimise(loss: Tensor, params: list[Tensor], opt: Adam, clip: float) -> None:
    opt.zero_grad()
    backward(loss, params)
    if clip > 0:
        clip_grad_norm(params, clip)
    opt.step()


# ---------------------------------------------------------------------------
# classifier


def train_classifier(
    classifier: TappedClassifier,
    samples: Sequence[Sample],
    cfg: TrainConfig,
    log_path: str | os.PathLike | None = None,
) -> TrainReport:
    """Supervised training of ``f`` on ground-truth labels."""
    mels, y = _mels(samples), _labels(samples)
    params = classifier.parameters()
    classifier.unfreeze()
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    for epoch in range(1, cfg.epochs + 1):
        meter = _EpochMeter()
        for idx in _batches(len(samples), cfg.batch_size, rng):
            out = classifier.forward(mels[idx])
            loss = classification_loss(out.probs, y[idx], cfg.task_kind)
            _optimise(loss, params, opt, cfg.clip_norm)
            meter.add(len(idx), L_f=loss, total=loss)
        _log_epoch(report, meter.row(epoch), log_path)
    return report


def predict_classifier(classifier: TappedClassifier, mels: np.ndarray, batch_size: int = 16) -> np.ndarray:
    probs = []
    for idx in _batches(len(mels), batch_size, None):
        probs.append(classifier.forward(mels[idx]).probs.data)
    return np.concatenate(probs).astype(np.float64)


# ---------------------------------------------------------------------------
# post-hoc interpreter


@dataclass
class _FrozenFeatures:
    taps: list[np.ndarray]
    probs: np.ndarray


def _classifier_features(classifier: TappedClassifier, mels: np.ndarray, batch_size: int) -> _FrozenFeatures:
    taps: list[list[np.ndarray]] = [[] for _ in classifier.config.taps]
    probs = []
    for idx in _batches(len(mels), batch_size, None):
        out = classifier.forward(mels[idx])
        for i, t in enumerate(out.taps):
            taps[i].append(t.data)
        probs.append(out.probs.data)
    return _FrozenFeatures([np.concatenate(t) for t in taps], np.concatenate(probs))


def train_posthoc(
    classifier: TappedClassifier,
    psi: InterpreterPsi,
    theta: HeadTheta,
    W: Dictionary,
    samples: Sequence[Sample],
    weights: LossWeights = POSTHOC_WEIGHTS,
    cfg: TrainConfig | None = None,
    log_path: str | os.PathLike | None = None,
) -> TrainReport:
    """Fit ``psi`` and ``theta`` to explain the fixed ``classifier``.

    The classifier is run once over the data; its tapped outputs and
    probabilities are then reused every epoch. Epoch 0 in the report holds the
    losses before any update.
    """
    cfg = cfg or TrainConfig()
    X = _specs(samples)
    check_dictionary(W, psi, theta, X.shape[1])
    mels = _mels(samples)
    n_frames = mels.shape[-1]
    classifier.freeze()
    feats = _classifier_features(classifier, mels, cfg.batch_size)
    params = psi.parameters() + theta.parameters()
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    def step_losses(idx):
        H = psi.forward([Tensor(t[idx]) for t in feats.taps], n_frames)
        out = theta.forward(H)
        l_fid = fidelity_loss(out.probs, feats.probs[idx], cfg.task_kind)
        l_nmf = nmf_loss(X[idx], W, H)
        l_sp = sparsity_loss(H)
        total = l_fid + weights.alpha * l_nmf + weights.beta * l_sp
        return total, dict(L_FID=l_fid, L_NMF=l_nmf, L_sparse=l_sp, total=_reported_total(weights, l_fid, l_nmf, l_sp))

    report = TrainReport()
    meter = _EpochMeter()
    for idx in _batches(len(samples), cfg.batch_size, None):
        meter.add(len(idx), **step_losses(idx)[1])
    _log_epoch(report, meter.row(0), log_path)
    for epoch in range(1, cfg.epochs + 1):
        meter = _EpochMeter()
        for idx in _batches(len(samples), cfg.batch_size, rng):
            total, terms = step_losses(idx)
            _optimise(total, params, opt, cfg.clip_norm)
            meter.add(len(idx), **terms)
        _log_epoch(report, meter.row(epoch), log_path)
    return report


# ---------------------------------------------------------------------------
# by-design


def train_bydesign(
    system: InterpreterSystem,
    W: Dictionary,
    samples: Sequence[Sample],
    weights: LossWeights = BYDESIGN_WEIGHTS,
    cfg: TrainConfig | None = None,
    log_path: str | os.PathLike | None = None,
) -> TrainReport:
    """Joint training of ``f``, ``psi`` and ``theta``.

    ``bydesign`` minimises ``L_f + gamma L_FID + alpha L_NMF + beta L_sparse``
    with ``L_f`` the label loss of ``f``. ``bydesign_nopred`` puts the label
    loss on the interpreter output ``g`` instead; its report stores that loss
    under ``L_f``. Parameters that have been frozen by the caller are left out.
    """
    cfg = cfg or TrainConfig(epochs=50, variant="bydesign")
    if cfg.variant == "posthoc":
        raise TrainingError("train_bydesign needs variant bydesign or bydesign_nopred")
    X = _specs(samples)
    check_dictionary(W, system.psi, system.theta, X.shape[1])
    mels, y = _mels(samples), _labels(samples)
    n_frames = mels.shape[-1]
    all_params = system.classifier.parameters() + system.psi.parameters() + system.theta.parameters()
    params = [p for p in all_params if p.requires_grad]
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    for epoch in range(1, cfg.epochs + 1):
        meter = _EpochMeter()
        for idx in _batches(len(samples), cfg.batch_size, rng):
            f_out = system.classifier.forward(mels[idx])
            H = system.psi.forward(f_out.taps, n_frames)
            g_out = system.theta.forward(H)
            predicted = g_out.probs if cfg.variant == "bydesign_nopred" else f_out.probs
            l_f = classification_loss(predicted, y[idx], cfg.task_kind)
            l_fid = fidelity_loss(g_out.probs, f_out.probs.data, cfg.task_kind)
            l_nmf = nmf_loss(X[idx], W, H)
            l_sp = sparsity_loss(H)
            total = l_f + weights.gamma * l_fid + weights.alpha * l_nmf + weights.beta * l_sp
            if params:
                _optimise(total, params, opt, cfg.clip_norm)
            reported = _reported_total(weights, l_fid, l_nmf, l_sp, l_f)
            meter.add(len(idx), L_f=l_f, L_FID=l_fid, L_NMF=l_nmf, L_sparse=l_sp, total=reported)
        _log_epoch(report, meter.row(epoch), log_path)
    return report


# ---------------------------------------------------------------------------
# inference


@dataclass
class SystemOutputs:
    classifier_probs: np.ndarray  # (N, C)
    interp_probs: np.ndarray  # (N, C)
    interp_logits: np.ndarray
    H: np.ndarray  # (N, K, T)
    z: np.ndarray  # (N, K)


def predict_system(system: InterpreterSystem, mels: np.ndarray, batch_size: int = 16) -> SystemOutputs:
    parts: dict[str, list[np.ndarray]] = {k: [] for k in ("cp", "ip", "il", "H", "z")}
    mels = np.asarray(mels)
    if mels.ndim == 3:
        mels = mels[:, None]
    for idx in _batches(len(mels), batch_size, None):
        f_out, H, head = system.forward(mels[idx])
        parts["cp"].append(f_out.probs.data)
        parts["ip"].append(head.probs.data)
        parts["il"].append(head.logits.data)
        parts["H"].append(H.data)
        parts["z"].append(head.z.data)
    cat = {k: np.concatenate(v).astype(np.float64) for k, v in parts.items()}
    return SystemOutputs(cat["cp"], cat["ip"], cat["il"], cat["H"], cat["z"])


def config_dict(cfg: TrainConfig, weights: LossWeights | None = None) -> dict:
    d = asdict(cfg)
    if weights is not None:
        d["weights"] = asdict(weights)
    return d
