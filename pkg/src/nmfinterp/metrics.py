"""Fidelity, faithfulness and baseline metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Adam, Tensor, backward, ops, parameter
from .data import MULTICLASS, MULTILABEL, FeatureConfig, Sample, featurize
from .interpret import analyse, relevance, removal_signal, select_components
from .models import InterpreterSystem
from .nmf import Dictionary, NmfConfig, infer_activations

BINARIZE_AT = 0.5


class MetricError(ValueError):
    pass


def _matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise MetricError(f"{name} must be (samples, classes), got shape {a.shape}")
    return a


def binarize(probs, threshold: float = BINARIZE_AT) -> np.ndarray:
    return (np.asarray(probs) >= threshold).astype(np.int64)


# ---------------------------------------------------------------------------
# fidelity metrics


def topk_fidelity(classifier_preds, interp_probs, k: int) -> float:
    """Fraction of samples whose classifier top class is among the interpreter's top ``k``.

    Interpreter ties rank the lower class index first.
    """
    f = _matrix(classifier_preds, "classifier_preds")
    g = _matrix(interp_probs, "interp_probs")
    if f.shape != g.shape:
        raise MetricError(f"shapes differ: {f.shape} vs {g.shape}")
    if not 1 <= k <= f.shape[1]:
        raise MetricError(f"k must be in 1..{f.shape[1]}, got {k}")
    target = np.argmax(f, axis=1)
    rows = np.arange(len(g))
    s_t = g[rows, target][:, None]
    cols = np.arange(g.shape[1])[None, :]
    rank = np.sum(g > s_t, axis=1) + np.sum((g == s_t) & (cols < target[:, None]), axis=1)
    return float(np.mean(rank < k))


def auprc(scores, truth) -> float:
    """Step-wise average precision; ``nan`` when ``truth`` has no positives."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(truth).reshape(-1) > 0
    if s.shape != y.shape:
        raise MetricError(f"scores {s.shape} and truth {y.shape} differ")
    n_pos = int(y.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each group of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    precision = tp[ends] / (tp[ends] + fp[ends])
    recall = tp[ends] / n_pos
    return math.fsum(np.diff(np.r_[0.0, recall]) * precision)


def _included(n_classes: int, exclude: Iterable[int]) -> list[int]:
    excluded = set(int(c) for c in exclude)
    return [c for c in range(n_classes) if c not in excluded]


def macro_auprc(scores, truth, exclude: Iterable[int] = ()) -> float:
    """Mean per-class AP over included classes that have a positive."""
    s, y = _matrix(scores, "scores"), _matrix(truth, "truth")
    aps = [auprc(s[:, c], y[:, c]) for c in _included(s.shape[1], exclude) if np.any(y[:, c] > 0)]
    return float(np.mean(aps)) if aps else float("nan")


def micro_auprc(scores, truth, exclude: Iterable[int] = ()) -> float:
    s, y = _matrix(scores, "scores"), _matrix(truth, "truth")
    cols = _included(s.shape[1], exclude)
    return auprc(s[:, cols], y[:, cols])


@dataclass
class F1Report:
    per_class: list[float]
    mean: float


def _f1(pred: np.ndarray, truth: np.ndarray) -> float:
    tp = int(np.sum(pred & truth))
    denom = 2 * tp + int(np.sum(pred & ~truth)) + int(np.sum(~pred & truth))
    return 2 * tp / denom if denom else 0.0


def weighted_f1(scores, truth, threshold: float = BINARIZE_AT, exclude: Iterable[int] = ()) -> F1Report:
    """Per class, support-weighted mean of the F1 on positives and the F1 on negatives."""
    s, y = _matrix(scores, "scores"), _matrix(truth, "truth") > 0
    pred = s >= threshold
    per_class = []
    for c in _included(s.shape[1], exclude):
        n_pos = int(y[:, c].sum())
        n_neg = len(y) - n_pos
        f_pos = _f1(pred[:, c], y[:, c])
        f_neg = _f1(~pred[:, c], ~y[:, c])
        per_class.append((n_pos * f_pos + n_neg * f_neg) / len(y))
    return F1Report(per_class, float(np.mean(per_class)) if per_class else float("nan"))


def accuracy(probs, labels) -> float:
    return float(np.mean(np.argmax(_matrix(probs, "probs"), 1) == np.argmax(_matrix(labels, "labels"), 1)))


def fidelity_report(classifier_probs, interp_probs, task_kind: str, exclude: Iterable[int] = ()) -> dict:
    f, g = _matrix(classifier_probs, "classifier_probs"), _matrix(interp_probs, "interp_probs")
    if task_kind == MULTICLASS:
        return {f"top{k}_fidelity": topk_fidelity(f, g, k) for k in range(1, min(3, f.shape[1]) + 1)}
    truth = binarize(f)
    exclude = list(exclude)
    f1 = weighted_f1(g, truth, exclude=exclude)
    return {
        "macro_auprc_fidelity": macro_auprc(g, truth, exclude),
        "micro_auprc_fidelity": micro_auprc(g, truth, exclude),
        "weighted_f1_fidelity": f1.mean,
        "weighted_f1_fidelity_per_class": f1.per_class,
    }


# ---------------------------------------------------------------------------
# faithfulness


@dataclass
class FaithfulnessRecord:
    sample_id: str
    class_index: int
    ff: float
    n_removed: int


@dataclass
class FaithfulnessResult:
    records: list[FaithfulnessRecord]
    ff_median: float

    def to_dict(self) -> dict:
        return {"ff_median": self.ff_median, "records": [asdict(r) for r in self.records]}


@dataclass
class _Case:
    sample_id: str
    spec: object
    H: np.ndarray
    probs: np.ndarray
    class_index: int
    selected: list[int]


def _explained_classes(probs: np.ndarray, multilabel: bool) -> list[int]:
    if multilabel:
        return [int(c) for c in np.flatnonzero(probs > BINARIZE_AT)]
    return [int(np.argmax(probs))]


def _cases(system: InterpreterSystem, W: Dictionary, samples: Sequence[Sample], tau: float, features: FeatureConfig):
    multilabel = system.classifier.config.multilabel
    cases = []
    for s in samples:
        a = analyse(system, W, s.waveform, features)
        for c in _explained_classes(a.classifier_probs, multilabel):
            r = relevance(a.z, system.theta.class_weights[c], c, s.sample_id)
            cases.append(_Case(s.sample_id, a.spec, a.H, a.classifier_probs, c, select_components(r, tau)))
    return cases


def _drops(system: InterpreterSystem, W: Dictionary, cases: list[_Case], removals: list[list[int]], features):
    records = []
    for case, removed in zip(cases, removals):
        if not removed:
            # nothing removed, so the input is unchanged
            records.append(FaithfulnessRecord(case.sample_id, case.class_index, 0.0, 0))
            continue
        x2 = removal_signal(case.spec, W, case.H, removed)
        _, mel2 = featurize(x2, features)
        p2 = system.classifier.forward(mel2.values[None, None]).probs.data[0].astype(np.float64)
        ff = float(case.probs[case.class_index] - p2[case.class_index])
        records.append(FaithfulnessRecord(case.sample_id, case.class_index, ff, len(removed)))
    return records


def _median(records: list[FaithfulnessRecord]) -> float:
    return float(np.median([r.ff for r in records])) if records else float("nan")


def faithfulness(
    system: InterpreterSystem,
    W: Dictionary,
    samples: Sequence[Sample],
    tau: float,
    features: FeatureConfig | None = None,
) -> FaithfulnessResult:
    """Drop in the classifier's probability for its predicted class once the relevant components are removed."""
    features = features or FeatureConfig(mel_bands=system.classifier.config.mel_bands)
    cases = _cases(system, W, samples, tau, features)
    records = _drops(system, W, cases, [c.selected for c in cases], features)
    return FaithfulnessResult(records, _median(records))


def random_baseline_faithfulness(
    system: InterpreterSystem,
    W: Dictionary,
    samples: Sequence[Sample],
    tau: float,
    seed: int = 0,
    features: FeatureConfig | None = None,
) -> FaithfulnessResult:
    """Same drop, removing as many randomly drawn non-selected components as are selected on average."""
    features = features or FeatureConfig(mel_bands=system.classifier.config.mel_bands)
    cases = _cases(system, W, samples, tau, features)
    n = max(0, int(round(np.mean([len(c.selected) for c in cases])))) if cases else 0
    rng = np.random.default_rng(seed)
    removals = []
    for c in cases:
        complement = [k for k in range(W.k) if k not in c.selected]
        if len(complement) <= n:
            removals.append(complement)
        else:
            removals.append(sorted(int(k) for k in rng.choice(complement, size=n, replace=False)))
    records = _drops(system, W, cases, removals, features)
    return FaithfulnessResult(records, _median(records))


# ---------------------------------------------------------------------------
# unsupervised NMF baseline


@dataclass
class LogisticModel:
    weight: np.ndarray  # (C, D)
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    multilabel: bool

    def predict(self, features) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        logits = x @ self.weight.T + self.bias
        if self.multilabel:
            return 1.0 / (1.0 + np.exp(-logits))
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)


def fit_logistic(
    features, targets, multilabel: bool = False, steps: int = 500, lr: float = 0.05, seed: int = 0
) -> LogisticModel:
    """Full-batch logistic regression (softmax or per-class sigmoid) on standardized features."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    xs = Tensor((x - mean) / scale)
    rng = np.random.default_rng(seed)
    w = parameter(rng.standard_normal((y.shape[1], x.shape[1])) * 0.01, name="w")
    b = parameter(np.zeros(y.shape[1]), name="b")
    opt = Adam([w, b], lr=lr)
    target = Tensor(y)
    for _ in range(steps):
        logits = ops.linear(xs, w, b)
        if multilabel:
            p = ops.clamp(ops.sigmoid(logits), 1e-12, 1 - 1e-7)
            per = target * ops.log(p) + (1.0 - target) * ops.log(1.0 - p)
        else:
            per = target * ops.log(ops.clamp(ops.softmax(logits, axis=-1), 1e-12, None))
        loss = -ops.sum(per) / len(x)
        opt.zero_grad()
        backward(loss, [w, b])
        opt.step()
    return LogisticModel(w.data.astype(np.float64), b.data.astype(np.float64), mean, scale, multilabel)


def nmf_features(samples: Sequence[Sample], W: Dictionary, cfg: NmfConfig) -> np.ndarray:
    """Time-averaged activations of each clip's log-magnitude spectrogram."""
    return np.stack([infer_activations(s.spec.log_mag, W, cfg).mean(axis=1) for s in samples])


def nmf_baseline_classify(
    train: Sequence[Sample],
    test: Sequence[Sample],
    W: Dictionary,
    cfg: NmfConfig,
    task_kind: str = MULTICLASS,
    seed: int = 0,
    steps: int = 500,
) -> dict:
    x_tr, x_te = nmf_features(train, W, cfg), nmf_features(test, W, cfg)
    y_tr = np.stack([s.label for s in train])
    y_te = np.stack([s.label for s in test])
    model = fit_logistic(x_tr, y_tr, task_kind == MULTILABEL, steps=steps, seed=seed)
    return task_report(model.predict(x_te), y_te, task_kind)


def task_report(probs, labels, task_kind: str, exclude: Iterable[int] = ()) -> dict:
    """Classification quality against dataset labels."""
    if task_kind == MULTICLASS:
        return {"accuracy": accuracy(probs, labels)}
    exclude = list(exclude)
    return {
        "macro_auprc": macro_auprc(probs, labels, exclude),
        "micro_auprc": micro_auprc(probs, labels, exclude),
        "weighted_f1": weighted_f1(probs, labels, exclude=exclude).mean,
    }
