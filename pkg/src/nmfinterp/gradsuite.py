"""Finite-difference checks for every autodiff primitive and for the interpreter stacked on the classifier."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import GradCheckResult, Tensor, grad_check_report, ops
from .models import ClassifierConfig, InterpreterConfig, InterpreterPsi, TappedClassifier

TOLERANCE = 1e-3


def _weighted(out: Tensor, rng_seed: int) -> Tensor:
    """Random projection to a scalar so every output entry matters."""
    w = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return ops.sum(out * Tensor(w))


def _cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    def r(*shape):
        return rng.standard_normal(shape)

    def pos(*shape):
        return rng.uniform(0.5, 2.0, shape)

    s = int(rng.integers(1 << 30))
    return {
        "add": (lambda p: _weighted(ops.add(p[0], p[1]), s), [r(3, 4), r(4)]),
        "sub": (lambda p: _weighted(ops.sub(p[0], p[1]), s), [r(3, 4), r(3, 1)]),
        "neg": (lambda p: _weighted(ops.neg(p[0]), s), [r(5)]),
        "mul": (lambda p: _weighted(ops.mul(p[0], p[1]), s), [r(2, 3), r(2, 3)]),
        "div": (lambda p: _weighted(ops.div(p[0], p[1]), s), [r(2, 3), pos(2, 3)]),
        "square": (lambda p: _weighted(ops.square(p[0]), s), [r(6)]),
        "relu": (lambda p: _weighted(ops.relu(p[0]), s), [r(4, 5)]),
        "tanh": (lambda p: _weighted(ops.tanh(p[0]), s), [r(4, 5)]),
        "sigmoid": (lambda p: _weighted(ops.sigmoid(p[0]), s), [3 * r(4, 5)]),
        "softmax": (lambda p: _weighted(ops.softmax(p[0], axis=-1), s), [r(3, 5)]),
        "log": (lambda p: _weighted(ops.log(p[0]), s), [pos(3, 4)]),
        "exp": (lambda p: _weighted(ops.exp(p[0]), s), [r(3, 4)]),
        "clamp": (lambda p: _weighted(ops.clamp(p[0], -0.5, 0.5), s), [r(4, 4)]),
        "sum": (lambda p: _weighted(ops.sum(p[0], axis=1), s), [r(3, 4)]),
        "mean": (lambda p: _weighted(ops.mean(p[0], axis=0, keepdims=True), s), [r(3, 4)]),
        "mean_pool": (lambda p: _weighted(ops.mean_pool(p[0]), s), [r(2, 3, 4, 5)]),
        "l1_norm": (lambda p: ops.l1_norm(p[0]), [r(3, 4)]),
        "reshape": (lambda p: _weighted(ops.reshape(p[0], (4, 3)), s), [r(3, 4)]),
        "transpose": (lambda p: _weighted(ops.transpose(p[0], (0, 2, 1)), s), [r(2, 3, 4)]),
        "index": (lambda p: _weighted(ops.index(p[0], (slice(None), [0, 2, 2])), s), [r(3, 4)]),
        "concat": (lambda p: _weighted(ops.concat([p[0], p[1]], axis=1), s), [r(2, 3), r(2, 2)]),
        "matmul": (lambda p: _weighted(ops.matmul(p[0], p[1]), s), [r(2, 3, 4), r(4, 5)]),
        "linear": (lambda p: _weighted(ops.linear(p[0], p[1], p[2]), s), [r(3, 4), r(2, 4), r(2)]),
        "conv2d_same": (lambda p: _weighted(ops.conv2d(p[0], p[1], p[2]), s), [r(2, 2, 5, 6), r(3, 2, 3, 3), r(3)]),
        "conv2d_valid_stride": (
            lambda p: _weighted(ops.conv2d(p[0], p[1], stride=(2, 1), padding="valid"), s),
            [r(1, 2, 7, 5), r(2, 2, 3, 1)],
        ),
        "conv2d_strided_same": (
            lambda p: _weighted(ops.conv2d(p[0], p[1], stride=(2, 1)), s),
            [r(1, 3, 6, 4), r(2, 3, 3, 1)],
        ),
        "max_pool2d": (lambda p: _weighted(ops.max_pool2d(p[0], 2), s), [r(1, 2, 5, 6)]),
        "avg_pool2d": (lambda p: _weighted(ops.avg_pool2d(p[0], 2), s), [r(1, 2, 5, 6)]),
        "max_over": (lambda p: _weighted(ops.max_over(p[0], axis=-1), s), [r(2, 3, 6)]),
        "interpolate_time": (lambda p: _weighted(ops.interpolate_time(p[0], 11), s), [r(1, 2, 1, 4)]),
    }


def _composed_case(rng: np.random.Generator):
    """The interpreter on top of the classifier's taps, checked in all of its parameters."""
    seed = int(rng.integers(1 << 30))
    clf = TappedClassifier(ClassifierConfig(16, 3, channels=(2, 3, 3)), seed=seed)
    psi = InterpreterPsi(InterpreterConfig.for_classifier(clf.config, 3, adapter_channels=2, fusion_channels=3), seed + 1)
    for name, t in clf.params.items():
        if name.endswith(".b"):
            # zero biases put dead-neighbourhood outputs exactly on the relu kink
            t.data = rng.uniform(-0.1, 0.1, t.shape)
    mel = rng.standard_normal((1, 1, 16, 12))
    names = [("clf", n) for n in clf.params] + [("psi", n) for n in psi.params]
    values = [mel] + [(clf if m == "clf" else psi).params[n].data.astype(np.float64) for m, n in names]

    def fn(p):
        for (m, n), t in zip(names, p[1:]):
            (clf if m == "clf" else psi).params[n] = t
        out = clf.forward(p[0])
        return _weighted(psi.forward(out.taps, 12), seed)

    return fn, values


def run_suite(seed: int = 0, max_coords: int = 12, h: float = 1e-5) -> dict[str, GradCheckResult]:
    rng = np.random.default_rng(seed)
    results = {}
    for name, (fn, params) in _cases(rng).items():
        results[name] = grad_check_report(fn, params, h=h, max_coords=max_coords, seed=seed)
    fn, params = _composed_case(rng)
    results["psi_on_classifier"] = grad_check_report(fn, params, h=h, max_coords=max_coords, seed=seed)
    return results


def summarize(results: dict[str, GradCheckResult]) -> tuple[float, bool]:
    worst = max(r.max_rel_error for r in results.values())
    return worst, worst < TOLERANCE and all(r.checked > 0 for r in results.values())
