"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, precision


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped_nonsmooth: int
    worst: tuple[int, int] | None  # (parameter index, flat coordinate)


def _rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(numeric) + abs(analytic))


def grad_check_report(
    fn: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[np.ndarray],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    smooth_tol: float = 1e-2,
) -> GradCheckResult:
    """Compare backprop gradients of ``fn`` against central differences.

    ``fn`` receives float64 tensors built from ``params`` and returns a scalar
    tensor. Both the analytic pass and the difference quotients are evaluated
    in float64. A coordinate whose forward and backward one-sided quotients
    disagree by more than ``smooth_tol`` (relative) lies on or next to a kink
    (relu, max) and is counted as skipped rather than compared.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        leaves = [Tensor(np.array(p, dtype=np.float64), requires_grad=True) for p in params]
        loss = fn(leaves)
        backward(loss, leaves)
        analytic = [leaf.grad.copy() for leaf in leaves]

        def evaluate() -> float:
            consts = [Tensor(leaf.data) for leaf in leaves]
            return float(fn(consts).data)

        worst_err, worst_at, checked, skipped = 0.0, None, 0, 0
        for pi, leaf in enumerate(leaves):
            flat = leaf.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for ci in coords:
                orig = flat[ci]
                flat[ci] = orig + h
                up = evaluate()
                flat[ci] = orig - h
                down = evaluate()
                flat[ci] = orig
                numeric = (up - down) / (2.0 * h)
                a = float(analytic[pi].reshape(-1)[ci])
                err = _rel_error(a, numeric)
                if err > 1e-6:
                    centre = evaluate()
                    forward, backward_q = (up - centre) / h, (centre - down) / h
                    if _rel_error(forward, backward_q) > smooth_tol:
                        skipped += 1
                        continue
                checked += 1
                if err > worst_err:
                    worst_err, worst_at = err, (pi, int(ci))
    return GradCheckResult(worst_err, checked, skipped, worst_at)


def grad_check(fn, params, h: float = 1e-5, max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error ``|a - n| / max(1e-8, |a| + |n|)`` over checked coordinates."""
    return grad_check_report(fn, params, h=h, max_coords=max_coords, seed=seed).max_rel_error
