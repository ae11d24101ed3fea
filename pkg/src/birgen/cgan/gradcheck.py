"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad

# coordinates where both gradients are this small carry no signal
DEAD_COORD = 1e-12


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_excluded: int
    n_kinks: int = 0
    worst: tuple | None = None  # (param index, flat index, analytic, numeric)

    def ok(self, tolerance: float) -> bool:
        return self.n_checked > 0 and self.max_rel_error < tolerance


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(params, loss_fn, n_coords=100, h=1e-4, seed=0) -> GradCheckReport:
    """Compare ``backward`` gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the graph from ``params`` on every call and
    return a scalar tensor. Coordinates are drawn uniformly over all
    parameter entries until ``n_coords`` usable ones are compared (or the
    parameters run out). The relative error is ``|a - n| / max(|a|, |n|)``.

    A coordinate is skipped when both gradients are below ``DEAD_COORD`` or
    when the ``+-h`` probes switch some ReLU / clip to another linear piece
    (the loss is not differentiable across that stencil).
    """
    params = list(params)
    for p in params:
        p.grad = None
    with ad.record_kinks() as base_pattern:
        loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    sizes = np.array([p.data.size for p in params])
    bounds = np.cumsum(sizes)
    order = np.random.default_rng(seed).permutation(int(sizes.sum()))
    worst, max_err, checked, excluded, kinks = None, 0.0, 0, 0, 0
    for g in order:
        if checked >= n_coords:
            break
        k = int(np.searchsorted(bounds, g, side="right"))
        i = int(g - (bounds[k - 1] if k else 0))
        p = params[k]
        old = p.data.flat[i]
        p.data.flat[i] = old + h
        with ad.record_kinks() as pat_up:
            up = float(loss_fn().data)
        p.data.flat[i] = old - h
        with ad.record_kinks() as pat_down:
            down = float(loss_fn().data)
        p.data.flat[i] = old
        if not (_same_pattern(base_pattern, pat_up) and _same_pattern(base_pattern, pat_down)):
            kinks += 1
            continue
        num = (up - down) / (2 * h)
        a = float(analytic[k].flat[i])
        if abs(a) + abs(num) < DEAD_COORD:
            excluded += 1
            continue
        err = abs(a - num) / max(abs(a), abs(num))
        checked += 1
        if worst is None or err > max_err:
            max_err, worst = err, (k, i, a, num)
    for p in params:
        p.grad = None
    return GradCheckReport(max_err, checked, excluded, kinks, worst)
