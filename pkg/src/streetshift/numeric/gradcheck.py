"""Central-difference verification of :meth:`Graph.backward`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def flagged(self) -> list[str]:
        return [k for k, e in self.errors.items() if not e < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.flagged

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def relative_error(analytic, numeric, floor=1e-7):
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def grad_check(graph: Graph, feeds, tolerance=1e-3, loss="loss", step=1e-3, max_entries=None,
               seed=0, floor=1e-7, analytic=None) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    Every parameter of ``graph`` is checked; with ``max_entries`` only a
    seeded random subset of each tensor's entries is perturbed. Parameter
    storage is promoted to the graph dtype for the duration of the check
    and restored afterwards. ``analytic`` may be passed to check a given
    gradient dict instead of the one from ``backward`` (fault injection).
    """
    rng = np.random.default_rng(seed)
    params = graph.parameters()
    saved = {id(p): p.data for p in params}
    for p in params:
        p.data = saved[id(p)].astype(graph.dtype)
    loss_id = graph.outputs[loss] if isinstance(loss, str) else loss
    report = GradCheckReport(tolerance)
    try:
        graph.forward(feeds)
        if analytic is None:
            analytic = graph.backward(loss_id)

        def f():
            graph.forward(feeds)
            return float(graph.value(loss_id))

        for p in params:
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
            num = np.empty(idx.size)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                up = f()
                flat[i] = orig - step
                down = f()
                flat[i] = orig
                num[j] = (up - down) / (2 * step)
            ana = np.asarray(analytic[p.name], dtype=np.float64).reshape(-1)[idx]
            err = relative_error(ana, num, floor)
            report.errors[p.name] = float(err.max()) if err.size else 0.0
    finally:
        for p in params:
            p.data = saved[id(p)]
    return report
