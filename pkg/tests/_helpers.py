"""Random trace generators shared by the property and acceptance suites."""

from __future__ import annotations

import numpy as np

from actionledger.trace_format import TraceRecord

COMPONENT_POOL = ("local", "positive", "negative")


def random_trace(
    rng: np.random.Generator,
    max_samples: int = 50,
    max_epochs: int = 50,
    max_components: int = 3,
    drop_rate: float = 0.0,
    scale: float | None = None,
) -> list[TraceRecord]:
    """Shuffled records for random samples x epochs x components.

    Epoch indices are a random (not necessarily contiguous) subset of 0..99.
    A fraction of records can be dropped to exercise partial coverage, and a
    few samples copy another sample's losses so exact ties occur.
    """
    n_samples = int(rng.integers(1, max_samples + 1))
    n_epochs = int(rng.integers(1, max_epochs + 1))
    n_comp = int(rng.integers(1, max_components + 1))
    components = COMPONENT_POOL[:n_comp] if n_comp > 1 else ("loss",)
    epochs = sorted(int(e) for e in rng.choice(100, size=n_epochs, replace=False))
    samples = [f"s{i:03d}" for i in range(n_samples)]
    if scale is None:
        scale = float(10 ** rng.uniform(-3, 3))
    kind = rng.integers(3)
    shape = (n_samples, n_comp, n_epochs)
    if kind == 0:
        losses = rng.uniform(0, scale, size=shape)
    elif kind == 1:
        losses = rng.exponential(scale, size=shape)
    else:
        losses = rng.lognormal(0.0, 2.0, size=shape) * scale
    for i in range(1, n_samples, 7):
        losses[i] = losses[i - 1]
    keep = rng.random(shape) >= drop_rate
    keep[:, :, 0] = True

    records = [
        TraceRecord(epochs[e], samples[s], components[c], float(losses[s, c, e]))
        for s in range(n_samples)
        for c in range(n_comp)
        for e in range(n_epochs)
        if keep[s, c, e]
    ]
    order = rng.permutation(len(records))
    return [records[i] for i in order]


def scaled(records: list[TraceRecord], alpha: float) -> list[TraceRecord]:
    return [TraceRecord(r.epoch, r.sample, r.component, r.loss * alpha) for r in records]
