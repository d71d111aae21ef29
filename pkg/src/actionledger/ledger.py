"""Streaming accumulation of per-sample action scores.

The action of a sample is the sum of its recorded losses over all epochs.
``ActionLedger`` accumulates records in any order (and across shards via
``merge``); ``finalize`` re-sums every (sample, component) in ascending epoch
order so results do not depend on ingestion order or sharding.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import (
    ActionLedgerError,
    CoverageError,
    DuplicateRecordError,
    TraceFormatError,
    UnknownComponentError,
)
from .trace_format import TOTAL, TraceHeader, TraceRecord, iter_trace

POLICY_MODES = ("sum", "mean")
COVERAGE_MODES = ("allow", "require_full_coverage")
MAX_REPORTED_OFFENDERS = 10


def _left_sum(values: Iterable[float]) -> float:
    # Plain sequential addition; builtin sum() is compensated on Python >= 3.12.
    total = 0.0
    for v in values:
        total += v
    return total


def action_score(losses: Iterable[tuple[int, float]]) -> float:
    """Sum ``(epoch, loss)`` pairs in ascending epoch order.

    >>> action_score([(1, 2.0), (0, 1.0), (2, 3.0)])
    6.0
    """
    pairs = list(losses)
    if not pairs:
        raise ActionLedgerError("action_score needs at least one (epoch, loss) pair")
    pairs.sort(key=lambda p: p[0])
    for (e0, _), (e1, _) in zip(pairs, pairs[1:]):
        if e0 == e1:
            raise ActionLedgerError(f"duplicate epoch {e0} in loss sequence")
    return _left_sum(loss for _, loss in pairs)


@dataclass(frozen=True)
class FinalizePolicy:
    mode: str = "sum"
    coverage: str = "allow"

    def __post_init__(self) -> None:
        if self.mode not in POLICY_MODES:
            raise ValueError(f"policy mode must be one of {POLICY_MODES}, got {self.mode!r}")
        if self.coverage not in COVERAGE_MODES:
            raise ValueError(
                f"coverage must be one of {COVERAGE_MODES}, got {self.coverage!r}"
            )


class ActionLedger:
    """Per-(sample, component) running sums plus the per-epoch losses behind them."""

    def __init__(self) -> None:
        self._losses: dict[tuple[str, str], dict[int, float]] = {}
        self._sums: dict[tuple[str, str], float] = {}
        self.epochs_seen: set[int] = set()
        self.components_seen: set[str] = set()

    @classmethod
    def from_records(cls, records: Iterable[TraceRecord]) -> ActionLedger:
        return cls().update(records)

    def add(self, record: TraceRecord) -> ActionLedger:
        key = (record.sample, record.component)
        per_epoch = self._losses.setdefault(key, {})
        if record.epoch in per_epoch:
            raise DuplicateRecordError(record.key)
        per_epoch[record.epoch] = record.loss
        self._sums[key] = self._sums.get(key, 0.0) + record.loss
        self.epochs_seen.add(record.epoch)
        self.components_seen.add(record.component)
        return self

    def update(self, records: Iterable[TraceRecord]) -> ActionLedger:
        for record in records:
            self.add(record)
        return self

    def running_sum(self, sample: str, component: str) -> float:
        return self._sums[(sample, component)]

    def epoch_set(self, sample: str, component: str) -> frozenset[int]:
        return frozenset(self._losses[(sample, component)])

    def keys(self) -> Iterator[tuple[str, str]]:
        return iter(self._losses)

    @property
    def samples(self) -> set[str]:
        return {sample for sample, _ in self._losses}

    def __len__(self) -> int:
        return sum(len(v) for v in self._losses.values())

    def __bool__(self) -> bool:
        return bool(self._losses)

    def merge(self, other: ActionLedger) -> ActionLedger:
        """Disjoint union of two ledgers; neither input is modified."""
        for key, theirs in other._losses.items():
            mine = self._losses.get(key)
            if mine:
                clash = mine.keys() & theirs.keys()
                if clash:
                    sample, component = key
                    raise DuplicateRecordError((min(clash), sample, component))
        out = ActionLedger()
        for src in (self, other):
            for key, per_epoch in src._losses.items():
                out._losses.setdefault(key, {}).update(per_epoch)
                out._sums[key] = out._sums.get(key, 0.0) + src._sums[key]
            out.epochs_seen |= src.epochs_seen
            out.components_seen |= src.components_seen
        return out

    def finalize(
        self, policy: FinalizePolicy | None = None, header: TraceHeader | None = None
    ) -> ActionTable:
        policy = policy or FinalizePolicy()
        if not self._losses:
            raise ActionLedgerError("cannot finalize an empty ledger")
        components = sorted(self.components_seen)

        if policy.coverage == "require_full_coverage":
            n_epochs = len(self.epochs_seen)
            offenders = [
                (sample, component)
                for sample in sorted(self.samples)
                for component in components
                if len(self._losses.get((sample, component), ())) != n_epochs
            ]
            if offenders:
                raise CoverageError(offenders[:MAX_REPORTED_OFFENDERS], len(offenders))

        by_sample: dict[str, dict[str, float]] = {}
        epochs_by_sample: dict[str, set[int]] = {}
        for (sample, component), per_epoch in self._losses.items():
            action = _left_sum(per_epoch[e] for e in sorted(per_epoch))
            if policy.mode == "mean":
                action = action / len(per_epoch)
            by_sample.setdefault(sample, {})[component] = action
            epochs_by_sample.setdefault(sample, set()).update(per_epoch)

        rows = {}
        for sample in sorted(by_sample):
            actions = {c: by_sample[sample][c] for c in sorted(by_sample[sample])}
            rows[sample] = TableRow(
                sample=sample,
                actions=actions,
                total=_left_sum(actions.values()),
                epochs_observed=len(epochs_by_sample[sample]),
            )
        return ActionTable(
            rows=rows,
            components=tuple(components),
            policy=policy,
            run_id=header.run_id if header else None,
            split=header.split if header else None,
        )


def accumulate(ledger: ActionLedger, record: TraceRecord) -> ActionLedger:
    return ledger.add(record)


def merge(a: ActionLedger, b: ActionLedger) -> ActionLedger:
    return a.merge(b)


def finalize(ledger: ActionLedger, policy: FinalizePolicy | None = None) -> ActionTable:
    return ledger.finalize(policy)


def ledger_from_trace(
    lines: Iterable[bytes | str],
) -> tuple[TraceHeader, ActionLedger]:
    header, records = iter_trace(lines)
    return header, ActionLedger.from_records(records)


@dataclass(frozen=True)
class TableRow:
    sample: str
    actions: Mapping[str, float]
    total: float
    epochs_observed: int

    def score(self, component: str) -> float | None:
        if component == TOTAL:
            return self.total
        return self.actions.get(component)


class ActionTable:
    """Finalized action scores: one row per observed sample, sorted by id."""

    def __init__(
        self,
        rows: Mapping[str, TableRow],
        components: tuple[str, ...],
        policy: FinalizePolicy,
        run_id: str | None = None,
        split: str | None = None,
    ) -> None:
        self._rows = {sample: rows[sample] for sample in sorted(rows)}
        self.components = components
        self.policy = policy
        self.run_id = run_id
        self.split = split

    def __len__(self) -> int:
        return len(self._rows)

    def __iter__(self) -> Iterator[TableRow]:
        return iter(self._rows.values())

    def __getitem__(self, sample: str) -> TableRow:
        return self._rows[sample]

    def __contains__(self, sample: object) -> bool:
        return sample in self._rows

    @property
    def samples(self) -> list[str]:
        return list(self._rows)

    def scores(self, component: str = TOTAL) -> dict[str, float]:
        """Sample -> action for ``component`` (or the total)."""
        if component != TOTAL and component not in self.components:
            raise UnknownComponentError(component, [*self.components, TOTAL])
        out = {}
        for sample, row in self._rows.items():
            value = row.score(component)
            if value is not None:
                out[sample] = value
        return out


def encode_table(table: ActionTable) -> bytes:
    dumps = lambda obj: json.dumps(obj, separators=(",", ":"), ensure_ascii=False)  # noqa: E731
    header: dict[str, Any] = {
        "h": 1,
        "policy": table.policy.mode,
        "coverage": table.policy.coverage,
        "components": list(table.components),
    }
    if table.run_id is not None:
        header["run"] = table.run_id
    if table.split is not None:
        header["split"] = table.split
    out = [dumps(header)]
    for row in table:
        out.append(
            dumps(
                {"s": row.sample, "a": dict(row.actions), "t": row.total, "n": row.epochs_observed}
            )
        )
    return ("\n".join(out) + "\n").encode("utf-8")


def write_table(path: str | Path, table: ActionTable) -> None:
    Path(path).write_bytes(encode_table(table))


def parse_table(lines: Iterable[bytes | str]) -> ActionTable:
    it = iter(lines)
    first = next(it, None)
    if first is None:
        raise TraceFormatError("missing table header", 1)
    try:
        head = json.loads(first)
        policy = FinalizePolicy(head["policy"], head["coverage"])
        components = tuple(head["components"])
    except (ValueError, KeyError, TypeError) as exc:
        raise TraceFormatError(f"bad table header: {exc}", 1) from None
    rows = {}
    for lineno, line in enumerate(it, start=2):
        try:
            obj = json.loads(line)
            row = TableRow(
                sample=obj["s"],
                actions={c: float(v) for c, v in obj["a"].items()},
                total=float(obj["t"]),
                epochs_observed=int(obj["n"]),
            )
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise TraceFormatError(f"bad table row: {exc}", lineno) from None
        if row.sample in rows:
            raise TraceFormatError(f"sample {row.sample!r} appears twice", lineno)
        rows[row.sample] = row
    return ActionTable(rows, components, policy, head.get("run"), head.get("split"))


def read_table(path: str | Path) -> ActionTable:
    with open(path, "rb") as fh:
        return parse_table(fh)
