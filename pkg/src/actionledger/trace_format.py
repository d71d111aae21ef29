"""Line-delimited loss traces (``.aclt``) and label maps (``.aclm``).

A trace is a header line followed by one record per (epoch, sample, component)::

    {"h":1,"run":"r0","split":"test","components":["loss"]}
    {"e":0,"s":"img_1","c":"loss","l":2.3025850929940455}

Losses are written with Python's shortest round-trip float repr (never more
than 17 significant digits), so decoding recovers the exact binary64 value.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter, defaultdict
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any

from .errors import DuplicateRecordError, HeaderError, TraceFormatError

FORMAT_VERSION = 1
TOTAL = "total"
DEFAULT_COMPONENT = "loss"

_COMPONENT_RE = re.compile(r"[a-z0-9_]{1,64}")
_MAX_ID_BYTES = 256


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def check_sample_id(sample: Any) -> str | None:
    """Return a problem description, or None if ``sample`` is a valid id."""
    if not isinstance(sample, str) or not sample:
        return "sample id must be a non-empty string"
    if any(ch.isspace() for ch in sample):
        return f"sample id {sample!r} contains whitespace"
    if len(sample.encode("utf-8")) > _MAX_ID_BYTES:
        return f"sample id longer than {_MAX_ID_BYTES} bytes"
    return None


def check_component(name: Any, *, allow_total: bool = False) -> str | None:
    if not isinstance(name, str) or not _COMPONENT_RE.fullmatch(name):
        return f"component {name!r} does not match [a-z0-9_]{{1,64}}"
    if name == TOTAL and not allow_total:
        return "component name 'total' is reserved"
    return None


@dataclass(frozen=True)
class TraceRecord:
    epoch: int
    sample: str
    component: str
    loss: float

    @property
    def key(self) -> tuple[int, str, str]:
        return (self.epoch, self.sample, self.component)


def record_problem(record: TraceRecord) -> str | None:
    epoch = record.epoch
    if isinstance(epoch, bool) or not isinstance(epoch, int):
        return f"epoch must be an integer, got {epoch!r}"
    if epoch < 0:
        return f"negative epoch {epoch}"
    problem = check_sample_id(record.sample) or check_component(record.component)
    if problem:
        return problem
    loss = record.loss
    if isinstance(loss, bool) or not isinstance(loss, (int, float)):
        return f"loss must be a number, got {loss!r}"
    if not math.isfinite(loss):
        return (
            f"non-finite loss {loss!r} for sample {record.sample!r} at epoch {epoch}"
        )
    return None


def encode_record(record: TraceRecord) -> bytes:
    """Encode one record as a wire-format line (without the trailing newline)."""
    problem = record_problem(record)
    if problem:
        raise TraceFormatError(problem)
    return _dumps(
        {"e": record.epoch, "s": record.sample, "c": record.component, "l": float(record.loss)}
    ).encode("utf-8")


def _parse_object(line: bytes | str, lineno: int | None) -> dict[str, Any]:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceFormatError(f"invalid UTF-8: {exc}", lineno) from None
    if line.endswith("\n"):
        line = line[:-1]
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"malformed line: {exc.msg}", lineno) from None
    if not isinstance(obj, dict):
        raise TraceFormatError("malformed line: expected an object", lineno)
    return obj


def decode_record(line: bytes | str, lineno: int | None = None) -> TraceRecord:
    """Parse one record line. Unknown keys are ignored."""
    obj = _parse_object(line, lineno)
    missing = [k for k in ("e", "s", "c", "l") if k not in obj]
    if missing:
        raise TraceFormatError(f"malformed record: missing key(s) {missing}", lineno)
    loss = obj["l"]
    record = TraceRecord(
        obj["e"],
        obj["s"],
        obj["c"],
        float(loss) if isinstance(loss, int) and not isinstance(loss, bool) else loss,
    )
    problem = record_problem(record)
    if problem:
        raise TraceFormatError(problem, lineno)
    return record


@dataclass(frozen=True)
class TraceHeader:
    run_id: str
    split: str
    components: tuple[str, ...]
    labels: str | None = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        if self.format_version != FORMAT_VERSION:
            raise HeaderError(f"unsupported format version {self.format_version!r}")
        if not self.components:
            raise HeaderError("header declares no components")
        if len(set(self.components)) != len(self.components):
            raise HeaderError("header declares duplicate components")
        for name in self.components:
            problem = check_component(name)
            if problem:
                raise HeaderError(problem)
        if not isinstance(self.run_id, str) or not isinstance(self.split, str):
            raise HeaderError("run and split must be strings")


def encode_header(header: TraceHeader) -> bytes:
    obj: dict[str, Any] = {
        "h": header.format_version,
        "run": header.run_id,
        "split": header.split,
        "components": list(header.components),
    }
    if header.labels is not None:
        obj["labels"] = header.labels
    return _dumps(obj).encode("utf-8")


def decode_header(line: bytes | str) -> TraceHeader:
    try:
        obj = _parse_object(line, 1)
    except TraceFormatError as exc:
        raise HeaderError(f"unparseable header: {exc}") from None
    if "h" not in obj:
        raise HeaderError("missing header")
    components = obj.get("components")
    if not isinstance(components, list):
        raise HeaderError("header 'components' must be a list")
    labels = obj.get("labels")
    if labels is not None and not isinstance(labels, str):
        raise HeaderError("header 'labels' must be a string path")
    return TraceHeader(
        run_id=obj.get("run", ""),
        split=obj.get("split", ""),
        components=tuple(components),
        labels=labels,
        format_version=obj["h"],
    )


def iter_trace(lines: Iterable[bytes | str]) -> tuple[TraceHeader, Iterator[TraceRecord]]:
    """Split a line stream into its header and a lazy record iterator.

    The iterator raises on the first malformed line; use ``validate_trace`` to
    collect every problem instead.
    """
    it = iter(lines)
    first = next(it, None)
    if first is None or not first.strip():
        raise HeaderError("missing header")
    header = decode_header(first)

    def records() -> Iterator[TraceRecord]:
        for lineno, line in enumerate(it, start=2):
            record = decode_record(line, lineno)
            if record.component not in header.components:
                raise TraceFormatError(
                    f"component {record.component!r} not declared in header", lineno
                )
            yield record

    return header, records()


def read_trace(path: str | Path) -> tuple[TraceHeader, list[TraceRecord]]:
    with open(path, "rb") as fh:
        header, records = iter_trace(fh)
        return header, list(records)


class TraceWriter:
    """Append-only trace sink, usable as an end-of-epoch training callback.

    Rejects undeclared components and repeated (epoch, sample, component)
    keys at write time so producer bugs surface immediately.
    """

    def __init__(self, target: str | Path | IO[bytes], header: TraceHeader) -> None:
        if isinstance(target, (str, Path)):
            self._fh: IO[bytes] = open(target, "wb")
            self._owned = True
        else:
            self._fh = target
            self._owned = False
        self.header = header
        self._seen: set[tuple[int, str, str]] = set()
        self.records_written = 0
        self._fh.write(encode_header(header) + b"\n")

    def write(self, record: TraceRecord) -> None:
        if record.component not in self.header.components:
            raise TraceFormatError(f"component {record.component!r} not declared in header")
        line = encode_record(record)
        if record.key in self._seen:
            raise DuplicateRecordError(record.key)
        self._seen.add(record.key)
        self._fh.write(line + b"\n")
        self.records_written += 1

    def log(self, epoch: int, sample: str, component: str, loss: float) -> None:
        self.write(TraceRecord(epoch, sample, component, float(loss)))

    def log_epoch(
        self, epoch: int, losses: Mapping[str, float | Mapping[str, float]]
    ) -> None:
        """Write one epoch of per-sample losses in (sample, component) order.

        Values are either a scalar (for single-component traces) or a mapping
        component -> loss.
        """
        for sample in sorted(losses):
            value = losses[sample]
            if isinstance(value, Mapping):
                for component in sorted(value):
                    self.log(epoch, sample, component, value[component])
            else:
                if len(self.header.components) != 1:
                    raise TraceFormatError(
                        "scalar losses need a single-component header; pass a mapping"
                    )
                self.log(epoch, sample, self.header.components[0], value)
        self._fh.flush()

    def close(self) -> None:
        if self._owned:
            self._fh.close()
        else:
            self._fh.flush()

    def __enter__(self) -> TraceWriter:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


@dataclass
class ComponentSummary:
    records: int = 0
    samples: int = 0
    epoch_min: int | None = None
    epoch_max: int | None = None


@dataclass
class ValidationSummary:
    header: TraceHeader
    records: int
    samples: int
    epochs: int
    components: dict[str, ComponentSummary]
    duplicates: list[tuple[tuple[int, str, str], int]]
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    coverage_complete: bool = True

    @property
    def valid(self) -> bool:
        return not self.duplicates and not self.errors

    def to_dict(self) -> dict[str, Any]:
        return {
            "valid": self.valid,
            "run": self.header.run_id,
            "split": self.header.split,
            "records": self.records,
            "samples": self.samples,
            "epochs": self.epochs,
            "components": {
                name: {
                    "records": cs.records,
                    "samples": cs.samples,
                    "epoch_min": cs.epoch_min,
                    "epoch_max": cs.epoch_max,
                }
                for name, cs in self.components.items()
            },
            "duplicates": [
                {"e": e, "s": s, "c": c, "count": n} for (e, s, c), n in self.duplicates
            ],
            "errors": self.errors,
            "warnings": self.warnings,
            "coverage_complete": self.coverage_complete,
        }


def validate_trace(lines: Iterable[bytes | str], max_errors: int = 100) -> ValidationSummary:
    """Scan a whole trace and report counts, epoch ranges and every problem.

    Raises HeaderError if the header is missing or unusable; everything after
    the header is reported rather than raised.
    """
    it = iter(lines)
    first = next(it, None)
    if first is None or not first.strip():
        raise HeaderError("missing header")
    header = decode_header(first)

    key_counts: Counter[tuple[int, str, str]] = Counter()
    per_component_samples: dict[str, set[str]] = defaultdict(set)
    epoch_ranges: dict[str, list[int]] = {}
    samples: set[str] = set()
    epochs: set[int] = set()
    errors: list[str] = []
    n_errors = 0

    for lineno, line in enumerate(it, start=2):
        try:
            record = decode_record(line, lineno)
            if record.component not in header.components:
                raise TraceFormatError(
                    f"component {record.component!r} not declared in header", lineno
                )
        except TraceFormatError as exc:
            n_errors += 1
            if len(errors) < max_errors:
                errors.append(str(exc))
            continue
        key_counts[record.key] += 1
        samples.add(record.sample)
        epochs.add(record.epoch)
        per_component_samples[record.component].add(record.sample)
        rng = epoch_ranges.setdefault(record.component, [record.epoch, record.epoch])
        rng[0] = min(rng[0], record.epoch)
        rng[1] = max(rng[1], record.epoch)

    if n_errors > len(errors):
        errors.append(f"... {n_errors - len(errors)} more malformed line(s)")

    components: dict[str, ComponentSummary] = {}
    for name in header.components:
        cs = ComponentSummary(samples=len(per_component_samples.get(name, ())))
        if name in epoch_ranges:
            cs.epoch_min, cs.epoch_max = epoch_ranges[name]
        components[name] = cs
    for (_, _, component), count in key_counts.items():
        components[component].records += count

    duplicates = sorted((key, n) for key, n in key_counts.items() if n > 1)
    expected = len(samples) * len(header.components) * len(epochs)
    coverage_complete = len(key_counts) == expected and expected > 0
    warnings = [] if coverage_complete else ["epoch coverage incomplete"]

    return ValidationSummary(
        header=header,
        records=sum(key_counts.values()),
        samples=len(samples),
        epochs=len(epochs),
        components=components,
        duplicates=duplicates,
        errors=errors,
        warnings=warnings,
        coverage_complete=coverage_complete,
    )


def format_summary(summary: ValidationSummary) -> str:
    lines = [
        f"trace: {'VALID' if summary.valid else 'INVALID'}"
        f"  run={summary.header.run_id!r} split={summary.header.split!r}",
        f"records: {summary.records}  samples: {summary.samples}  epochs: {summary.epochs}",
    ]
    for name, cs in summary.components.items():
        span = "-" if cs.epoch_min is None else f"{cs.epoch_min}..{cs.epoch_max}"
        lines.append(
            f"  {name:<16} records={cs.records:<8} samples={cs.samples:<6} epochs={span}"
        )
    for (epoch, sample, component), count in summary.duplicates:
        lines.append(
            f"duplicate: epoch={epoch} sample={sample} component={component} (x{count})"
        )
    lines.extend(f"error: {msg}" for msg in summary.errors)
    lines.extend(f"warning: {msg}" for msg in summary.warnings)
    return "\n".join(lines)


@dataclass(frozen=True)
class LabelEntry:
    label: str
    asset: str | None = None


class LabelMap(Mapping[str, LabelEntry]):
    """Sample id -> (label, optional asset path)."""

    def __init__(self, entries: Mapping[str, LabelEntry] | None = None) -> None:
        self._entries: dict[str, LabelEntry] = dict(entries or {})

    @classmethod
    def from_labels(cls, labels: Mapping[str, str]) -> LabelMap:
        return cls({sid: LabelEntry(str(y)) for sid, y in labels.items()})

    def __getitem__(self, sample: str) -> LabelEntry:
        return self._entries[sample]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def label(self, sample: str) -> str | None:
        entry = self._entries.get(sample)
        return entry.label if entry else None

    def asset(self, sample: str) -> str | None:
        entry = self._entries.get(sample)
        return entry.asset if entry else None


def parse_label_map(lines: Iterable[bytes | str]) -> LabelMap:
    entries: dict[str, LabelEntry] = {}
    for lineno, line in enumerate(lines, start=1):
        obj = _parse_object(line, lineno)
        sample, label, asset = obj.get("s"), obj.get("y"), obj.get("asset")
        problem = check_sample_id(sample)
        if problem:
            raise TraceFormatError(problem, lineno)
        if not isinstance(label, str):
            raise TraceFormatError("label 'y' must be a string", lineno)
        if asset is not None and not isinstance(asset, str):
            raise TraceFormatError("'asset' must be a string path", lineno)
        if sample in entries:
            raise TraceFormatError(f"sample {sample!r} labeled twice", lineno)
        entries[sample] = LabelEntry(label, asset)
    return LabelMap(entries)


def read_label_map(path: str | Path) -> LabelMap:
    with open(path, "rb") as fh:
        return parse_label_map(fh)


def encode_label_map(labels: LabelMap) -> bytes:
    out = []
    for sample in sorted(labels):
        entry = labels[sample]
        obj = {"s": sample, "y": entry.label}
        if entry.asset is not None:
            obj["asset"] = entry.asset
        out.append(_dumps(obj) + "\n")
    return "".join(out).encode("utf-8")


def write_label_map(path: str | Path, labels: LabelMap) -> None:
    Path(path).write_bytes(encode_label_map(labels))
