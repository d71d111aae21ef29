"""Rankings, per-class statistics and extreme-set enrichment for action tables."""

from __future__ import annotations

import math
import statistics
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Any

from .errors import LabelError
from .ledger import ActionTable
from .trace_format import TOTAL, LabelMap

DIRECTIONS = ("hardest", "easiest")
DEFAULT_K = 7
UNLABELED = "∅"


def format_score(value: float) -> str:
    """One decimal place, half-up on the shortest repr (1015.903 -> '1015.9')."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def caption(label: str | None, sample: str, value: float) -> str:
    name = label if label else sample
    return f"{name[:1].upper()}{name[1:]} {format_score(value)}"


def _check_direction(direction: str) -> None:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def _ordered(scores: dict[str, float], direction: str) -> list[tuple[str, float]]:
    if direction == "hardest":
        key = lambda item: (-item[1], item[0])  # noqa: E731
    else:
        key = lambda item: (item[1], item[0])  # noqa: E731
    # str order on ids equals UTF-8 byte order
    return sorted(scores.items(), key=key)


@dataclass(frozen=True)
class RankEntry:
    rank: int
    sample: str
    action: float
    label: str | None = None

    @property
    def caption(self) -> str:
        return caption(self.label, self.sample, self.action)


@dataclass(frozen=True)
class RankReport:
    component: str
    direction: str
    entries: tuple[RankEntry, ...]

    def to_records(self) -> list[dict[str, Any]]:
        return [
            {
                "component": self.component,
                "direction": self.direction,
                "rank": e.rank,
                "s": e.sample,
                "a": e.action,
                "label": e.label,
                "caption": e.caption,
            }
            for e in self.entries
        ]


def rank(
    table: ActionTable,
    component: str = TOTAL,
    direction: str = "hardest",
    k: int = DEFAULT_K,
    labels: LabelMap | None = None,
) -> RankReport:
    """Top-k (``hardest``) or bottom-k (``easiest``) samples by action.

    Ties are broken by ascending sample id; ``k`` beyond the table size
    returns every row.
    """
    _check_direction(direction)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = table.scores(component)
    entries = tuple(
        RankEntry(i, sample, action, labels.label(sample) if labels else None)
        for i, (sample, action) in enumerate(_ordered(scores, direction)[:k], start=1)
    )
    return RankReport(component, direction, entries)


@dataclass(frozen=True)
class ClassSummary:
    label: str
    count: int
    mean: float
    median: float
    min: float
    max: float


def _summarize(label: str, values: list[float]) -> ClassSummary:
    return ClassSummary(
        label=label,
        count=len(values),
        mean=math.fsum(values) / len(values),
        median=statistics.median(values),
        min=min(values),
        max=max(values),
    )


@dataclass(frozen=True)
class ClassStats:
    component: str
    classes: dict[str, ClassSummary]
    unlabeled: ClassSummary | None = None

    def to_records(self) -> list[dict[str, Any]]:
        rows = list(self.classes.values())
        if self.unlabeled:
            rows.append(self.unlabeled)
        return [{"component": self.component, **asdict(r)} for r in rows]


def class_stats(table: ActionTable, labels: LabelMap, component: str = TOTAL) -> ClassStats:
    scores = table.scores(component)
    groups: dict[str, list[float]] = defaultdict(list)
    unlabeled: list[float] = []
    for sample, value in scores.items():
        label = labels.label(sample)
        if label is None:
            unlabeled.append(value)
        else:
            groups[label].append(value)
    if not groups:
        raise LabelError("no sample in the table has a label")
    return ClassStats(
        component=component,
        classes={label: _summarize(label, groups[label]) for label in sorted(groups)},
        unlabeled=_summarize(UNLABELED, unlabeled) if unlabeled else None,
    )


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def hypergeom_sf(observed: int, population: int, successes: int, draws: int) -> float:
    """P[X >= observed] for X ~ Hypergeometric(population, successes, draws).

    Terms are formed in log space and shifted by their maximum before
    exponentiating. The tail is normalised by the sum over the whole support,
    so it is monotone in ``observed`` and never exceeds 1.
    """
    if not 0 <= successes <= population or not 0 <= draws <= population:
        raise ValueError("need 0 <= successes, draws <= population")
    lo = max(0, draws - (population - successes))
    hi = min(draws, successes)
    if observed <= lo:
        return 1.0
    if observed > hi:
        return 0.0
    logs = [
        _log_comb(successes, x) + _log_comb(population - successes, draws - x)
        for x in range(lo, hi + 1)
    ]
    ref = max(logs)
    tail = 0.0
    for x in range(hi, observed - 1, -1):
        tail += math.exp(logs[x - lo] - ref)
    head = 0.0
    for x in range(observed - 1, lo - 1, -1):
        head += math.exp(logs[x - lo] - ref)
    return min(1.0, tail / (tail + head))


@dataclass(frozen=True)
class EnrichmentRow:
    label: str
    class_count: int
    k_in_extreme: int
    expected: float
    ratio: float
    p_value: float


@dataclass(frozen=True)
class EnrichmentReport:
    component: str
    direction: str
    k: int
    population: int
    rows: dict[str, EnrichmentRow] = field(default_factory=dict)

    def to_records(self) -> list[dict[str, Any]]:
        return [
            {
                "component": self.component,
                "direction": self.direction,
                "k": self.k,
                "N": self.population,
                **asdict(row),
            }
            for row in self.rows.values()
        ]


def extreme_enrichment(
    table: ActionTable,
    labels: LabelMap,
    component: str = TOTAL,
    direction: str = "hardest",
    k: int = DEFAULT_K,
) -> EnrichmentReport:
    """Over-representation of each label among the k most extreme samples.

    Under the null the extreme set is a uniform k-subset of the population, so
    each label's count in it is hypergeometric.
    """
    _check_direction(direction)
    scores = table.scores(component)
    population = len(scores)
    if not 1 <= k <= population:
        raise ValueError(f"k must be in [1, {population}], got {k}")
    for sample in sorted(scores):
        if labels.label(sample) is None:
            raise LabelError(f"sample {sample!r} has no label")
    class_counts = Counter(labels.label(s) for s in scores)
    extreme = Counter(labels.label(s) for s, _ in _ordered(scores, direction)[:k])
    rows = {}
    for label in sorted(class_counts):
        m = class_counts[label]
        k_obs = extreme.get(label, 0)
        expected = k * m / population
        rows[label] = EnrichmentRow(
            label=label,
            class_count=m,
            k_in_extreme=k_obs,
            expected=expected,
            ratio=k_obs / expected,
            p_value=hypergeom_sf(k_obs, population, m, k),
        )
    return EnrichmentReport(component, direction, k, population, rows)


@dataclass(frozen=True)
class GalleryEntry:
    row: str
    rank: int
    sample: str
    label: str
    score_display: str
    action: float
    asset_path: str | None = None


@dataclass
class GalleryManifest:
    component: str
    entries: list[GalleryEntry]
    warnings: list[str] = field(default_factory=list)

    def row(self, name: str) -> list[GalleryEntry]:
        return [e for e in self.entries if e.row == name]

    def to_records(self) -> list[dict[str, Any]]:
        return [
            {
                "row": e.row,
                "rank": e.rank,
                "s": e.sample,
                "label": e.label,
                "score_display": e.score_display,
                "a": e.action,
                "asset": e.asset_path or "",
            }
            for e in self.entries
        ]


def gallery_manifest(
    table: ActionTable,
    labels: LabelMap | None = None,
    component: str = TOTAL,
    k: int = DEFAULT_K,
) -> GalleryManifest:
    """Hardest row of k, then an easiest row of up to k samples not already shown."""
    hardest = rank(table, component, "hardest", k, labels)
    shown = {e.sample for e in hardest.entries}
    easiest_all = rank(table, component, "easiest", len(table), labels)
    easiest = [e for e in easiest_all.entries if e.sample not in shown][:k]

    entries = []
    for row, items in (("hardest", hardest.entries), ("easiest", easiest)):
        for i, e in enumerate(items, start=1):
            entries.append(
                GalleryEntry(
                    row=row,
                    rank=i,
                    sample=e.sample,
                    label=e.label or "",
                    score_display=format_score(e.action),
                    action=e.action,
                    asset_path=labels.asset(e.sample) if labels else None,
                )
            )
    warnings = []
    n = len(easiest_all.entries)
    if n < 2 * k:
        warnings.append(
            f"only {n} samples for two rows of {k}: hardest row has "
            f"{len(hardest.entries)}, easiest row has {len(easiest)}"
        )
    return GalleryManifest(component, entries, warnings)


def _style(text: str, color: bool) -> str:
    return f"\033[1m{text}\033[0m" if color else text


def render_rank(report: RankReport, color: bool = False) -> str:
    title = f"{report.direction} by {report.component} ({len(report.entries)})"
    lines = [_style(title, color)]
    lines.append(f"{'rank':>4}  {'sample':<24} {'action':>18}  caption")
    for e in report.entries:
        lines.append(f"{e.rank:>4}  {e.sample:<24} {e.action:>18.6f}  {e.caption}")
    return "\n".join(lines)


def render_class_stats(stats: ClassStats, color: bool = False) -> str:
    lines = [_style(f"class statistics for {stats.component}", color)]
    lines.append(
        f"{'label':<16} {'count':>6} {'mean':>14} {'median':>14} {'min':>14} {'max':>14}"
    )
    rows = list(stats.classes.values())
    if stats.unlabeled:
        rows.append(stats.unlabeled)
    for r in rows:
        lines.append(
            f"{r.label:<16} {r.count:>6} {r.mean:>14.4f} {r.median:>14.4f}"
            f" {r.min:>14.4f} {r.max:>14.4f}"
        )
    return "\n".join(lines)


def render_enrichment(report: EnrichmentReport, color: bool = False) -> str:
    title = (
        f"enrichment among {report.k} {report.direction} by {report.component}"
        f" (N={report.population})"
    )
    lines = [_style(title, color)]
    lines.append(
        f"{'label':<16} {'m':>6} {'k_obs':>6} {'expected':>10} {'ratio':>8} {'p_value':>12}"
    )
    for r in sorted(report.rows.values(), key=lambda r: (r.p_value, r.label)):
        lines.append(
            f"{r.label:<16} {r.class_count:>6} {r.k_in_extreme:>6} {r.expected:>10.3f}"
            f" {r.ratio:>8.3f} {r.p_value:>12.4e}"
        )
    return "\n".join(lines)


def render_gallery(manifest: GalleryManifest) -> str:
    lines = []
    for row in ("hardest", "easiest"):
        items = manifest.row(row)
        lines.append(f"{row}: " + " | ".join(caption(e.label, e.sample, e.action) for e in items))
    return "\n".join(lines)
