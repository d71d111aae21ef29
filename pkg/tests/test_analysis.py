from __future__ import annotations

import itertools
import random
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from actionledger.analysis import (
    UNLABELED,
    class_stats,
    extreme_enrichment,
    format_score,
    gallery_manifest,
    hypergeom_sf,
    rank,
    render_class_stats,
    render_enrichment,
    render_rank,
)
from actionledger.errors import LabelError, UnknownComponentError
from actionledger.ledger import ActionLedger, ActionTable
from actionledger.trace_format import LabelEntry, LabelMap, TraceRecord


def table_of(actions: dict[str, float], component: str = "loss") -> ActionTable:
    recs = [TraceRecord(0, s, component, a) for s, a in actions.items()]
    return ActionLedger.from_records(recs).finalize()


def labels_of(mapping: dict[str, str]) -> LabelMap:
    return LabelMap.from_labels(mapping)


def enumerated_sf(observed: int, population: int, successes: int, draws: int) -> Fraction:
    """P[X >= observed] by listing every draws-subset (members 0..successes-1 are the class)."""
    hits = total = 0
    for subset in itertools.combinations(range(population), draws):
        total += 1
        if sum(1 for i in subset if i < successes) >= observed:
            hits += 1
    return Fraction(hits, total)


def test_rank_hardest():
    report = rank(table_of({"a": 3.0, "b": 1.0, "c": 2.0}), "total", "hardest", 2)
    assert [(e.rank, e.sample, e.action) for e in report.entries] == [(1, "a", 3.0), (2, "c", 2.0)]


def test_rank_tie_breaks_by_id():
    report = rank(table_of({"b": 1.0, "a": 1.0}), "loss", "easiest", 2)
    assert [(e.rank, e.sample, e.action) for e in report.entries] == [(1, "a", 1.0), (2, "b", 1.0)]
    hard = rank(table_of({"b": 1.0, "a": 1.0, "c": 5.0}), "loss", "hardest", 3)
    assert [e.sample for e in hard.entries] == ["c", "a", "b"]


def test_rank_tie_break_is_codepoint_byte_order():
    ids = ["Z", "a", "é", "ä", "_"]
    report = rank(table_of({s: 1.0 for s in ids}), "loss", "hardest", 10)
    assert [e.sample for e in report.entries] == sorted(ids, key=lambda s: s.encode("utf-8"))


def test_rank_k_exceeds_table():
    report = rank(table_of({"a": 1.0, "b": 2.0}), k=10)
    assert len(report.entries) == 2


def test_rank_unknown_component():
    with pytest.raises(UnknownComponentError, match="available"):
        rank(table_of({"a": 1.0}), "local")


def test_rank_bad_arguments():
    with pytest.raises(ValueError):
        rank(table_of({"a": 1.0}), k=0)
    with pytest.raises(ValueError):
        rank(table_of({"a": 1.0}), direction="middle")


@pytest.mark.parametrize(
    "value, shown",
    [
        (1015.903, "1015.9"),
        (958.582, "958.6"),
        (0.073, "0.1"),
        (0.25, "0.3"),
        (0.05, "0.1"),
        (0.15, "0.2"),
        (2.0, "2.0"),
        (-1.25, "-1.3"),
    ],
)
def test_format_score_half_up(value, shown):
    assert format_score(value) == shown


def test_captions_like_the_figures():
    table = table_of({"img1": 1015.903, "img2": 0.073})
    labels = labels_of({"img1": "dog", "img2": "horse"})
    hard = rank(table, k=7, labels=labels)
    assert [e.caption for e in hard.entries] == ["Dog 1015.9", "Horse 0.1"]
    assert "Dog 1015.9" in render_rank(hard)
    unlabeled = rank(table, k=1)
    assert unlabeled.entries[0].caption == "Img1 1015.9"


def test_seven_entry_hardest_report():
    table = table_of({f"s{i}": float(i) for i in range(20)})
    report = rank(table, k=7)
    assert len(report.entries) == 7
    actions = [e.action for e in report.entries]
    assert actions == sorted(actions, reverse=True)


@given(st.permutations(list(range(12))), st.sampled_from([0.5, 3.0, 1e6]))
def test_rank_permutation_and_scale_invariance(order, alpha):
    rng = random.Random(5)
    actions = {f"s{i:02d}": float(rng.randint(0, 5)) for i in range(12)}
    base = rank(table_of(actions), k=12)
    shuffled = {f"s{i:02d}": actions[f"s{i:02d}"] for i in order}
    assert rank(table_of(shuffled), k=12) == base
    scaled = rank(table_of({s: a * alpha for s, a in actions.items()}), k=12)
    assert [(e.rank, e.sample) for e in scaled.entries] == [(e.rank, e.sample) for e in base.entries]


def test_class_stats_example():
    table = table_of({"a": 2.0, "b": 4.0, "c": 10.0})
    stats = class_stats(table, labels_of({"a": "cat", "b": "cat", "c": "dog"}), "loss")
    assert stats.classes["cat"].count == 2 and stats.classes["cat"].mean == 3.0
    assert stats.classes["dog"].count == 1 and stats.classes["dog"].mean == 10.0
    assert stats.classes["cat"].median == 3.0
    assert (stats.classes["cat"].min, stats.classes["cat"].max) == (2.0, 4.0)
    assert stats.unlabeled is None


def test_class_stats_singleton_and_unlabeled():
    table = table_of({"a": 2.5, "b": 4.0, "c": 1.0})
    stats = class_stats(table, labels_of({"a": "cat"}))
    assert stats.classes["cat"].count == 1 and stats.classes["cat"].mean == 2.5
    assert stats.unlabeled.label == UNLABELED and stats.unlabeled.count == 2
    assert sum(c.count for c in stats.classes.values()) == 1
    assert UNLABELED in render_class_stats(stats)


def test_class_stats_no_overlap():
    with pytest.raises(LabelError):
        class_stats(table_of({"a": 1.0}), labels_of({"z": "cat"}))


def test_class_stats_against_group_by_oracle():
    rng = np.random.default_rng(11)
    actions = {f"s{i:03d}": float(rng.exponential(50.0)) for i in range(100)}
    labels = {s: ("cat" if rng.random() < 0.4 else "dog") for s in actions}
    stats = class_stats(table_of(actions), labels_of(labels), "loss")
    for label in ("cat", "dog"):
        values = [a for s, a in actions.items() if labels[s] == label]
        assert stats.classes[label].count == len(values)
        assert stats.classes[label].mean == pytest.approx(np.mean(values), rel=1e-12, abs=1e-12)
        assert stats.classes[label].median == pytest.approx(np.median(values), rel=1e-12)
        assert stats.classes[label].min == min(values)
        assert stats.classes[label].max == max(values)
    assert sum(c.count for c in stats.classes.values()) == 100


def test_enrichment_n4_example():
    table = table_of({"a": 4.0, "b": 3.0, "c": 2.0, "d": 1.0})
    labels = labels_of({"a": "x", "b": "x", "c": "y", "d": "y"})
    report = extreme_enrichment(table, labels, "loss", "hardest", 2)
    x = report.rows["x"]
    assert (x.k_in_extreme, x.expected, x.ratio) == (2, 1.0, 2.0)
    assert enumerated_sf(2, 4, 2, 2) == Fraction(1, 6)
    assert x.p_value == pytest.approx(1 / 6, abs=1e-12)
    y = report.rows["y"]
    assert (y.k_in_extreme, y.ratio, y.p_value) == (0, 0.0, 1.0)
    assert "x" in render_enrichment(report)


def test_enrichment_proportional_representation():
    actions = {f"s{i}": float(i) for i in range(10)}
    # hardest 4 are s9, s8, s7, s6: two "a" and two "b"
    labels = {f"s{i}": ("a" if i in (0, 1, 2, 9, 8) else "b") for i in range(10)}
    row = extreme_enrichment(table_of(actions), labels_of(labels), "loss", "hardest", 4).rows["a"]
    assert (row.class_count, row.k_in_extreme, row.expected, row.ratio) == (5, 2, 2.0, 1.0)


def test_enrichment_requires_every_sample_labeled():
    with pytest.raises(LabelError, match="'b'"):
        extreme_enrichment(table_of({"a": 1.0, "b": 2.0}), labels_of({"a": "x"}), k=1)


def test_enrichment_k_bounds():
    t = table_of({"a": 1.0, "b": 2.0})
    lm = labels_of({"a": "x", "b": "y"})
    with pytest.raises(ValueError):
        extreme_enrichment(t, lm, k=3)
    with pytest.raises(ValueError):
        extreme_enrichment(t, lm, k=0)


@given(
    st.lists(st.floats(0, 100), min_size=1, max_size=30),
    st.lists(st.sampled_from("abc"), min_size=30, max_size=30),
    st.data(),
)
def test_enrichment_sanity(values, label_seq, data):
    actions = {f"s{i:02d}": v for i, v in enumerate(values)}
    labels = labels_of({s: label_seq[i] for i, s in enumerate(actions)})
    k = data.draw(st.integers(1, len(actions)))
    direction = data.draw(st.sampled_from(["hardest", "easiest"]))
    report = extreme_enrichment(table_of(actions), labels, "total", direction, k)
    assert sum(r.k_in_extreme for r in report.rows.values()) == k
    assert sum(r.expected for r in report.rows.values()) == pytest.approx(k)
    for r in report.rows.values():
        assert 0 < r.p_value <= 1
        if r.k_in_extreme == 0:
            assert r.p_value == 1.0


def test_hypergeom_monotone_in_observed():
    for N, m, k in [(50, 10, 20), (400, 40, 80), (5000, 17, 300)]:
        ps = [hypergeom_sf(x, N, m, k) for x in range(0, min(m, k) + 1)]
        assert all(a >= b for a, b in zip(ps, ps[1:]))
        assert ps[0] == 1.0 and ps[-1] > 0


def test_hypergeom_large_population_matches_exact_rational():
    N, m, k = 2000, 200, 300
    denom = comb(N, k)
    for x in (0, 20, 30, 45, 60, 100):
        exact = Fraction(sum(comb(m, j) * comb(N - m, k - j) for j in range(x, min(m, k) + 1)), denom)
        assert hypergeom_sf(x, N, m, k) == pytest.approx(float(exact), rel=1e-9)


def test_hypergeom_outside_support():
    assert hypergeom_sf(4, 10, 3, 5) == 0.0
    # support starts at 3 when drawing 8 of 10 with 5 successes
    assert hypergeom_sf(3, 10, 5, 8) == 1.0


def test_enrichment_permutation_invariant():
    rng = random.Random(2)
    items = [(f"s{i:02d}", float(rng.randint(0, 9)), rng.choice("xyz")) for i in range(30)]
    labels = labels_of({s: y for s, _, y in items})
    a = extreme_enrichment(table_of({s: v for s, v, _ in items}), labels, k=7)
    rng.shuffle(items)
    b = extreme_enrichment(table_of({s: v for s, v, _ in items}), labels, k=7)
    assert a == b


def test_gallery_two_rows():
    table = table_of({f"s{i:02d}": float(i) for i in range(20)})
    labels = LabelMap({f"s{i:02d}": LabelEntry("cat", f"img/{i}.png" if i % 2 else None) for i in range(20)})
    manifest = gallery_manifest(table, labels, k=7)
    assert len(manifest.entries) == 14 and not manifest.warnings
    hard, easy = manifest.row("hardest"), manifest.row("easiest")
    assert [e.sample for e in hard] == [f"s{i:02d}" for i in range(19, 12, -1)]
    assert [e.sample for e in easy] == [f"s{i:02d}" for i in range(7)]
    assert [e.rank for e in easy] == list(range(1, 8))
    recs = manifest.to_records()
    assert recs[0]["asset"] == "img/19.png" and recs[1]["asset"] == ""
    assert recs[0]["score_display"] == "19.0"


def test_gallery_small_table_warns():
    table = table_of({f"s{i}": float(i) for i in range(10)})
    manifest = gallery_manifest(table, None, k=7)
    assert len(manifest.row("hardest")) == 7
    assert len(manifest.row("easiest")) == 3
    assert manifest.warnings
    assert not {e.sample for e in manifest.row("hardest")} & {e.sample for e in manifest.row("easiest")}
