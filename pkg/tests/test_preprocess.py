import itertools

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_rows, rows_to_jsonl
from rmf.catalog import CATALOG_CODES
from rmf.ingest import parse_dataset
from rmf.preprocess import (
    PreprocessConfig,
    balance_all_tags,
    balance_sample,
    detect_pattern,
    filter_by_credibility,
    remove_patterned_taggers,
    split_dataset,
)


def dataset_with_credibilities(creds):
    rows = make_rows(len(creds))
    for row, c in zip(rows, creds):
        row["credibility"] = c
    return parse_dataset(rows_to_jsonl(rows), "jsonl")


def test_filter_boundary_is_inclusive():
    d = dataset_with_credibilities([0.2, 0.3, 0.9])
    out = filter_by_credibility(d, 0.3)
    assert sorted(a.credibility for a in out.assignments) == [0.3, 0.9]


def test_filter_threshold_zero_is_identity():
    d = dataset_with_credibilities([0.0, 0.5, 1.0])
    assert len(filter_by_credibility(d, 0.0)) == 3


def test_filter_threshold_one_keeps_only_full_credibility():
    d = dataset_with_credibilities([0.99, 1.0, 0.5])
    out = filter_by_credibility(d, 1.0)
    assert [a.credibility for a in out.assignments] == [1.0]


def test_filter_drops_records_without_surviving_assignments():
    d = dataset_with_credibilities([0.1, 0.9])
    out = filter_by_credibility(d, 0.5)
    assert set(out.records) == {a.record_id for a in out.assignments}


@given(
    creds=st.lists(st.floats(min_value=0, max_value=1, allow_nan=False), min_size=0, max_size=15),
    lo=st.floats(min_value=0, max_value=1, allow_nan=False),
    hi=st.floats(min_value=0, max_value=1, allow_nan=False),
)
@settings(max_examples=50, deadline=None)
def test_filter_monotone_in_threshold(creds, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    d = dataset_with_credibilities([round(c, 6) for c in creds])
    keep_lo = {id(a) for a in filter_by_credibility(d, lo).assignments}
    keep_hi = {id(a) for a in filter_by_credibility(d, hi).assignments}
    assert keep_hi <= keep_lo


def _pattern_oracle(values, min_len):
    """Brute force: period-1 or period-2 repetition of sufficient length."""
    n = len(values)
    if n < min_len:
        return False
    for period in (1, 2):
        if all(values[i] == values[i - period] for i in range(period, n)):
            return True
    return False


def test_detect_pattern_examples():
    Y, N = 1, -1
    assert detect_pattern([Y, N, Y, N], 4) is True
    assert detect_pattern([Y, N], 4) is False
    assert detect_pattern([Y, Y, Y, Y], 4) is True
    assert detect_pattern([Y, Y, N, Y], 4) is False


def test_detect_pattern_matches_oracle_exhaustively():
    for n in range(0, 13):
        for bits in itertools.product([1, -1], repeat=n):
            assert detect_pattern(list(bits), 4) == _pattern_oracle(list(bits), 4), bits


def test_remove_patterned_tagger_drops_all_their_rows():
    rows = make_rows(6, tagger="alt", value_of=lambda i, t: "Y" if i % 2 == 0 else "N")
    rows += make_rows(3, tagger="ok", value_of=lambda i, t: ["Y", "Y", "N"][i - 6], start=6)
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    out = remove_patterned_taggers(d, 4)
    assert {a.tagger_id for a in out.assignments} == {"ok"}
    assert len(out) == 3


def test_remove_patterned_identity_when_nothing_flagged():
    rows = make_rows(5, tagger="t", value_of=lambda i, t: ["Y", "Y", "N", "Y", "N"][i])
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    out = remove_patterned_taggers(d, 4)
    assert out.assignments == d.assignments


def test_balance_exact_when_plenty():
    rows = make_rows(400, tags=("M1",), value_of=lambda i, t: "Y" if i < 200 else "N")
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    out, shortfalls = balance_sample(d, "M1", 50, 50, seed=7)
    assert shortfalls == []
    values = [a.value for a in out.assignments]
    assert values.count(1) == 50 and values.count(-1) == 50


def test_balance_shortfall_is_warning_not_error():
    rows = make_rows(40, tags=("M1",), value_of=lambda i, t: "Y" if i < 30 else "N")
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    out, shortfalls = balance_sample(d, "M1", 50, 10, seed=1)
    assert [a.value for a in out.assignments].count(1) == 30
    assert len(shortfalls) == 1
    assert (shortfalls[0].requested, shortfalls[0].available) == (50, 30)


def test_balance_deterministic_for_fixed_seed():
    rows = make_rows(300, tags=("M2",), value_of=lambda i, t: "Y" if i % 3 else "N")
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    one, _ = balance_sample(d, "M2", 50, 50, seed=42)
    two, _ = balance_sample(d, "M2", 50, 50, seed=42)
    assert one.assignments == two.assignments


def test_split_single_semester_ratio():
    rows = make_rows(100)
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    s = split_dataset(d, PreprocessConfig(seed=3))
    assert (len(s.train), len(s.validation), len(s.test)) == (60, 20, 20)


def test_split_draws_proportionally_from_each_semester():
    rows = make_rows(10, semesters=("f24",)) + make_rows(10, semesters=("s25",), start=10)
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    s = split_dataset(d, PreprocessConfig(seed=5))
    for split_name, expect in (("train", 6), ("validation", 2), ("test", 2)):
        part = s.split(split_name)
        for semester in ("f24", "s25"):
            n = sum(1 for r in part.records.values() if r.semester == semester)
            assert n == expect, (split_name, semester, n)


def test_split_empty_dataset():
    d = parse_dataset(b"", "jsonl")
    s = split_dataset(d, PreprocessConfig())
    assert len(s.train) == len(s.validation) == len(s.test) == 0


def test_split_no_record_leakage_and_union():
    # two taggers per record so each record has multiple assignments
    rows = make_rows(30, tags=("M1", "M2"), tagger="a") + make_rows(30, tags=("M3",), tagger="b")
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    s = split_dataset(d, PreprocessConfig(seed=11))
    placements = {}
    for name in ("train", "validation", "test"):
        for a in s.split(name).assignments:
            assert placements.setdefault(a.record_id, name) == name
    total = sum(len(s.split(n)) for n in ("train", "validation", "test"))
    assert total == len(d)


def test_split_sizes_within_stratum_bound():
    rows = []
    for k, sem in enumerate(["a", "b", "c"]):
        rows += make_rows(17 + k, semesters=(sem,), start=100 * k)
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    cfg = PreprocessConfig(seed=1)
    s = split_dataset(d, cfg)
    n = len(d.records)
    for name, ratio in zip(("train", "validation", "test"), cfg.split_ratios):
        size = len({a.record_id for a in s.split(name).assignments})
        assert abs(size - ratio * n) <= 3  # number of strata


def test_split_manifest_hash_deterministic():
    rows = make_rows(50, semesters=("f24", "s25"))
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    one = split_dataset(d, PreprocessConfig(seed=9))
    two = split_dataset(d, PreprocessConfig(seed=9))
    assert one.manifest_hash() == two.manifest_hash()
    other = split_dataset(d, PreprocessConfig(seed=10))
    assert other.manifest_hash() != one.manifest_hash()


def test_pipeline_is_deterministic_end_to_end():
    rows = make_rows(200, tags=("M1", "M2"), semesters=("f24", "s25"))
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    cfg = PreprocessConfig(per_tag_yes=30, per_tag_no=30, seed=4)

    def run():
        f = filter_by_credibility(d, cfg.credibility_threshold)
        c = remove_patterned_taggers(f, cfg.pattern_min_len)
        b, _ = balance_all_tags(c, cfg)
        return split_dataset(b, cfg).manifest_hash()

    assert run() == run()


def test_invalid_ratios_rejected():
    with pytest.raises(ValueError):
        PreprocessConfig(split_ratios=(0.5, 0.3, 0.3))
    with pytest.raises(ValueError):
        PreprocessConfig(pattern_min_len=1)
