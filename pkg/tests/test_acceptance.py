"""Acceptance suite: one test per shipping criterion, each printing a PASS or
FAIL line so the whole gate is readable from the pytest output alone."""

import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from conftest import GOLDENS, rows_to_jsonl
from rmf import dpo
from rmf.catalog import CATALOG_CODES, load_tag_catalog
from rmf.cli import _synthetic_pairs, main
from rmf.evaluation import (
    AgreementReport,
    Prediction,
    accuracy,
    agreement_counts,
    build_comparison_suite,
    cohen_kappa,
    compare_methods,
    gold_values,
    render_markdown,
)
from rmf.ingest import parse_dataset
from rmf.preprocess import (
    PreprocessConfig,
    balance_all_tags,
    detect_pattern,
    filter_by_credibility,
    remove_patterned_taggers,
    split_dataset,
)
from rmf.prompting import ParseFailure, parse_verdict, render_prompt, verdict_completion
from rmf.service import create_app
from rmf.store import RunStore


@pytest.fixture
def criterion(capsys):
    def check(name, ok, detail=""):
        suffix = f" ({detail})" if detail else ""
        with capsys.disabled():
            print(f"{'PASS' if ok else 'FAIL'}  {name}{suffix}")
        assert ok, f"{name}{suffix}"

    return check


def test_dpo_fixed_point(criterion):
    rng = np.random.Generator(np.random.PCG64(0))
    t0 = time.perf_counter()
    worst = 0.0
    pairs = _synthetic_pairs(64, 16, seed=0)
    for beta in (0.05, 0.1, 1.0):
        for _ in range(10):
            ref = rng.normal(size=16)
            batch = [pairs[i] for i in rng.integers(0, len(pairs), size=8)]
            loss = dpo.dpo_loss(batch, dpo.PolicyParams.at_reference(ref), beta=beta)
            worst = max(worst, abs(loss - float(np.log(2))))
    elapsed = time.perf_counter() - t0
    criterion("loss at reference equals ln 2", worst < 1e-12 and elapsed < 1.0,
              f"max dev {worst:.2e}, {elapsed:.2f}s")


def test_dpo_gradient_vs_finite_differences(criterion):
    rng = np.random.Generator(np.random.PCG64(1))
    pairs = _synthetic_pairs(64, 16, seed=1)
    t0 = time.perf_counter()
    max_rel = 0.0
    for _ in range(20):
        ref = rng.normal(size=16)
        theta = rng.normal(size=16)
        beta = float(rng.uniform(0.05, 1.0))
        batch = [pairs[i] for i in rng.integers(0, len(pairs), size=8)]
        p = dpo.PolicyParams(theta, ref)
        g = dpo.dpo_gradient(batch, p, beta=beta)
        fd = np.zeros(16)
        h = 1e-5
        for j in range(16):
            up = theta.copy(); up[j] += h
            dn = theta.copy(); dn[j] -= h
            fd[j] = (dpo.dpo_loss(batch, dpo.PolicyParams(up, ref), beta=beta)
                     - dpo.dpo_loss(batch, dpo.PolicyParams(dn, ref), beta=beta)) / (2 * h)
        max_rel = max(max_rel, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)))
    elapsed = time.perf_counter() - t0
    criterion("analytic gradient matches finite differences", max_rel < 1e-6 and elapsed < 2.0,
              f"max rel err {max_rel:.2e}, {elapsed:.2f}s")


def test_dpo_toy_training(criterion):
    pairs = _synthetic_pairs(200, 16, seed=7)
    cfg = dpo.DpoConfig(epochs=500, seed=7)
    t0 = time.perf_counter()
    params1, trace1 = dpo.train_toy_policy(pairs, cfg, feature_dim=16)
    params2, trace2 = dpo.train_toy_policy(pairs, cfg, feature_dim=16)
    elapsed = time.perf_counter() - t0
    ok = (
        trace1.final_accuracy >= 0.95
        and trace1.epoch_losses == trace2.epoch_losses
        and np.array_equal(params1.theta, params2.theta)
        and elapsed < 5.0
    )
    criterion("toy preference training converges deterministically", ok,
              f"accuracy {trace1.final_accuracy:.3f}, {elapsed:.2f}s")


def test_dpo_shift_invariance(criterion):
    rng = np.random.Generator(np.random.PCG64(2))
    pairs = _synthetic_pairs(64, 16, seed=2)
    worst = 0.0
    for _ in range(100):
        ref = rng.normal(size=16)
        p = dpo.PolicyParams(rng.normal(size=16), ref)
        batch = [pairs[i] for i in rng.integers(0, len(pairs), size=4)]
        offsets = {q.prompt: rng.normal(size=16) for q in batch}

        def shifted(prompt, completion, dim, _offsets=offsets):
            return dpo.featurize(prompt, completion, dim) + _offsets[prompt]

        base = dpo.dpo_loss(batch, p, beta=0.1)
        moved = dpo.dpo_loss(batch, p, featurizer=shifted, beta=0.1)
        worst = max(worst, abs(base - moved))
    criterion("per-prompt feature offsets leave the loss unchanged", worst < 1e-10,
              f"max dev {worst:.2e}")


def test_bradley_terry_identities(criterion):
    rng = np.random.Generator(np.random.PCG64(3))
    worst_sum = 0.0
    for _ in range(100):
        r1, r2 = rng.normal(size=2) * 5
        worst_sum = max(worst_sum, abs(dpo.bt_probability(r1, r2) + dpo.bt_probability(r2, r1) - 1.0))
    equal_half = dpo.bt_probability(1.7, 1.7) == 0.5
    sigma1 = abs(dpo.bt_probability(1.0, 0.0) - 0.7310585786) < 1e-9
    criterion("pairwise win probability identities", worst_sum < 1e-12 and equal_half and sigma1,
              f"complement dev {worst_sum:.2e}")


def test_pattern_detector_oracle(criterion):
    def oracle(seq):
        n = len(seq)
        if n < 4:
            return False
        period1 = all(seq[i] == seq[0] for i in range(n))
        period2 = all(seq[i] == seq[i % 2] for i in range(n)) and seq[0] != seq[1]
        return period1 or period2

    t0 = time.perf_counter()
    mismatches = 0
    for n in range(13):
        for bits in itertools.product((1, -1), repeat=n):
            if detect_pattern(list(bits), 4) != oracle(bits):
                mismatches += 1
    elapsed = time.perf_counter() - t0
    criterion("pattern detector agrees with the exhaustive oracle", mismatches == 0 and elapsed < 1.0,
              f"{mismatches} mismatches over lengths 0..12, {elapsed:.2f}s")


def preprocessing_fixture_rows():
    """1,000 rows: 11 tags, 2 semesters, mixed credibility, one patterned
    tagger and several organic ones."""
    rng = np.random.Generator(np.random.PCG64(11))
    rows = []
    for i in range(1000):
        tag = CATALOG_CODES[i % 11]
        tagger = f"t{i % 7}"
        value = "Y" if (i * 13 + len(tag)) % 3 else "N"
        if tagger == "t6":  # mechanically constant tagger
            value = "Y"
        rows.append(
            {
                "record_id": f"rec-{i % 400}",
                "semester": "f24" if (i % 400) % 2 else "s25",
                "rubric_prompt": f"Q{i % 400}?",
                "comment": f"comment {i % 400}",
                "tag_name": tag,
                "tag_value": value,
                "credibility": float(np.round(rng.uniform(0.0, 1.0), 2)),
                "tagger_id": tagger,
            }
        )
    # plant exact-boundary rows so inclusivity is observable
    rows[0]["credibility"] = 0.3
    rows[1]["credibility"] = 0.29
    return rows


def test_preprocessing_pipeline(criterion):
    rows = preprocessing_fixture_rows()
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    cfg = PreprocessConfig(per_tag_yes=20, per_tag_no=20, seed=5)

    filtered = filter_by_credibility(d, cfg.credibility_threshold)
    expected = sum(1 for r in rows if r["credibility"] >= 0.3)
    filter_ok = len(filtered) == expected and any(a.credibility == 0.3 for a in filtered.assignments)

    cleaned = remove_patterned_taggers(filtered, cfg.pattern_min_len)
    pattern_ok = not any(a.tagger_id == "t6" for a in cleaned.assignments)

    balanced, _ = balance_all_tags(cleaned, cfg)
    balance_ok = True
    for tag in CATALOG_CODES:
        yes = sum(1 for a in balanced.assignments if a.tag == tag and a.value == 1)
        no = sum(1 for a in balanced.assignments if a.tag == tag and a.value == -1)
        avail_yes = sum(1 for a in cleaned.assignments if a.tag == tag and a.value == 1)
        avail_no = sum(1 for a in cleaned.assignments if a.tag == tag and a.value == -1)
        balance_ok &= yes == min(20, avail_yes) and no == min(20, avail_no)

    splits = split_dataset(balanced, cfg)
    sizes = {name: {r["record_id"] for r in splits.manifest if r["split"] == name} for name in ("train", "validation", "test")}
    n = sum(len(s) for s in sizes.values())
    split_ok = (
        abs(len(sizes["train"]) - 0.6 * n) <= 2
        and abs(len(sizes["validation"]) - 0.2 * n) <= 2
        and abs(len(sizes["test"]) - 0.2 * n) <= 2
    )
    leakage_ok = not (sizes["train"] & sizes["validation"]) and not (sizes["train"] & sizes["test"]) and not (
        sizes["validation"] & sizes["test"]
    )
    hash_ok = splits.manifest_hash() == split_dataset(balanced, cfg).manifest_hash()

    ok = filter_ok and pattern_ok and balance_ok and split_ok and leakage_ok and hash_ok
    criterion(
        "preprocessing pipeline on the 1,000-row fixture", ok,
        f"filter {filter_ok}, pattern {pattern_ok}, balance {balance_ok}, "
        f"split {split_ok}, leakage-free {leakage_ok}, stable hash {hash_ok}",
    )


def test_prompt_goldens_and_round_trip(criterion):
    catalog = load_tag_catalog()
    cases = [
        ("No", ["M8"], 1),
        ("Credit card number was not asked for at any point", ["M8"], 2),
        ("Good job, I see them all.", ["M4"], 3),
    ]
    goldens_ok = all(
        render_prompt(comment, tags, method, catalog)
        == Path(f"{GOLDENS}/prompt_{method}_{idx:02d}.txt").read_text()
        for comment, tags, idx in cases
        for method in ("direct", "definitions")
    )
    round_trip_ok = True
    n_cases = 0
    for code in CATALOG_CODES:
        for value in (1, -1):
            v = parse_verdict(verdict_completion(catalog.get(code).name, value), [code])
            round_trip_ok &= (v.most_rel_tag, v.tag_value) == (code, value)
            n_cases += 1
    criterion("prompt goldens and verdict round trip", goldens_ok and round_trip_ok,
              f"goldens {goldens_ok}, {n_cases}-case round trip {round_trip_ok}")


def test_parse_robustness(criterion):
    from test_prompting import ADVERSARIAL_WRAPPERS, GARBAGE

    recovered = 0
    for raw in ADVERSARIAL_WRAPPERS:
        v = parse_verdict(raw, ["M4"])
        recovered += (v.most_rel_tag, v.tag_value) == ("M4", -1)
    refused = 0
    for raw in GARBAGE:
        try:
            parse_verdict(raw, ["M4"])
        except ParseFailure:
            refused += 1
    ok = recovered == len(ADVERSARIAL_WRAPPERS) >= 12 and refused == len(GARBAGE) == 5
    criterion("lenient extraction recovers wrappers, never fabricates", ok,
              f"{recovered}/{len(ADVERSARIAL_WRAPPERS)} recovered, {refused}/5 refused")


def e2e_rows():
    rows = []
    i = 0
    for tag in CATALOG_CODES:
        for value in ("Y",) * 6 + ("N",) * 6:
            rows.append(
                {
                    "record_id": f"rec-{i}",
                    "semester": "f24" if i % 2 else "s25",
                    "rubric_prompt": f"Q{i}?",
                    "comment": f"student comment number {i} about {tag}",
                    "tag_name": tag,
                    "tag_value": value,
                    "credibility": 0.9,
                    "tagger_id": f"t{i % 5}",
                }
            )
            i += 1
    return rows


def test_end_to_end_mock_run(criterion, tmp_path):
    runner = CliRunner()
    t0 = time.perf_counter()
    raw = tmp_path / "raw.jsonl"
    raw.write_bytes(rows_to_jsonl(e2e_rows()))
    ds = tmp_path / "dataset.jsonl"
    r = runner.invoke(main, ["ingest", str(raw), "-o", str(ds)])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, ["preprocess", str(ds), "--per-tag-yes", "6", "--per-tag-no", "6",
                             "--seed", "1", "-o", str(tmp_path / "prep")])
    assert r.exit_code == 0, r.output
    test_split = tmp_path / "prep" / "test.jsonl"

    reports = {}
    for flight in (1, 8):
        store = tmp_path / f"store-{flight}"
        r = runner.invoke(main, ["evaluate", str(test_split), "--provider", "mock-echo",
                                 "--methods", "direct,definitions", "--run-id", "e2e",
                                 "--created-at", "2026-01-01T00:00:00+00:00",
                                 "--max-in-flight", str(flight), "--store", str(store)])
        assert r.exit_code == 0, r.output
        echo_ok = r.output.count("accuracy 1.0000") == 2
        rep = runner.invoke(main, ["report", "e2e", "--store", str(store), "--format", "md"])
        assert rep.exit_code == 0, rep.output
        reports[flight] = rep.output.encode()

    r = runner.invoke(main, ["evaluate", str(test_split), "--provider", "mock-invert",
                             "--run-id", "e2e-inv", "--store", str(tmp_path / "store-1")])
    assert r.exit_code == 0, r.output
    invert_ok = r.output.count("accuracy 0.0000") == 2
    elapsed = time.perf_counter() - t0
    ok = echo_ok and invert_ok and reports[1] == reports[8] and elapsed < 10.0
    criterion("offline end-to-end run with mock providers", ok,
              f"echo 1.000 {echo_ok}, invert 0.000 {invert_ok}, "
              f"report bytes stable across concurrency {reports[1] == reports[8]}, {elapsed:.2f}s")


def test_table_fixtures(criterion):
    preds = [Prediction(f"r{i}", "M1", 1 if i < 7982 else -1, None, "direct", "m") for i in range(10000)]
    gold = {(f"r{i}", "M1"): 1 for i in range(10000)}
    acc = accuracy(preds, gold)
    pct_ok = f"{100 * acc.overall:.2f}%" == "79.82%"

    target = (9, 9, 8, 7, 8, 7, 9, 7, 10, 10, 7)
    rows = []
    i = 0
    for tag in CATALOG_CODES:
        for value in ("Y",) * 5 + ("N",) * 5:
            rows.append({"record_id": f"s{i}", "semester": "f24", "rubric_prompt": "Q?",
                         "comment": f"c{i}", "tag_name": tag, "tag_value": value,
                         "credibility": 0.9, "tagger_id": "t1"})
            i += 1
    d = parse_dataset(rows_to_jsonl(rows), "jsonl")
    suite = build_comparison_suite(d, seed=0)
    gold_s = gold_values(d)
    suite_preds = []
    for tag, want in zip(CATALOG_CODES, target):
        for j, item in enumerate(suite.items_for(tag)):
            g = gold_s[(item.record_id, item.tag)]
            suite_preds.append(Prediction(item.record_id, item.tag, g if j < want else -g, None, "finetuned", "gpt-4o"))
    counts = agreement_counts(suite_preds, gold_s, suite)
    counts_ok = tuple(counts[t][0] for t in CATALOG_CODES) == target and all(
        counts[t][1] == 10 for t in CATALOG_CODES
    )

    fixture = {"GPT-4o": (7524, 7534, 7982), "Deepseek": (6920, 7123, 7686), "Llama3": (6875, 7114, 7620)}
    reports = [
        AgreementReport(model=m, method=meth, overall_accuracy=v / 10000, matches=v, total=10000, per_tag={})
        for m, vals in fixture.items()
        for meth, v in zip(("direct", "definitions", "finetuned"), vals)
    ]
    md = render_markdown(compare_methods(reports))
    md_ok = md == Path(f"{GOLDENS}/report_table3.md").read_text()
    criterion("accuracy, per-tag agreement, and report layout fixtures",
              pct_ok and counts_ok and md_ok,
              f"79.82% {pct_ok}, per-tag column {counts_ok}, markdown golden {md_ok}")


def test_kappa_criteria(criterion):
    exact_zero = cohen_kappa([1, 1, -1, -1], [1, -1, 1, -1]) == 0.0
    identical = cohen_kappa([1, -1, 1, -1], [1, -1, 1, -1]) == 1.0
    rng = np.random.Generator(np.random.PCG64(42))
    a = [int(v) for v in rng.choice([1, -1], size=10000)]
    b = [int(v) for v in rng.choice([1, -1], size=10000)]
    mc = abs(cohen_kappa(a, b))
    criterion("chance-corrected agreement statistic", exact_zero and identical and mc < 0.05,
              f"hand example exact {exact_zero}, identical 1.0 {identical}, independence |k| {mc:.4f}")


def test_store_durability(criterion, tmp_path):
    suite = [{"record_id": f"r{i}", "tag": "M1", "gold_value": 1, "rubric_prompt": "Q?",
              "comment_text": f"c{i}", "tag_name": "Contains Praise", "tag_definition": ""} for i in range(3)]
    store = RunStore(tmp_path)
    store.create_run("run-a", {}, suite=suite)
    store.append_predictions("run-a", [Prediction(f"r{i}", "M1", 1, None, "direct", "m") for i in range(3)])
    store.submit_adjudication("run-a", "r0", "M1", "inst", 1)
    store.submit_adjudication("run-a", "r0", "M1", "inst", -1)
    del store

    replayed = RunStore(tmp_path)
    replay_ok = [p.record_id for p in replayed.predictions("run-a")] == ["r0", "r1", "r2"]

    log = tmp_path / "run-a" / "predictions.jsonl"
    data = log.read_bytes()
    cut = data.rstrip(b"\n").rfind(b"\n") + 1
    log.write_bytes(data[:cut] + data[cut : cut + 9])  # truncate the final line
    reopened = RunStore(tmp_path)
    truncation_ok = [p.record_id for p in reopened.predictions("run-a")] == ["r0", "r1"]

    supersession_ok = reopened.effective_adjudications("run-a") == {("r0", "M1", "inst"): -1}
    criterion("append-only store survives restart and torn writes",
              replay_ok and truncation_ok and supersession_ok,
              f"replay {replay_ok}, torn tail dropped {truncation_ok}, last verdict wins {supersession_ok}")


def test_service_contract_full_suite(criterion, tmp_path):
    items, gold = [], {}
    i = 0
    for tag in CATALOG_CODES:
        for gold_value in (1,) * 5 + (-1,) * 5:
            rid = f"r{i}"
            items.append({"record_id": rid, "tag": tag, "gold_value": gold_value,
                          "rubric_prompt": "Q?", "comment_text": f"c{i}",
                          "tag_name": tag, "tag_definition": ""})
            gold[(rid, tag)] = gold_value
            i += 1
    store = RunStore(tmp_path)
    store.create_run("run-1", {}, suite=items, gold=gold, blind=True)
    store.append_predictions(
        "run-1", [Prediction(x["record_id"], x["tag"], x["gold_value"], None, "direct", "mock") for x in items]
    )
    client = TestClient(create_app(store))

    queue = client.get("/api/v1/runs/run-1/queue?adjudicator=instructor").json()
    start_ok = queue["total"] == 110 and len(queue["items"]) == 110
    blind_ok = all("model_verdicts" not in x and "gold_value" not in x for x in queue["items"])
    for x in items:
        r = client.post("/api/v1/runs/run-1/adjudications",
                        json={"record_id": x["record_id"], "tag": x["tag"],
                              "adjudicator_id": "instructor", "verdict": gold[(x["record_id"], x["tag"])]})
        assert r.status_code == 200
    done = client.get("/api/v1/runs/run-1/queue?adjudicator=instructor").json()["done"]
    report = client.get("/api/v1/runs/run-1/report?format=json").json()
    column = report["per_tag"].get("instructor", {})
    totals_ok = all(column.get(t, [0, 0])[1] == 10 for t in CATALOG_CODES)
    criterion("full 110-item adjudication over plain HTTP",
              start_ok and blind_ok and done == 110 and totals_ok,
              f"queue {start_ok}, blind {blind_ok}, done {done}/110, per-tag totals of 10 {totals_ok}")
