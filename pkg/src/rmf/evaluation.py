"""Evaluation methods, agreement statistics, and report rendering.

Three ways of asking an LLM for tag verdicts (direct, definitions-augmented,
and calling an externally fine-tuned model) share one runner.  Gold for a
(comment, tag) is the credibility-weighted majority over taggers.  Parse
failures are scored as disagreement so denominators stay fixed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

from .catalog import CATALOG_CODES, TagCatalog
from .ingest import Dataset
from .llm import HttpProvider, ProviderConfig, SamplingConfig, complete_batch
from .prompting import VerdictError, parse_verdict, render_prompt

log = logging.getLogger("rmf.evaluation")

REPORT_SCHEMA_VERSION = 1

METHOD_LABELS = {"direct": "Direct", "definitions": "Definitions", "finetuned": "Fine-tuning"}


@dataclass(frozen=True)
class MethodKind:
    kind: str  # direct | definitions | finetuned
    model_id: str | None = None

    def __post_init__(self):
        if self.kind not in METHOD_LABELS:
            raise ValueError(f"unknown method {self.kind!r}")
        if self.kind == "finetuned" and not self.model_id:
            raise ValueError("finetuned method requires a model identifier")

    @property
    def label(self) -> str:
        return METHOD_LABELS[self.kind]


@dataclass(frozen=True)
class Prediction:
    record_id: str
    tag: str
    predicted_value: int | None  # None when the verdict could not be parsed
    failure: str | None  # ParseFailure | UnknownTag | BadValue | TransportError
    method: str
    model: str
    exchange_ref: str = ""


class MissingGold(ValueError):
    pass


class SuiteUnderfilled(ValueError):
    def __init__(self, deficits: dict[str, tuple[int, int]]):
        self.deficits = deficits
        detail = ", ".join(f"{t} (yes={y}, no={n})" for t, (y, n) in sorted(deficits.items()))
        super().__init__(f"test split cannot fill 5+5 per tag: {detail}")


def gold_values(d: Dataset) -> dict[tuple[str, str], int]:
    """Credibility-weighted majority per (record, tag); ties fall back to the
    single highest-credibility assignment; exact ties after that are excluded
    with a logged notice."""
    groups: dict[tuple[str, str], list] = {}
    for a in d.assignments:
        groups.setdefault((a.record_id, a.tag), []).append(a)
    gold: dict[tuple[str, str], int] = {}
    for key, group in groups.items():
        weight = sum(a.credibility * a.value for a in group)
        if weight > 0:
            gold[key] = 1
        elif weight < 0:
            gold[key] = -1
        else:
            best = max(group, key=lambda a: a.credibility)
            rivals = [a for a in group if a.credibility == best.credibility and a.value != best.value]
            if rivals:
                log.info("gold tie for %s; excluded from scoring", key)
                continue
            gold[key] = best.value
    return gold


def slice_items(d: Dataset) -> list[tuple[str, str]]:
    """Ordered unique (record_id, tag) pairs of a dataset slice."""
    seen: set[tuple[str, str]] = set()
    items: list[tuple[str, str]] = []
    for a in d.assignments:
        key = (a.record_id, a.tag)
        if key not in seen:
            seen.add(key)
            items.append(key)
    return items


def run_method(
    slice: Dataset,
    method: MethodKind,
    provider,
    sampling: SamplingConfig | None = None,
    catalog: TagCatalog | None = None,
    max_in_flight: int = 1,
) -> list[Prediction]:
    """One Prediction per (record, tag) in the slice; failures recorded in
    place, never dropped."""
    if catalog is None:
        raise ValueError("catalog is required")
    if isinstance(provider, ProviderConfig):
        provider = HttpProvider(provider, sampling or SamplingConfig())
    items = slice_items(slice)
    if not items:
        return []
    prompts = [
        render_prompt(slice.records[rid].comment_text, [tag], method.kind, catalog)
        for rid, tag in items
    ]
    exchanges = complete_batch(provider, prompts, max_in_flight=max_in_flight)
    model = method.model_id or getattr(provider, "model_id", getattr(getattr(provider, "cfg", None), "model_id", "?"))
    preds: list[Prediction] = []
    for (rid, tag), ex in zip(items, exchanges):
        if ex.error is not None:
            preds.append(Prediction(rid, tag, None, "TransportError", method.kind, model, ex.request_id))
            continue
        try:
            verdict = parse_verdict(ex.response_text, [tag])
        except VerdictError as e:
            preds.append(Prediction(rid, tag, None, type(e).__name__, method.kind, model, ex.request_id))
        else:
            preds.append(Prediction(rid, tag, verdict.tag_value, None, method.kind, model, ex.request_id))
    return preds


@dataclass
class AccuracyResult:
    overall: float
    matches: int
    total: int
    per_tag: dict[str, tuple[int, int]]  # tag -> (matches, total)

    def per_tag_fraction(self, tag: str) -> float:
        m, t = self.per_tag[tag]
        return m / t if t else 0.0


def accuracy(preds: list[Prediction], gold: dict[tuple[str, str], int]) -> AccuracyResult:
    """Matches over total, overall and per tag; unparseable predictions count
    as mismatches."""
    if not preds:
        raise ValueError("empty prediction set")
    matches = 0
    per_tag: dict[str, list[int]] = {}
    for p in preds:
        key = (p.record_id, p.tag)
        if key not in gold:
            raise MissingGold(f"no gold value for {key}")
        hit = int(p.predicted_value == gold[key])
        matches += hit
        bucket = per_tag.setdefault(p.tag, [0, 0])
        bucket[0] += hit
        bucket[1] += 1
    return AccuracyResult(
        overall=matches / len(preds),
        matches=matches,
        total=len(preds),
        per_tag={t: (m, n) for t, (m, n) in per_tag.items()},
    )


@dataclass(frozen=True)
class SuiteItem:
    record_id: str
    tag: str
    gold_value: int


@dataclass
class ComparisonSuite:
    items: list[SuiteItem]
    seed: int

    def items_for(self, tag: str) -> list[SuiteItem]:
        return [i for i in self.items if i.tag == tag]


def build_comparison_suite(test_split: Dataset, seed: int) -> ComparisonSuite:
    """Seeded selection of exactly 5 positive + 5 negative gold examples per
    tag (110 items, suite order fixed as M1..M11)."""
    import numpy as np

    gold = gold_values(test_split)
    by_tag: dict[str, dict[int, list[str]]] = {t: {1: [], -1: []} for t in CATALOG_CODES}
    for (rid, tag), value in sorted(gold.items()):
        by_tag[tag][value].append(rid)

    deficits = {
        t: (len(pools[1]), len(pools[-1]))
        for t, pools in by_tag.items()
        if len(pools[1]) < 5 or len(pools[-1]) < 5
    }
    if deficits:
        raise SuiteUnderfilled(deficits)

    rng = np.random.Generator(np.random.PCG64(seed))
    items: list[SuiteItem] = []
    for tag in CATALOG_CODES:
        for value in (1, -1):
            pool = by_tag[tag][value]
            order = rng.permutation(len(pool))
            for i in sorted(order[:5]):
                items.append(SuiteItem(record_id=pool[i], tag=tag, gold_value=value))
    return ComparisonSuite(items=items, seed=seed)


def agreement_counts(
    preds: list[Prediction], gold: dict[tuple[str, str], int], suite: ComparisonSuite
) -> dict[str, tuple[int, int]]:
    """Per-tag (agreed, total) over the suite's 10 cases per tag."""
    by_key = {(p.record_id, p.tag): p for p in preds}
    counts: dict[str, tuple[int, int]] = {}
    for tag in CATALOG_CODES:
        tag_items = suite.items_for(tag)
        if len(tag_items) != 10:
            raise ValueError(f"suite incomplete for {tag}: {len(tag_items)} items")
        agreed = 0
        for item in tag_items:
            p = by_key.get((item.record_id, item.tag))
            if p is None:
                raise ValueError(f"no prediction for suite item ({item.record_id}, {tag})")
            if p.predicted_value == gold[(item.record_id, item.tag)]:
                agreed += 1
        counts[tag] = (agreed, len(tag_items))
    return counts


def cohen_kappa(a: list[int], b: list[int]) -> float:
    """Two-rater kappa on binary verdicts.

    Degenerate-marginal convention: when chance agreement is 1 (both raters
    constant), returns 1.0 if the sequences are identical, else 0.0.
    """
    if len(a) != len(b):
        raise ValueError("sequences must have equal length")
    if not a:
        raise ValueError("sequences must be non-empty")
    for seq in (a, b):
        if any(v not in (-1, 1) for v in seq):
            raise ValueError("values must be +1 or -1")
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    pa_yes = sum(x == 1 for x in a) / n
    pb_yes = sum(x == 1 for x in b) / n
    p_e = pa_yes * pb_yes + (1 - pa_yes) * (1 - pb_yes)
    if p_e == 1.0:
        return 1.0 if a == b else 0.0
    return (p_o - p_e) / (1 - p_e)


@dataclass
class AgreementReport:
    model: str
    method: str  # direct | definitions | finetuned
    overall_accuracy: float
    matches: int
    total: int
    per_tag: dict[str, tuple[int, int]]
    suite_counts: dict[str, tuple[int, int]] | None = None
    kappa_vs_gold: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def method_label(self) -> str:
        return METHOD_LABELS[self.method]


def build_agreement_report(
    preds: list[Prediction],
    gold: dict[tuple[str, str], int],
    model: str,
    method: MethodKind,
    suite: ComparisonSuite | None = None,
    metadata: dict | None = None,
) -> AgreementReport:
    acc = accuracy(preds, gold)
    suite_counts = agreement_counts(preds, gold, suite) if suite is not None else None
    scored = [(p.predicted_value, gold[(p.record_id, p.tag)]) for p in preds if p.predicted_value is not None]
    kappa = cohen_kappa([v for v, _ in scored], [g for _, g in scored]) if scored else None
    return AgreementReport(
        model=model,
        method=method.kind,
        overall_accuracy=acc.overall,
        matches=acc.matches,
        total=acc.total,
        per_tag=acc.per_tag,
        suite_counts=suite_counts,
        kappa_vs_gold=kappa,
        metadata=dict(metadata or {}),
    )


def _pct(x: float) -> str:
    return f"{100 * x:.2f}%"


def compare_methods(
    reports: list[AgreementReport],
    adjudicator_counts: dict[str, dict[str, tuple[int, int]]] | None = None,
) -> dict:
    """Assemble the cross table (models x methods) plus the per-tag appendix
    with model and adjudicator columns; render with the render_* helpers."""
    if not reports:
        raise ValueError("need at least one report")
    models: list[str] = []
    methods: list[str] = []
    cells: dict[tuple[str, str], AgreementReport] = {}
    for r in reports:
        if r.model not in models:
            models.append(r.model)
        if r.method not in methods:
            methods.append(r.method)
        cells[(r.model, r.method)] = r

    per_tag_columns: dict[str, dict[str, tuple[int, int]]] = {}
    for r in reports:
        if r.suite_counts is not None:
            per_tag_columns[r.model] = r.suite_counts
    for adjudicator, counts in sorted((adjudicator_counts or {}).items()):
        per_tag_columns[adjudicator] = counts

    return {
        "models": models,
        "methods": methods,
        "cells": cells,
        "per_tag_columns": per_tag_columns,
    }


def render_markdown(table: dict, metadata: dict | None = None) -> str:
    lines: list[str] = ["# Agreement report", ""]
    for key, value in sorted((metadata or {}).items()):
        lines.append(f"- {key}: {value}")
    if metadata:
        lines.append("")
    lines.append("## Accuracy by method")
    lines.append("")
    header = "| LLM | " + " | ".join(METHOD_LABELS[m] for m in table["methods"]) + " |"
    lines.append(header)
    lines.append("|" + "---|" * (len(table["methods"]) + 1))
    for model in table["models"]:
        row = [model]
        for method in table["methods"]:
            r = table["cells"].get((model, method))
            row.append(_pct(r.overall_accuracy) if r else "-")
        lines.append("| " + " | ".join(row) + " |")
    if table["per_tag_columns"]:
        lines.append("")
        lines.append("## Per-tag agreement (10 cases per tag)")
        lines.append("")
        columns = list(table["per_tag_columns"])
        lines.append("| Tags | " + " | ".join(columns) + " |")
        lines.append("|" + "---|" * (len(columns) + 1))
        for tag in CATALOG_CODES:
            row = [tag]
            for col in columns:
                counts = table["per_tag_columns"][col].get(tag)
                row.append(str(counts[0]) if counts else "-")
            lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def render_csv(table: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model"] + [METHOD_LABELS[m] for m in table["methods"]])
    for model in table["models"]:
        row = [model]
        for method in table["methods"]:
            r = table["cells"].get((model, method))
            row.append(_pct(r.overall_accuracy) if r else "")
        writer.writerow(row)
    if table["per_tag_columns"]:
        writer.writerow([])
        columns = list(table["per_tag_columns"])
        writer.writerow(["tag"] + columns)
        for tag in CATALOG_CODES:
            row = [tag]
            for col in columns:
                counts = table["per_tag_columns"][col].get(tag)
                row.append(str(counts[0]) if counts else "")
            writer.writerow(row)
    return buf.getvalue()


def render_json(table: dict, run_id: str = "", metadata: dict | None = None) -> str:
    doc = {
        "version": REPORT_SCHEMA_VERSION,
        "run_id": run_id,
        "models": table["models"],
        "methods": table["methods"],
        "overall": {
            f"{model}/{method}": {
                "accuracy": table["cells"][(model, method)].overall_accuracy,
                "matches": table["cells"][(model, method)].matches,
                "total": table["cells"][(model, method)].total,
                "kappa_vs_gold": table["cells"][(model, method)].kappa_vs_gold,
            }
            for model in table["models"]
            for method in table["methods"]
            if (model, method) in table["cells"]
        },
        "per_tag": {
            col: {tag: list(counts.get(tag, ())) for tag in CATALOG_CODES if tag in counts}
            for col, counts in table["per_tag_columns"].items()
        },
        "suite_manifest": metadata.get("suite_manifest") if metadata else None,
        "metadata": metadata or {},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
