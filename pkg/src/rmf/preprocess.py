"""Preprocessing: credibility filter, mechanical-pattern removal, balanced
per-tag sampling, and the stratified 60/20/20 split.

All randomness comes from numpy's PCG64 generator seeded per call, so every
step is a pure function of (input, seed) and manifests are reproducible
byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .catalog import CATALOG_CODES
from .ingest import NO, YES, Dataset, TagAssignment

SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True)
class PreprocessConfig:
    credibility_threshold: float = 0.3
    pattern_min_len: int = 4
    per_tag_yes: int = 50
    per_tag_no: int = 50
    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if not (0.0 <= self.credibility_threshold <= 1.0):
            raise ValueError("credibility_threshold must be in [0, 1]")
        if self.pattern_min_len < 2:
            raise ValueError("pattern_min_len must be >= 2")
        for r in self.split_ratios:
            if not (0.0 < r < 1.0):
                raise ValueError("split ratios must each lie in (0, 1)")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")


@dataclass(frozen=True)
class Shortfall:
    tag: str
    polarity: int
    requested: int
    available: int


@dataclass
class SplitDataset:
    train: Dataset
    validation: Dataset
    test: Dataset
    seed: int
    manifest: list[dict] = field(default_factory=list)

    def split(self, name: str) -> Dataset:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def manifest_jsonl(self) -> bytes:
        lines = [json.dumps(row, ensure_ascii=False, sort_keys=True) for row in self.manifest]
        return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest_jsonl()).hexdigest()


def filter_by_credibility(d: Dataset, threshold: float) -> Dataset:
    """Keep assignments with credibility >= threshold (boundary inclusive)."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must be in [0, 1]")
    return d.with_assignments(a for a in d.assignments if a.credibility >= threshold)


def detect_pattern(values: Sequence[int], min_len: int) -> bool:
    """True iff the sequence is long enough and mechanically repetitive.

    "Mechanical" means constant (YYYY...) or strictly alternating (YNYN...);
    shorter sequences are never flagged.
    """
    if min_len < 2:
        raise ValueError("min_len must be >= 2")
    n = len(values)
    if n < min_len:
        return False
    constant = all(v == values[0] for v in values)
    alternating = all(values[i] != values[i - 1] for i in range(1, n))
    return constant or alternating


def remove_patterned_taggers(d: Dataset, min_len: int = 4) -> Dataset:
    """Drop every assignment of a tagger whose value sequence (ordered by
    seq_index) is flagged by detect_pattern; other taggers untouched."""
    by_tagger: dict[str, list[TagAssignment]] = {}
    for a in d.assignments:
        by_tagger.setdefault(a.tagger_id, []).append(a)
    flagged: set[str] = set()
    for tagger, group in by_tagger.items():
        ordered = sorted(group, key=lambda a: a.seq_index)
        if detect_pattern([a.value for a in ordered], min_len):
            flagged.add(tagger)
    return d.with_assignments(a for a in d.assignments if a.tagger_id not in flagged)


def balance_sample(
    d: Dataset, tag: str, n_yes: int, n_no: int, seed: int
) -> tuple[Dataset, list[Shortfall]]:
    """Seeded uniform selection of up to n_yes/n_no assignments for one tag.

    Returns the sampled dataset plus shortfall warnings when fewer than the
    requested count exist; never raises on insufficiency.
    """
    if n_yes < 0 or n_no < 0:
        raise ValueError("sample sizes must be >= 0")
    pos = {id(a): i for i, a in enumerate(d.assignments)}
    yes = [a for a in d.assignments if a.tag == tag and a.value == YES]
    no = [a for a in d.assignments if a.tag == tag and a.value == NO]
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen: list[TagAssignment] = []
    shortfalls: list[Shortfall] = []
    for pool, want, polarity in ((yes, n_yes, YES), (no, n_no, NO)):
        order = rng.permutation(len(pool))
        take = min(want, len(pool))
        if take < want:
            shortfalls.append(Shortfall(tag=tag, polarity=polarity, requested=want, available=len(pool)))
        chosen.extend(pool[i] for i in sorted(order[:take]))
    chosen.sort(key=lambda a: pos[id(a)])
    return d.with_assignments(chosen), shortfalls


def balance_all_tags(d: Dataset, cfg: PreprocessConfig) -> tuple[Dataset, list[Shortfall]]:
    """balance_sample over every catalog tag, one derived seed per tag."""
    pos = {id(a): i for i, a in enumerate(d.assignments)}
    kept: list[TagAssignment] = []
    shortfalls: list[Shortfall] = []
    for i, tag in enumerate(CATALOG_CODES):
        sub, short = balance_sample(d, tag, cfg.per_tag_yes, cfg.per_tag_no, cfg.seed + i)
        kept.extend(sub.assignments)
        shortfalls.extend(short)
    kept.sort(key=lambda a: pos[id(a)])
    return d.with_assignments(kept), shortfalls


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    quotas = [n * r for r in ratios]
    base = [int(np.floor(q)) for q in quotas]
    remainder = n - sum(base)
    frac_order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in frac_order[:remainder]:
        base[i] += 1
    return base


def split_dataset(d: Dataset, cfg: PreprocessConfig) -> SplitDataset:
    """Stratified record-level split.

    Records are grouped by semester, shuffled with the seeded generator, and
    allocated per stratum by largest-remainder rounding of the configured
    ratios.  All assignments for the same record land in the same split, so a
    comment never leaks across splits.
    """
    strata: dict[str, list[str]] = {}
    for rid in d.records:  # insertion order: deterministic given parse order
        strata.setdefault(d.records[rid].semester, []).append(rid)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    placement: dict[str, str] = {}
    manifest: list[dict] = []
    for semester in sorted(strata):
        rids = strata[semester]
        order = rng.permutation(len(rids))
        shuffled = [rids[i] for i in order]
        counts = _largest_remainder(len(shuffled), cfg.split_ratios)
        cursor = 0
        for name, count in zip(SPLIT_NAMES, counts):
            for rid in shuffled[cursor : cursor + count]:
                placement[rid] = name
                manifest.append({"record_id": rid, "split": name, "semester": semester, "seed": cfg.seed})
            cursor += count

    parts = {
        name: d.with_assignments(a for a in d.assignments if placement.get(a.record_id) == name)
        for name in SPLIT_NAMES
    }
    manifest.sort(key=lambda row: row["record_id"])
    return SplitDataset(
        train=parts["train"],
        validation=parts["validation"],
        test=parts["test"],
        seed=cfg.seed,
        manifest=manifest,
    )
