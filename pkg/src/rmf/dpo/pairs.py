"""Preference-pair construction and interchange serialization.

Pairs are built by value-flip: chosen is the answer-format completion carrying
the human tag value, rejected is the identical completion with the sign
flipped.  Serialized as line-delimited JSON {prompt, chosen, rejected, tag,
record_id}, the common interchange shape for preference fine-tuning uploads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from ..catalog import TagCatalog
from ..ingest import Dataset
from ..prompting import render_prompt, verdict_completion


@dataclass(frozen=True)
class PreferencePair:
    prompt: str
    chosen: str
    rejected: str
    tag: str
    record_id: str

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected must differ")


def build_preference_pairs(d: Dataset, catalog: TagCatalog, method: str = "direct") -> list[PreferencePair]:
    """One pair per tag assignment (a bijection): chosen carries the human
    value, rejected its negation, prompt is the rendered template for the
    comment and tag."""
    pairs: list[PreferencePair] = []
    for a in d.assignments:
        record = d.records[a.record_id]
        name = catalog.get(a.tag).name
        pairs.append(
            PreferencePair(
                prompt=render_prompt(record.comment_text, [a.tag], method, catalog),
                chosen=verdict_completion(name, a.value),
                rejected=verdict_completion(name, -a.value),
                tag=a.tag,
                record_id=a.record_id,
            )
        )
    return pairs


def pairs_to_jsonl(pairs: list[PreferencePair]) -> bytes:
    lines = [
        json.dumps(
            {"prompt": p.prompt, "chosen": p.chosen, "rejected": p.rejected,
             "tag": p.tag, "record_id": p.record_id},
            ensure_ascii=False,
        )
        for p in pairs
    ]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def parse_pairs_jsonl(raw: bytes) -> list[PreferencePair]:
    pairs = []
    for line in raw.decode("utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        pairs.append(
            PreferencePair(
                prompt=row["prompt"], chosen=row["chosen"], rejected=row["rejected"],
                tag=row["tag"], record_id=row["record_id"],
            )
        )
    return pairs
