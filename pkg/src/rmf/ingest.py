"""Parse, validate, and normalize tagged peer-review exports.

Canonical interchange is line-delimited JSON with fields
{record_id, semester, rubric_prompt, comment, tag_name, tag_value ("Y"|"N"),
credibility, tagger_id, seq_index?}; CSV with the same header names is
accepted.  Tag names are free text and are normalized to M1..M11 via the
shipped alias table; unknown names are a hard error.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import IO, Iterable, Iterator

from .catalog import UnknownTagName, load_tag_aliases, normalize_tag

YES = 1
NO = -1

_VALUE_TOKENS = {"y": YES, "yes": YES, "n": NO, "no": NO}


class DataError(ValueError):
    """Malformed row in an export file; carries line number and field name."""

    def __init__(self, message: str, *, line: int | None = None, fieldname: str | None = None):
        self.line = line
        self.fieldname = fieldname
        loc = f" (line {line}" + (f", field {fieldname!r}" if fieldname else "") + ")" if line else ""
        super().__init__(message + loc)


@dataclass(frozen=True)
class CommentRecord:
    record_id: str
    semester: str
    rubric_prompt: str
    comment_text: str
    score: int | None = None


@dataclass(frozen=True)
class TagAssignment:
    record_id: str
    tag: str  # M1..M11
    value: int  # +1 yes / -1 no
    credibility: float
    tagger_id: str
    seq_index: int


@dataclass(frozen=True)
class Provenance:
    source: str
    format: str
    ingested_at: str


@dataclass
class Dataset:
    records: dict[str, CommentRecord] = field(default_factory=dict)
    assignments: list[TagAssignment] = field(default_factory=list)
    provenance: Provenance | None = None

    def __len__(self) -> int:
        return len(self.assignments)

    def with_assignments(self, assignments: Iterable[TagAssignment]) -> "Dataset":
        """New Dataset keeping only the given assignments and records they reference."""
        kept = list(assignments)
        ids = {a.record_id for a in kept}
        return Dataset(
            records={rid: r for rid, r in self.records.items() if rid in ids},
            assignments=kept,
            provenance=self.provenance,
        )

    def to_jsonl(self) -> bytes:
        buf = io.StringIO()
        for a in self.assignments:
            r = self.records[a.record_id]
            row = {
                "record_id": r.record_id,
                "semester": r.semester,
                "rubric_prompt": r.rubric_prompt,
                "comment": r.comment_text,
                "tag_name": a.tag,
                "tag_value": "Y" if a.value == YES else "N",
                "credibility": a.credibility,
                "tagger_id": a.tagger_id,
                "seq_index": a.seq_index,
            }
            if r.score is not None:
                row["score"] = r.score
            buf.write(json.dumps(row, ensure_ascii=False) + "\n")
        return buf.getvalue().encode("utf-8")


@dataclass(frozen=True)
class Violation:
    kind: str  # DanglingReference | CredibilityOutOfRange | DuplicateKey | EmptyField
    detail: str


def _rows_from_stream(source: IO[bytes] | bytes, format: str) -> Iterator[tuple[int, dict]]:
    raw = source if isinstance(source, bytes) else source.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"input is not valid UTF-8: {e}") from None
    text = text.replace("\r\n", "\n")
    if format == "jsonl":
        for lineno, line in enumerate(text.split("\n"), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"invalid JSON: {e.msg}", line=lineno) from None
            if not isinstance(row, dict):
                raise DataError("row is not a JSON object", line=lineno)
            yield lineno, row
    elif format == "csv":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or "record_id" not in reader.fieldnames:
            raise DataError("CSV header missing required 'record_id' column", line=1)
        for lineno, row in enumerate(reader, start=2):
            if None in row:
                raise DataError("row has more cells than the header", line=lineno)
            yield lineno, {k: v for k, v in row.items() if v not in (None, "")}
    else:
        raise DataError(f"unknown format {format!r}; expected jsonl or csv")


def parse_dataset(source: IO[bytes] | bytes, format: str = "jsonl") -> Dataset:
    """Parse an export stream into a Dataset.

    Duplicate record_ids with identical record content are merged; conflicting
    content, unknown tag names, out-of-range credibilities, and duplicate
    (record_id, tag, tagger_id) keys are errors.  Missing seq_index is
    assigned per tagger_id in file order, so parsing is deterministic.
    """
    aliases = load_tag_aliases()
    records: dict[str, CommentRecord] = {}
    assignments: list[TagAssignment] = []
    seen_keys: set[tuple[str, str, str]] = set()
    next_seq: dict[str, int] = {}

    for lineno, row in _rows_from_stream(source, format):
        def need(name: str) -> str:
            if name not in row:
                raise DataError(f"missing field {name!r}", line=lineno, fieldname=name)
            return str(row[name])

        record_id = need("record_id").strip()
        if not record_id:
            raise DataError("record_id is empty", line=lineno, fieldname="record_id")
        rubric_prompt = need("rubric_prompt").strip()
        comment = need("comment").strip()
        if not rubric_prompt:
            raise DataError("rubric_prompt is empty", line=lineno, fieldname="rubric_prompt")
        if not comment:
            raise DataError("comment is empty", line=lineno, fieldname="comment")
        semester = str(row.get("semester", "")).strip() or "unknown"
        score = None
        if "score" not in row or row["score"] in (None, ""):
            pass
        else:
            try:
                score = int(row["score"])
            except (TypeError, ValueError):
                raise DataError(f"score {row['score']!r} is not an integer", line=lineno, fieldname="score") from None

        record = CommentRecord(record_id, semester, rubric_prompt, comment, score)
        prior = records.get(record_id)
        if prior is None:
            records[record_id] = record
        elif prior != record:
            raise DataError(
                f"record_id {record_id!r} repeats with different content", line=lineno, fieldname="record_id"
            )

        try:
            tag = normalize_tag(need("tag_name"), aliases)
        except UnknownTagName as e:
            raise DataError(str(e), line=lineno, fieldname="tag_name") from None

        value_token = need("tag_value").strip().lower()
        if value_token in _VALUE_TOKENS:
            value = _VALUE_TOKENS[value_token]
        elif value_token in ("1", "+1"):
            value = YES
        elif value_token == "-1":
            value = NO
        else:
            raise DataError(f"tag_value {row['tag_value']!r} is not Y/N", line=lineno, fieldname="tag_value")

        try:
            credibility = float(need("credibility"))
        except ValueError:
            raise DataError(
                f"credibility {row['credibility']!r} is not a number", line=lineno, fieldname="credibility"
            ) from None
        if not (0.0 <= credibility <= 1.0):
            raise DataError(
                f"credibility {credibility} outside [0, 1]", line=lineno, fieldname="credibility"
            )

        tagger_id = need("tagger_id").strip()
        if not tagger_id:
            raise DataError("tagger_id is empty", line=lineno, fieldname="tagger_id")

        key = (record_id, tag, tagger_id)
        if key in seen_keys:
            raise DataError(f"duplicate (record_id, tag, tagger_id) = {key}", line=lineno)
        seen_keys.add(key)

        if "seq_index" in row and row["seq_index"] not in (None, ""):
            try:
                seq_index = int(row["seq_index"])
            except (TypeError, ValueError):
                raise DataError(
                    f"seq_index {row['seq_index']!r} is not an integer", line=lineno, fieldname="seq_index"
                ) from None
            if seq_index < 0:
                raise DataError("seq_index is negative", line=lineno, fieldname="seq_index")
        else:
            seq_index = next_seq.get(tagger_id, 0)
        next_seq[tagger_id] = max(next_seq.get(tagger_id, 0), seq_index + 1)

        assignments.append(TagAssignment(record_id, tag, value, credibility, tagger_id, seq_index))

    return Dataset(
        records=records,
        assignments=assignments,
        provenance=Provenance(
            source="<stream>", format=format, ingested_at=datetime.now(timezone.utc).isoformat()
        ),
    )


def validate_dataset(d: Dataset) -> list[Violation]:
    """Report every invariant breach; empty list iff the dataset is well-formed.

    Violations are data, not failures: this also checks values that
    parse_dataset would have rejected, for datasets built in memory.
    """
    out: list[Violation] = []
    seen: set[tuple[str, str, str]] = set()
    for a in d.assignments:
        if a.record_id not in d.records:
            out.append(Violation("DanglingReference", f"assignment references missing record {a.record_id!r}"))
        if not (0.0 <= a.credibility <= 1.0):
            out.append(Violation("CredibilityOutOfRange", f"{a.record_id}/{a.tag}: credibility {a.credibility}"))
        if a.value not in (YES, NO):
            out.append(Violation("BadValue", f"{a.record_id}/{a.tag}: value {a.value}"))
        key = (a.record_id, a.tag, a.tagger_id)
        if key in seen:
            out.append(Violation("DuplicateKey", f"duplicate {key}"))
        seen.add(key)
    for r in d.records.values():
        if not r.record_id.strip():
            out.append(Violation("EmptyField", "record with empty record_id"))
        if not r.rubric_prompt.strip() or not r.comment_text.strip():
            out.append(Violation("EmptyField", f"record {r.record_id!r} has empty prompt or comment"))
    return out
