import json

import pytest

from rmf.catalog import load_tag_catalog
from rmf.ingest import parse_dataset

GOLDENS = __file__.rsplit("/", 1)[0] + "/goldens"

# The four example rows of tagged peer-review data used throughout the tests.
TABLE1_ROWS = [
    {
        "record_id": "r1",
        "semester": "f24",
        "rubric_prompt": "Are there any missing attributes for the admin?",
        "comment": "No",
        "tag_name": "Contains explanation?",
        "tag_value": "N",
        "credibility": 0.9,
        "tagger_id": "t1",
    },
    {
        "record_id": "r2",
        "semester": "f24",
        "rubric_prompt": "Are there any missing attributes for a user?",
        "comment": "Credit card number was not asked for at any point",
        "tag_name": "Contains explanation?",
        "tag_value": "Y",
        "credibility": 0.8,
        "tagger_id": "t1",
    },
    {
        "record_id": "r1",
        "semester": "f24",
        "rubric_prompt": "Are there any missing attributes for the admin?",
        "comment": "No",
        "tag_name": "Positive Tone?",
        "tag_value": "N",
        "credibility": 0.7,
        "tagger_id": "t2",
    },
    {
        "record_id": "r3",
        "semester": "s25",
        "rubric_prompt": "Are there any missing attributes for the admin?",
        "comment": "Good job, I see them all.",
        "tag_name": "Positive Tone?",
        "tag_value": "Y",
        "credibility": 0.6,
        "tagger_id": "t2",
    },
]


def rows_to_jsonl(rows) -> bytes:
    return ("\n".join(json.dumps(r) for r in rows) + "\n").encode("utf-8")


def make_rows(
    n_records: int,
    tags=("M1",),
    semesters=("f24",),
    tagger: str = "t1",
    credibility: float = 0.9,
    value_of=lambda i, tag: "Y" if i % 2 == 0 else "N",
    start: int = 0,
):
    """Synthetic well-formed export rows, one per (record, tag)."""
    rows = []
    for i in range(start, start + n_records):
        for tag in tags:
            rows.append(
                {
                    "record_id": f"rec-{i}",
                    "semester": semesters[i % len(semesters)],
                    "rubric_prompt": f"Rubric question {i}?",
                    "comment": f"comment text number {i}",
                    "tag_name": tag,
                    "tag_value": value_of(i, tag),
                    "credibility": credibility,
                    "tagger_id": tagger,
                }
            )
    return rows


@pytest.fixture(scope="session")
def catalog():
    return load_tag_catalog()


@pytest.fixture
def table1_dataset():
    return parse_dataset(rows_to_jsonl(TABLE1_ROWS), "jsonl")
