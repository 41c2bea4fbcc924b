"""Prompt rendering and the JSON answer contract.

One uniform prompt structure is used for every method so results stay
comparable; the definitions variant only prepends one "name: definition" line
per tag.  The rendered bytes are frozen by golden files under tests/goldens.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .catalog import TagCatalog, UnknownTagName, load_tag_aliases, normalize_tag

METHOD_KINDS = ("direct", "definitions", "finetuned")

# {review_comment} and {tags} are substituted at render time; {tag} and
# {value} are left verbatim as the answer-schema placeholders the model fills.
DIRECT_TEMPLATE = (
    'Review_Comment: "{review_comment}"\n'
    "Classify the following tags as json {tags}:\n"
    "You should generate the tag value \n"
    'as "{value}", which -1 means negative\n'
    "and 1 means positive.\n"
    "Answer in JSON format as the {\n"
    '    "most_rel_tag":\n'
    '      {tag}, "tag_value":{value}}.'
)


@dataclass(frozen=True)
class PromptTemplate:
    method: str
    template_text: str
    definitions_preamble: str = ""

    def render(self, comment: str, tag_names: list[str]) -> str:
        body = self.template_text.replace("{review_comment}", comment).replace(
            "{tags}", json.dumps(tag_names)
        )
        if self.definitions_preamble:
            return self.definitions_preamble + "\n" + body
        return body


@dataclass(frozen=True)
class TagVerdict:
    most_rel_tag: str  # M-code
    tag_value: int  # +1 / -1
    raw_text: str


class VerdictError(ValueError):
    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(message)


class ParseFailure(VerdictError):
    """No JSON object with the contract keys found in the output."""


class UnknownTag(VerdictError):
    """Returned tag is not in the expected set."""


class BadValue(VerdictError):
    """tag_value token cannot be mapped to +1/-1."""


def build_template(method: str, tags: list[str], catalog: TagCatalog) -> PromptTemplate:
    """Direct and finetuned share the same template; definitions prepends one
    'name: definition' line per requested tag."""
    if method not in METHOD_KINDS:
        raise ValueError(f"unknown method {method!r}")
    preamble = ""
    if method == "definitions":
        lines = []
        for code in tags:
            entry = catalog.get(code)
            lines.append(f"{entry.name}: {entry.definition}")
        preamble = "\n".join(lines)
    return PromptTemplate(method=method, template_text=DIRECT_TEMPLATE, definitions_preamble=preamble)


def render_prompt(comment: str, tags: list[str], method: str, catalog: TagCatalog) -> str:
    """Render the prompt for one comment and a non-empty list of M-codes.

    Byte-deterministic; unknown codes raise KeyError.
    """
    if not tags:
        raise ValueError("tags must be non-empty")
    names = [catalog.get(code).name for code in tags]
    return build_template(method, tags, catalog).render(comment, names)


_VALUE_MAP = {"-1": -1, "1": 1, "+1": 1, "yes": 1, "no": -1, "y": 1, "n": -1}


def _extract_first_object(raw: str) -> dict | None:
    """First balanced JSON object carrying the contract keys; if none does,
    the first JSON object at all (so missing keys surface as ParseFailure)."""
    decoder = json.JSONDecoder()
    first_dict = None
    idx = raw.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(raw, idx)
        except json.JSONDecodeError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            if "most_rel_tag" in obj and "tag_value" in obj:
                return obj
            if first_dict is None:
                first_dict = obj
        idx = raw.find("{", idx + 1)
    return first_dict


def parse_verdict(raw: str, expected_tags: list[str], strict: bool = False) -> TagVerdict:
    """Extract the answer-contract JSON from model output.

    Lenient by default: the first balanced JSON object found anywhere in the
    text (prose and code fences tolerated) is used.  strict=True requires the
    whole output to be exactly one JSON object.  The verdict tag is
    alias-normalized and checked against expected_tags; never fabricates a
    verdict from unparseable output.
    """
    if strict:
        try:
            obj = json.loads(raw.strip())
        except json.JSONDecodeError:
            obj = None
        if not isinstance(obj, dict):
            raise ParseFailure("output is not a single JSON object", raw)
    else:
        obj = _extract_first_object(raw)
        if obj is None:
            raise ParseFailure("no JSON object found in output", raw)

    if "most_rel_tag" not in obj or "tag_value" not in obj:
        raise ParseFailure("JSON object lacks most_rel_tag/tag_value", raw)

    aliases = load_tag_aliases()
    try:
        code = normalize_tag(str(obj["most_rel_tag"]), aliases)
    except UnknownTagName:
        raise UnknownTag(f"unrecognized tag {obj['most_rel_tag']!r}", raw) from None
    if code not in expected_tags:
        raise UnknownTag(f"tag {code} not in expected set {expected_tags}", raw)

    token = str(obj["tag_value"]).strip().lower()
    if token not in _VALUE_MAP:
        raise BadValue(f"unmappable tag_value {obj['tag_value']!r}", raw)
    return TagVerdict(most_rel_tag=code, tag_value=_VALUE_MAP[token], raw_text=raw)


def verdict_completion(tag_name: str, value: int) -> str:
    """The contract-form completion text for one verdict (used for preference
    pairs and by mock providers)."""
    return json.dumps({"most_rel_tag": tag_name, "tag_value": value})
