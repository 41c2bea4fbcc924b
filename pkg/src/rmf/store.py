"""Durable run storage: append-only, checksummed JSON logs per run.

Layout: store/<run_id>/run.json (written once), predictions.jsonl and
adjudications.jsonl (append-only logs).  Every log line is
"<crc32 hex> <json>"; a torn or corrupted tail is discarded on read, so after
a crash the store reflects exactly the prefix of durable appends.
"""

from __future__ import annotations

import json
import os
import threading
import zlib
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .catalog import CATALOG_CODES
from .evaluation import Prediction


class StoreError(RuntimeError):
    pass


class UnknownRun(StoreError):
    pass


class DuplicateRun(StoreError):
    pass


class NotInSuite(StoreError):
    pass


def _encode_line(obj: dict) -> bytes:
    payload = json.dumps(obj, ensure_ascii=False, sort_keys=True)
    crc = zlib.crc32(payload.encode("utf-8")) & 0xFFFFFFFF
    return f"{crc:08x} {payload}\n".encode("utf-8")


def append_log(path: Path, obj: dict) -> None:
    with open(path, "ab") as f:
        f.write(_encode_line(obj))
        f.flush()
        os.fsync(f.fileno())


def read_log(path: Path) -> list[dict]:
    """Read every valid checksummed record; stop at the first bad line."""
    if not path.exists():
        return []
    out: list[dict] = []
    with open(path, "rb") as f:
        for raw in f:
            try:
                line = raw.decode("utf-8")
                if not line.endswith("\n"):
                    break  # torn tail
                crc_hex, payload = line.rstrip("\n").split(" ", 1)
                if zlib.crc32(payload.encode("utf-8")) & 0xFFFFFFFF != int(crc_hex, 16):
                    break
                out.append(json.loads(payload))
            except (ValueError, UnicodeDecodeError):
                break
    return out


def compact_log(path: Path) -> None:
    """Rewrite the log keeping only the valid prefix (drops a torn tail)."""
    records = read_log(path)
    if not path.exists():
        return
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        for obj in records:
            f.write(_encode_line(obj))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


@dataclass
class RunRecord:
    run_id: str
    created_at: str
    config: dict
    status: str = "pending"
    blind: bool = True
    suite: list[dict] | None = None  # [{record_id, tag, gold_value, rubric_prompt, comment_text}]
    gold: list[list] | None = None  # [[record_id, tag, value], ...]


class RunStore:
    """Filesystem-backed store with a serialized writer per run log."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        for run_dir in self.root.iterdir():
            if run_dir.is_dir():
                for name in ("predictions.jsonl", "adjudications.jsonl"):
                    if (run_dir / name).exists():
                        compact_log(run_dir / name)

    def _lock(self, run_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(run_id, threading.Lock())

    def _run_dir(self, run_id: str, must_exist: bool = True) -> Path:
        d = self.root / run_id
        if must_exist and not (d / "run.json").exists():
            raise UnknownRun(f"unknown run {run_id!r}")
        return d

    def create_run(
        self,
        run_id: str,
        config: dict,
        suite: list[dict] | None = None,
        gold: dict[tuple[str, str], int] | None = None,
        blind: bool = True,
        created_at: str | None = None,
    ) -> RunRecord:
        d = self.root / run_id
        if (d / "run.json").exists():
            raise DuplicateRun(f"run {run_id!r} already exists")
        d.mkdir(parents=True, exist_ok=True)
        record = RunRecord(
            run_id=run_id,
            created_at=created_at or datetime.now(timezone.utc).isoformat(),
            config=config,
            status="pending",
            blind=blind,
            suite=suite,
            gold=[[rid, tag, v] for (rid, tag), v in sorted(gold.items())] if gold else None,
        )
        (d / "run.json").write_text(json.dumps(record.__dict__, ensure_ascii=False, indent=2, sort_keys=True))
        return record

    def list_runs(self) -> list[RunRecord]:
        runs = []
        for run_dir in sorted(self.root.iterdir()):
            if (run_dir / "run.json").exists():
                runs.append(self.get_run(run_dir.name))
        return runs

    def get_run(self, run_id: str) -> RunRecord:
        d = self._run_dir(run_id)
        doc = json.loads((d / "run.json").read_text())
        return RunRecord(**doc)

    def set_status(self, run_id: str, status: str) -> None:
        d = self._run_dir(run_id)
        doc = json.loads((d / "run.json").read_text())
        doc["status"] = status
        (d / "run.json").write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True))

    def append_predictions(self, run_id: str, preds: list[Prediction]) -> None:
        d = self._run_dir(run_id)
        with self._lock(run_id):
            for p in preds:
                append_log(d / "predictions.jsonl", p.__dict__)

    def predictions(self, run_id: str) -> list[Prediction]:
        d = self._run_dir(run_id)
        return [Prediction(**obj) for obj in read_log(d / "predictions.jsonl")]

    def submit_adjudication(
        self, run_id: str, record_id: str, tag: str, adjudicator_id: str, verdict: int,
        submitted_at: str | None = None,
    ) -> dict:
        if verdict not in (-1, 1):
            raise StoreError(f"verdict must be +1 or -1, got {verdict!r}")
        if tag not in CATALOG_CODES:
            raise StoreError(f"unknown tag {tag!r}")
        run = self.get_run(run_id)
        suite_keys = {(i["record_id"], i["tag"]) for i in (run.suite or [])}
        if (record_id, tag) not in suite_keys:
            raise NotInSuite(f"({record_id}, {tag}) is not in the run's suite")
        entry = {
            "record_id": record_id,
            "tag": tag,
            "adjudicator_id": adjudicator_id,
            "verdict": verdict,
            "submitted_at": submitted_at or datetime.now(timezone.utc).isoformat(),
        }
        d = self._run_dir(run_id)
        with self._lock(run_id):
            append_log(d / "adjudications.jsonl", entry)
        return entry

    def adjudications(self, run_id: str) -> list[dict]:
        d = self._run_dir(run_id)
        return read_log(d / "adjudications.jsonl")

    def effective_adjudications(self, run_id: str) -> dict[tuple[str, str, str], int]:
        """Last durably appended verdict wins per (record, tag, adjudicator)."""
        effective: dict[tuple[str, str, str], int] = {}
        for a in self.adjudications(run_id):
            effective[(a["record_id"], a["tag"], a["adjudicator_id"])] = a["verdict"]
        return effective

    def queue(self, run_id: str, adjudicator_id: str) -> list[dict]:
        """Pending suite items for one adjudicator, in suite order.  Model
        verdicts are stripped from the payload when the run is blind."""
        run = self.get_run(run_id)
        done = {
            (rid, tag) for (rid, tag, adj) in self.effective_adjudications(run_id) if adj == adjudicator_id
        }
        preds = self.predictions(run_id)
        verdicts_by_key: dict[tuple[str, str], dict[str, int | None]] = {}
        for p in preds:
            verdicts_by_key.setdefault((p.record_id, p.tag), {})[p.model] = p.predicted_value
        items = []
        for item in run.suite or []:
            key = (item["record_id"], item["tag"])
            if key in done:
                continue
            view = {k: item[k] for k in ("record_id", "tag", "rubric_prompt", "comment_text")}
            view["tag_name"] = item.get("tag_name", "")
            view["tag_definition"] = item.get("tag_definition", "")
            if not run.blind:
                view["model_verdicts"] = verdicts_by_key.get(key, {})
            items.append(view)
        return items
