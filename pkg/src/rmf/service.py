"""HTTP API over the run store: queue, adjudications, and reports.

Versioned under /api/v1; the adjudication UI is served from the same process
so no cross-origin setup is needed.  Adjudicator identity is a bearer label,
suitable for trusted classroom/research settings only.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, HTMLResponse, PlainTextResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .evaluation import (
    AgreementReport,
    ComparisonSuite,
    MethodKind,
    SuiteItem,
    agreement_counts,
    build_agreement_report,
    compare_methods,
    render_csv,
    render_json,
    render_markdown,
)
from .store import DuplicateRun, NotInSuite, RunStore, StoreError, UnknownRun

from .catalog import CATALOG_CODES


def run_report_table(store: RunStore, run_id: str) -> tuple[dict, dict]:
    """Merge stored predictions and adjudications into a comparison table.

    Returns (table, metadata).  Adjudicator columns appear only for
    adjudicators with at least one stored verdict.
    """
    run = store.get_run(run_id)
    gold = {(rid, tag): v for rid, tag, v in (run.gold or [])}
    suite = None
    if run.suite:
        suite = ComparisonSuite(
            items=[SuiteItem(i["record_id"], i["tag"], i["gold_value"]) for i in run.suite],
            seed=run.config.get("seed", 0),
        )

    groups: dict[tuple[str, str], list] = {}
    for p in store.predictions(run_id):
        groups.setdefault((p.model, p.method), []).append(p)

    method_order = {"direct": 0, "definitions": 1, "finetuned": 2}
    reports: list[AgreementReport] = []
    for (model, method), preds in sorted(groups.items(), key=lambda kv: (kv[0][0], method_order.get(kv[0][1], 9))):
        kind = MethodKind(method, model if method == "finetuned" else None)
        usable_suite = suite
        if suite is not None:
            try:
                agreement_counts(preds, gold, suite)
            except ValueError:
                usable_suite = None
        reports.append(build_agreement_report(preds, gold, model, kind, usable_suite))

    adjudicator_counts: dict[str, dict[str, tuple[int, int]]] = {}
    for (rid, tag, adjudicator), verdict in store.effective_adjudications(run_id).items():
        counts = adjudicator_counts.setdefault(adjudicator, {t: (0, 0) for t in CATALOG_CODES})
        agreed, done = counts[tag]
        counts[tag] = (agreed + int(verdict == gold.get((rid, tag))), done + 1)
    for counts in adjudicator_counts.values():
        for tag in [t for t, (a, d) in counts.items() if d == 0]:
            del counts[tag]

    if not reports and not adjudicator_counts:
        raise StoreError(f"run {run_id!r} has no predictions or adjudications to report")

    if reports:
        table = compare_methods(reports, adjudicator_counts)
    else:
        table = {"models": [], "methods": [], "cells": {}, "per_tag_columns": dict(sorted(adjudicator_counts.items()))}
    metadata = {"run_id": run_id, "seed": run.config.get("seed"), "manifest_hash": run.config.get("manifest_hash")}
    metadata = {k: v for k, v in metadata.items() if v is not None}
    return table, metadata


def render_run_report(store: RunStore, run_id: str, format: str) -> tuple[str, str]:
    """(body, media_type) for one run's report in json, md, or csv."""
    table, metadata = run_report_table(store, run_id)
    if format == "json":
        return render_json(table, run_id=run_id, metadata=metadata), "application/json"
    if format == "md":
        return render_markdown(table, metadata=metadata), "text/markdown"
    if format == "csv":
        return render_csv(table), "text/csv"
    raise ValueError(f"unknown report format {format!r}")


class AdjudicationIn(BaseModel):
    record_id: str
    tag: str
    adjudicator_id: str
    verdict: int


_FALLBACK_PAGE = """<!doctype html>
<html><head><title>rmf adjudication</title></head>
<body><h1>rmf service</h1>
<p>No UI build found. The API lives under <code>/api/v1</code>.</p>
</body></html>
"""


def create_app(store: RunStore, frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="rmf adjudication service")
    frontend = Path(frontend_dir) if frontend_dir else None

    @app.get("/api/v1/runs")
    def list_runs():
        return {
            "runs": [
                {"run_id": r.run_id, "created_at": r.created_at, "status": r.status, "blind": r.blind}
                for r in store.list_runs()
            ]
        }

    @app.get("/api/v1/runs/{run_id}")
    def get_run(run_id: str):
        try:
            r = store.get_run(run_id)
        except UnknownRun:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        return {
            "run_id": r.run_id,
            "created_at": r.created_at,
            "status": r.status,
            "blind": r.blind,
            "config": r.config,
            "suite_size": len(r.suite or []),
        }

    @app.get("/api/v1/runs/{run_id}/queue")
    def get_queue(run_id: str, adjudicator: str = Query(...)):
        try:
            items = store.queue(run_id, adjudicator)
            total = len(store.get_run(run_id).suite or [])
        except UnknownRun:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        return {"items": items, "done": total - len(items), "total": total}

    @app.post("/api/v1/runs/{run_id}/adjudications")
    def post_adjudication(run_id: str, body: AdjudicationIn):
        try:
            entry = store.submit_adjudication(
                run_id, body.record_id, body.tag, body.adjudicator_id, body.verdict
            )
        except UnknownRun:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        except NotInSuite as e:
            raise HTTPException(status_code=400, detail=str(e))
        except StoreError as e:
            raise HTTPException(status_code=422, detail=str(e))
        return {"ok": True, "adjudication": entry}

    @app.get("/api/v1/runs/{run_id}/report")
    def get_report(run_id: str, format: str = Query("json")):
        try:
            body, media_type = render_run_report(store, run_id, format)
        except UnknownRun:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e))
        except StoreError as e:
            raise HTTPException(status_code=409, detail=str(e))
        if format == "json":
            return Response(content=body, media_type=media_type)
        return PlainTextResponse(content=body, media_type=media_type)

    if frontend and frontend.is_dir():
        app.mount("/static", StaticFiles(directory=str(frontend)), name="static")

        @app.get("/", response_class=FileResponse)
        def index():
            return FileResponse(str(frontend / "index.html"))

    else:

        @app.get("/", response_class=HTMLResponse)
        def index_fallback():
            return HTMLResponse(_FALLBACK_PAGE)

    return app
