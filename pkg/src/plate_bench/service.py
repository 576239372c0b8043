"""Local HTTP service exposing the adjudication store to annotator UIs.

Annotator blindness is enforced here: task responses carry only the
requesting annotator's own submission. The full submission set appears only
in review views of tasks that already reached needs_review.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, HTMLResponse, PlainTextResponse
from pydantic import BaseModel

from .adjudicate import (
    AdjudicationStore,
    AnnotationTask,
    ExportBlocked,
    RejectedSubmission,
    TaskNotFound,
    TaskStatus,
)
from .manifest import dumps_manifest

_FALLBACK_PAGE = """<!doctype html>
<html><head><title>plate-bench adjudication</title></head>
<body><h1>plate-bench adjudication service</h1>
<p>No annotator UI is built. The JSON API is live: try
<code>GET /tasks/next?annotator=you</code>.</p></body></html>
"""


class LabelBody(BaseModel):
    annotator: str
    label: str


class ResolveBody(BaseModel):
    reviewer: str
    label: str


def _task_view(task: AnnotationTask, annotator: str | None) -> dict:
    """Blind view: never includes other annotators' submissions."""
    return {
        "id": task.image_id,
        "image_url": f"/images/{task.image_path}",
        "status": task.status.value,
        "my_submission": task.submissions.get(annotator) if annotator else None,
        "submission_count": len(task.submissions),
    }


def _review_view(task: AnnotationTask) -> dict:
    return {
        "id": task.image_id,
        "image_url": f"/images/{task.image_path}",
        "status": task.status.value,
        "submissions": dict(task.submissions),
        "conflict_positions": list(task.conflict_positions),
    }


def create_app(
    store: AdjudicationStore,
    images_dir: str | Path,
    frontend_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="plate-bench adjudication")
    images_root = Path(images_dir).resolve()
    frontend_root = Path(frontend_dir).resolve() if frontend_dir else None

    @app.get("/tasks/next")
    def next_task(annotator: str = Query(min_length=1)) -> dict:
        task = store.next_task(annotator)
        return {"task": None if task is None else _task_view(task, annotator)}

    @app.post("/tasks/{task_id}/label")
    def submit_label(task_id: str, body: LabelBody) -> dict:
        try:
            task = store.submit_label(task_id, body.annotator, body.label)
        except TaskNotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except RejectedSubmission as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"task": _task_view(task, body.annotator)}

    @app.get("/tasks")
    def list_tasks(status: str | None = None) -> dict:
        if status is None:
            return {"tasks": [_task_view(t, None) for t in store.tasks()]}
        try:
            wanted = TaskStatus(status)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"unknown status {status!r}") from exc
        tasks = store.tasks(wanted)
        if wanted is TaskStatus.NEEDS_REVIEW:
            return {"tasks": [_review_view(t) for t in tasks]}
        return {"tasks": [_task_view(t, None) for t in tasks]}

    @app.post("/tasks/{task_id}/resolve")
    def resolve(task_id: str, body: ResolveBody) -> dict:
        try:
            task = store.resolve(task_id, body.label, body.reviewer)
        except TaskNotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except RejectedSubmission as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"task": _review_view(task)}

    @app.get("/export")
    def export() -> PlainTextResponse:
        try:
            manifest = store.export_manifest()
        except ExportBlocked as exc:
            raise HTTPException(
                status_code=409,
                detail={"error": "unresolved tasks", "unresolved": list(exc.unresolved)},
            ) from exc
        return PlainTextResponse(dumps_manifest(manifest), media_type="text/plain; charset=utf-8")

    @app.get("/images/{rel_path:path}")
    def image(rel_path: str) -> FileResponse:
        target = (images_root / rel_path).resolve()
        if not str(target).startswith(str(images_root)) or not target.is_file():
            raise HTTPException(status_code=404, detail="image not found")
        return FileResponse(target)

    @app.get("/", response_class=HTMLResponse)
    def index() -> str:
        if frontend_root is not None:
            page = frontend_root / "index.html"
            if page.is_file():
                return page.read_text(encoding="utf-8")
        return _FALLBACK_PAGE

    @app.get("/static/{rel_path:path}")
    def static(rel_path: str) -> FileResponse:
        if frontend_root is None:
            raise HTTPException(status_code=404, detail="no frontend built")
        target = (frontend_root / rel_path).resolve()
        if not str(target).startswith(str(frontend_root)) or not target.is_file():
            raise HTTPException(status_code=404, detail="not found")
        return FileResponse(target)

    return app
