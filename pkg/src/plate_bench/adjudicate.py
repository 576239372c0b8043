"""Ground-truth production by three-annotator majority vote.

Each image is a task. Three independent submissions trigger a vote: two
identical strings win outright; three distinct strings of equal length are
resolved per position when every position has a 2-of-3 winner; anything else
goes to human review, where a reviewer's decision is recorded as an explicit
override. State is a fold over an append-only event log, so any task's final
label is replayable from its history.
"""

from __future__ import annotations

import json
import threading
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

from .labels import PlateLabel, normalize_label
from .manifest import DatasetManifest, ImageRecord

VOTERS_REQUIRED = 3


class AdjudicationError(Exception):
    pass


class TaskNotFound(AdjudicationError):
    pass


class RejectedSubmission(AdjudicationError):
    pass


class ExportBlocked(AdjudicationError):
    def __init__(self, unresolved: Sequence[str]) -> None:
        super().__init__(f"unresolved tasks block export: {', '.join(unresolved)}")
        self.unresolved = tuple(unresolved)


class TaskStatus(str, Enum):
    PENDING = "pending"
    NEEDS_REVIEW = "needs_review"
    RESOLVED = "resolved"


class VoteKind(str, Enum):
    UNANIMOUS = "unanimous"
    MAJORITY = "majority"
    CONFLICT = "conflict"


@dataclass(frozen=True)
class VoteOutcome:
    kind: VoteKind
    label: PlateLabel | None = None
    conflict_positions: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind is VoteKind.CONFLICT and self.label is not None:
            raise ValueError("conflict outcome carries no label")
        if self.kind is not VoteKind.CONFLICT and self.label is None:
            raise ValueError(f"{self.kind.value} outcome requires a label")


def vote(submissions: Sequence[PlateLabel]) -> VoteOutcome:
    """2-of-3 vote: whole strings first, then per position when lengths agree."""
    if len(submissions) != VOTERS_REQUIRED:
        raise ValueError(f"vote requires exactly {VOTERS_REQUIRED} submissions")
    strings = [s.chars for s in submissions]
    top, count = Counter(strings).most_common(1)[0]
    if count == VOTERS_REQUIRED:
        return VoteOutcome(VoteKind.UNANIMOUS, PlateLabel(top, top))
    if count == 2:
        return VoteOutcome(VoteKind.MAJORITY, PlateLabel(top, top))
    if len(set(map(len, strings))) == 1:
        resolved: list[str] = []
        conflicts: list[int] = []
        for idx, column in enumerate(zip(*strings)):
            ch, n = Counter(column).most_common(1)[0]
            if n >= 2:
                resolved.append(ch)
            else:
                conflicts.append(idx)
        if not conflicts:
            joined = "".join(resolved)
            return VoteOutcome(VoteKind.MAJORITY, PlateLabel(joined, joined))
        return VoteOutcome(VoteKind.CONFLICT, conflict_positions=tuple(conflicts))
    return VoteOutcome(VoteKind.CONFLICT)


@dataclass(frozen=True)
class AnnotationTask:
    image_id: str
    image_path: str
    submissions: Mapping[str, str]
    status: TaskStatus
    resolved_label: str | None = None
    resolved_by: str | None = None
    override: bool = False
    conflict_positions: tuple[int, ...] = ()


class _TaskState:
    __slots__ = ("record", "submissions", "status", "resolved_label", "resolved_by", "override", "conflict_positions")

    def __init__(self, record: ImageRecord) -> None:
        self.record = record
        self.submissions: dict[str, str] = {}
        self.status = TaskStatus.PENDING
        self.resolved_label: str | None = None
        self.resolved_by: str | None = None
        self.override = False
        self.conflict_positions: tuple[int, ...] = ()

    def snapshot(self) -> AnnotationTask:
        return AnnotationTask(
            image_id=self.record.id,
            image_path=self.record.path,
            submissions=MappingProxyType(dict(self.submissions)),
            status=self.status,
            resolved_label=self.resolved_label,
            resolved_by=self.resolved_by,
            override=self.override,
            conflict_positions=self.conflict_positions,
        )


class AdjudicationStore:
    """Single-writer task store. Mutations append to the event log first.

    Rebuilding a store over the same manifest and log reproduces every task
    state exactly (the log is the source of truth; votes are recomputed).
    """

    def __init__(self, manifest: DatasetManifest, log_path: str | Path | None = None) -> None:
        self.manifest = manifest
        self._tasks: dict[str, _TaskState] = {
            rec.id: _TaskState(rec) for rec in manifest.records
        }
        self._order = [rec.id for rec in manifest.records]
        self._lock = threading.RLock()
        self._log_path = Path(log_path) if log_path is not None else None
        if self._log_path is not None and self._log_path.exists():
            for line in self._log_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._apply(json.loads(line))

    # -- event handling ----------------------------------------------------

    def _append_event(self, event: dict) -> None:
        if self._log_path is None:
            return
        with self._log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        state = self._tasks[event["task_id"]]
        if kind == "submit":
            state.submissions[event["annotator_id"]] = event["label"]
            if len(state.submissions) == VOTERS_REQUIRED:
                outcome = vote([PlateLabel(s, s) for s in state.submissions.values()])
                if outcome.kind is VoteKind.CONFLICT:
                    state.status = TaskStatus.NEEDS_REVIEW
                    state.conflict_positions = outcome.conflict_positions
                else:
                    state.status = TaskStatus.RESOLVED
                    state.resolved_label = outcome.label.chars
        elif kind == "override":
            state.status = TaskStatus.RESOLVED
            state.resolved_label = event["label"]
            state.resolved_by = event["reviewer_id"]
            state.override = True
        else:
            raise AdjudicationError(f"unknown event kind {kind!r}")

    # -- queries -----------------------------------------------------------

    def task(self, task_id: str) -> AnnotationTask:
        with self._lock:
            state = self._tasks.get(task_id)
            if state is None:
                raise TaskNotFound(task_id)
            return state.snapshot()

    def tasks(self, status: TaskStatus | None = None) -> list[AnnotationTask]:
        with self._lock:
            snaps = [self._tasks[tid].snapshot() for tid in self._order]
        if status is None:
            return snaps
        return [t for t in snaps if t.status is status]

    def next_task(self, annotator_id: str) -> AnnotationTask | None:
        """First pending task this annotator has not labeled, in manifest order."""
        with self._lock:
            for tid in self._order:
                state = self._tasks[tid]
                if state.status is TaskStatus.PENDING and annotator_id not in state.submissions:
                    return state.snapshot()
        return None

    # -- mutations ----------------------------------------------------------

    def submit_label(self, task_id: str, annotator_id: str, label_text: str) -> AnnotationTask:
        if not annotator_id:
            raise RejectedSubmission("annotator id must be non-empty")
        label = normalize_label(label_text)
        if not label.chars:
            raise RejectedSubmission(f"label {label_text!r} normalizes to empty")
        with self._lock:
            state = self._tasks.get(task_id)
            if state is None:
                raise TaskNotFound(task_id)
            if state.status is not TaskStatus.PENDING:
                raise RejectedSubmission(f"task {task_id} is {state.status.value}, not open for labels")
            if annotator_id in state.submissions:
                raise RejectedSubmission(f"annotator {annotator_id!r} already labeled task {task_id}")
            event = {
                "event": "submit",
                "task_id": task_id,
                "annotator_id": annotator_id,
                "label": label.chars,
            }
            self._append_event(event)
            self._apply(event)
            return state.snapshot()

    def resolve(self, task_id: str, label_text: str, reviewer_id: str) -> AnnotationTask:
        label = normalize_label(label_text)
        if not label.chars:
            raise RejectedSubmission(f"label {label_text!r} normalizes to empty")
        with self._lock:
            state = self._tasks.get(task_id)
            if state is None:
                raise TaskNotFound(task_id)
            if state.status is not TaskStatus.NEEDS_REVIEW:
                raise RejectedSubmission(
                    f"task {task_id} is {state.status.value}; only needs_review tasks can be resolved"
                )
            event = {
                "event": "override",
                "task_id": task_id,
                "reviewer_id": reviewer_id,
                "label": label.chars,
            }
            self._append_event(event)
            self._apply(event)
            return state.snapshot()

    # -- export --------------------------------------------------------------

    def export_manifest(self) -> DatasetManifest:
        with self._lock:
            unresolved = [
                tid for tid in self._order if self._tasks[tid].status is not TaskStatus.RESOLVED
            ]
            if unresolved:
                raise ExportBlocked(unresolved)
            records = []
            for tid in self._order:
                state = self._tasks[tid]
                label = PlateLabel(state.resolved_label, state.resolved_label)
                records.append(
                    ImageRecord(
                        id=state.record.id,
                        path=state.record.path,
                        width_px=state.record.width_px,
                        height_px=state.record.height_px,
                        label=label,
                        tags=state.record.tags | {"adjudicated"},
                    )
                )
        return DatasetManifest(
            name=f"{self.manifest.name}-adjudicated",
            records=tuple(records),
            seed=self.manifest.seed,
        )
