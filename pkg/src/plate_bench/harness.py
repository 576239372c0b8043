"""Experiment orchestration over (dataset x prompts x backends) matrices.

Runs write one line-delimited record per cell, keyed by
(image_id, backend_id, prompt_id). The run file is append-only and doubles
as the resume state: rerunning a plan issues queries only for missing cells.
Backend failures become error records (scored as zero matches), never
dropped cells.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from .backends import (
    Backend,
    BackendError,
    CachedBackend,
    ResponseCache,
    VisionQuery,
    extract_plate_token,
)
from .labels import PlateLabel
from .manifest import DatasetManifest, load_manifest
from .metrics import EvalReport, PlateEval, aggregate, eval_plate, round_percent
from .prompts import PromptSpec


class PlanError(ValueError):
    """Plan references that cannot be resolved; raised before any query."""


@dataclass(frozen=True)
class ExperimentPlan:
    manifest: str
    prompts: tuple[str, ...]
    backends: tuple[str, ...]
    concurrency: int = 4
    cache_policy: str = "use"

    def __post_init__(self) -> None:
        if not self.prompts or not self.backends:
            raise PlanError("plan needs at least one prompt and one backend")
        if self.concurrency < 1:
            raise PlanError("concurrency must be >= 1")
        if self.cache_policy not in ("use", "refresh"):
            raise PlanError(f"unknown cache policy {self.cache_policy!r}")


def load_plan(path: str | Path) -> ExperimentPlan:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return ExperimentPlan(
            manifest=obj["manifest"],
            prompts=tuple(obj["prompts"]),
            backends=tuple(obj["backends"]),
            concurrency=obj.get("concurrency", 4),
            cache_policy=obj.get("cache_policy", "use"),
        )
    except KeyError as exc:
        raise PlanError(f"{path}: plan missing field {exc}") from exc


def save_plan(plan: ExperimentPlan, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(
            {
                "manifest": plan.manifest,
                "prompts": list(plan.prompts),
                "backends": list(plan.backends),
                "concurrency": plan.concurrency,
                "cache_policy": plan.cache_policy,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )


@dataclass(frozen=True)
class RunRecord:
    image_id: str
    backend_id: str
    prompt_id: str
    reply_text: str
    latency_ms: int
    cached: bool
    prediction: str
    truth: str
    matched_chars: int
    truth_len: int
    exact: bool
    error: str | None
    timestamp: str
    width_px: int
    height_px: int

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.image_id, self.backend_id, self.prompt_id)

    def recompute_eval(self) -> PlateEval:
        return eval_plate(
            PlateLabel(self.truth, self.truth), PlateLabel(self.prediction, self.prediction)
        )

    def to_eval(self) -> PlateEval:
        return PlateEval(
            truth=PlateLabel(self.truth, self.truth),
            pred=PlateLabel(self.prediction, self.prediction),
            matched_chars=self.matched_chars,
            truth_len=self.truth_len,
            exact=self.exact,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "image_id": self.image_id,
                "backend_id": self.backend_id,
                "prompt_id": self.prompt_id,
                "reply_text": self.reply_text,
                "latency_ms": self.latency_ms,
                "cached": self.cached,
                "prediction": self.prediction,
                "truth": self.truth,
                "matched_chars": self.matched_chars,
                "truth_len": self.truth_len,
                "exact": self.exact,
                "error": self.error,
                "timestamp": self.timestamp,
                "width_px": self.width_px,
                "height_px": self.height_px,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "RunRecord":
        obj = json.loads(line)
        return RunRecord(**obj)


def load_run_records(path: str | Path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(RunRecord.from_json(line))
    return records


class _RunWriter:
    """Serialized append-only sink so records never interleave partially."""

    def __init__(self, path: Path) -> None:
        self._fh = path.open("a", encoding="utf-8")
        self._lock = threading.Lock()

    def write(self, record: RunRecord) -> None:
        with self._lock:
            self._fh.write(record.to_json() + "\n")
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def validate_plan(
    plan: ExperimentPlan,
    backends: Mapping[str, Backend],
    prompts: Mapping[str, PromptSpec],
) -> DatasetManifest:
    missing_b = [b for b in plan.backends if b not in backends]
    missing_p = [p for p in plan.prompts if p not in prompts]
    if missing_b or missing_p:
        raise PlanError(
            f"unresolvable plan ids (backends={missing_b}, prompts={missing_p})"
        )
    manifest = load_manifest(plan.manifest)
    unlabeled = [rec.id for rec in manifest.records if rec.label is None]
    if unlabeled:
        raise PlanError(f"manifest records lack ground-truth labels: {unlabeled[:5]}")
    return manifest


def run_experiment(
    plan: ExperimentPlan,
    backends: Mapping[str, Backend],
    prompts: Mapping[str, PromptSpec],
    run_path: str | Path,
    cache: ResponseCache | None = None,
) -> list[RunRecord]:
    """Fill every (image, prompt, backend) cell, resuming from the run file.

    Returns the complete record set (previously done plus newly produced),
    sorted by key. Per-cell backend failures are recorded with their error
    kind and an empty prediction; any other exception aborts the run after
    in-flight records are flushed, leaving the file resumable.
    """
    manifest = validate_plan(plan, backends, prompts)
    manifest_dir = Path(plan.manifest).parent

    effective: dict[str, Backend | CachedBackend] = {}
    for backend_id in plan.backends:
        backend = backends[backend_id]
        effective[backend_id] = (
            CachedBackend(backend, cache, plan.cache_policy) if cache is not None else backend
        )

    run_path = Path(run_path)
    done = {rec.key for rec in load_run_records(run_path)}
    cells = [
        (rec, prompt_id, backend_id)
        for rec in manifest.records
        for prompt_id in plan.prompts
        for backend_id in plan.backends
        if (rec.id, backend_id, prompt_id) not in done
    ]

    image_bytes: dict[str, bytes] = {}
    bytes_lock = threading.Lock()

    def load_bytes(rel_path: str) -> bytes:
        with bytes_lock:
            if rel_path not in image_bytes:
                image_bytes[rel_path] = (manifest_dir / rel_path).read_bytes()
            return image_bytes[rel_path]

    writer = _RunWriter(run_path)

    def run_cell(cell) -> None:
        rec, prompt_id, backend_id = cell
        prompt = prompts[prompt_id]
        backend = effective[backend_id]
        query = VisionQuery(image=load_bytes(rec.path), prompt=prompt.text)
        reply_text, latency, cached, error = "", 0, False, None
        prediction = PlateLabel("", "")
        try:
            reply = backend.query(query)
            reply_text, latency, cached = reply.text, reply.latency_ms, reply.cached
            prediction = extract_plate_token(reply_text, prompt.expected_format)
        except BackendError as exc:
            error = exc.kind
        ev = eval_plate(rec.label, prediction)
        writer.write(
            RunRecord(
                image_id=rec.id,
                backend_id=backend_id,
                prompt_id=prompt_id,
                reply_text=reply_text,
                latency_ms=latency,
                cached=cached,
                prediction=prediction.chars,
                truth=rec.label.chars,
                matched_chars=ev.matched_chars,
                truth_len=ev.truth_len,
                exact=ev.exact,
                error=error,
                timestamp=_now_iso(),
                width_px=rec.width_px,
                height_px=rec.height_px,
            )
        )

    try:
        if plan.concurrency == 1:
            for cell in cells:
                run_cell(cell)
        else:
            with ThreadPoolExecutor(max_workers=plan.concurrency) as pool:
                futures = [pool.submit(run_cell, cell) for cell in cells]
                done_set, _ = wait(futures, return_when=FIRST_EXCEPTION)
                for fut in done_set:
                    fut.result()  # re-raise the first worker failure
    finally:
        writer.close()

    return sorted(load_run_records(run_path), key=lambda r: r.key)


def reports_by_backend(records: Sequence[RunRecord]) -> dict[str, EvalReport]:
    """Aggregate records per backend (across whatever prompts they used)."""
    groups: dict[str, list[PlateEval]] = {}
    for rec in records:
        groups.setdefault(rec.backend_id, []).append(rec.recompute_eval())
    return {backend_id: aggregate(evals) for backend_id, evals in sorted(groups.items())}


def reports_by_prompt(records: Sequence[RunRecord]) -> dict[str, EvalReport]:
    groups: dict[str, list[PlateEval]] = {}
    for rec in records:
        groups.setdefault(rec.prompt_id, []).append(rec.recompute_eval())
    return {prompt_id: aggregate(evals) for prompt_id, evals in sorted(groups.items())}


def verify_records(records: Sequence[RunRecord]) -> None:
    """Check stored eval fields against recomputation; raises on drift."""
    for rec in records:
        ev = rec.recompute_eval()
        if (ev.matched_chars, ev.truth_len, ev.exact) != (
            rec.matched_chars,
            rec.truth_len,
            rec.exact,
        ):
            raise ValueError(
                f"record {rec.key} eval drift: stored "
                f"({rec.matched_chars},{rec.truth_len},{rec.exact}) vs recomputed "
                f"({ev.matched_chars},{ev.truth_len},{ev.exact})"
            )


def prompt_sensitivity(
    plan_manifest: str,
    backend: Backend,
    prompt_specs: Sequence[PromptSpec],
    run_path: str | Path,
    concurrency: int = 4,
    cache: ResponseCache | None = None,
) -> dict[str, EvalReport]:
    """One report per prompt over the identical image set."""
    if len(prompt_specs) < 2:
        raise PlanError("prompt sensitivity needs at least two prompts")
    plan = ExperimentPlan(
        manifest=plan_manifest,
        prompts=tuple(p.id for p in prompt_specs),
        backends=(backend.id,),
        concurrency=concurrency,
    )
    records = run_experiment(
        plan, {backend.id: backend}, {p.id: p for p in prompt_specs}, run_path, cache
    )
    return reports_by_prompt(records)


def sensitivity_table(reports: Mapping[str, EvalReport]) -> str:
    header = f"{'prompt':<12} {'plates ok':>10} {'plate acc %':>12}"
    lines = [header, "-" * len(header)]
    for prompt_id in sorted(reports):
        rep = reports[prompt_id]
        lines.append(
            f"{prompt_id:<12} {rep.plate_correct:>10} {round_percent(rep.plate_accuracy_pct, 2):>12.2f}"
        )
    return "\n".join(lines) + "\n"


def compare_backends(run_files: Sequence[str | Path]) -> dict[str, EvalReport]:
    """Combine run files into per-backend reports.

    All files must cover the same image set with identical ground truth;
    anything else indicates runs over different manifests.
    """
    baseline: dict[str, str] | None = None
    all_records: list[RunRecord] = []
    for path in run_files:
        records = load_run_records(path)
        if not records:
            raise ValueError(f"{path}: no run records")
        truth_map: dict[str, str] = {}
        for rec in records:
            truth_map.setdefault(rec.image_id, rec.truth)
            if truth_map[rec.image_id] != rec.truth:
                raise ValueError(f"{path}: conflicting truths for image {rec.image_id!r}")
        if baseline is None:
            baseline = truth_map
        elif truth_map != baseline:
            raise ValueError(f"{path}: run file covers a different manifest than the first file")
        all_records.extend(records)
    return reports_by_backend(all_records)
