"""Dataset manifests: image records bound to labels and metadata.

A manifest file is UTF-8 line-delimited JSON. The first line is a header
object carrying the dataset ``name`` and optional ``seed``; every following
line is one image record. Labels are stored as their normalized string when
``raw`` equals ``chars``, otherwise as a ``{"chars": ..., "raw": ...}``
object so save/load round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .labels import PlateLabel


class ManifestError(ValueError):
    """Malformed or inconsistent manifest content."""


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    width_px: int
    height_px: int
    label: PlateLabel | None = None
    tags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("record id must be non-empty")
        if self.width_px < 1 or self.height_px < 1:
            raise ManifestError(f"record {self.id!r}: dimensions must be >= 1")
        if self.label is not None and not self.label.chars:
            raise ManifestError(f"record {self.id!r}: ground-truth label must be non-empty")
        object.__setattr__(self, "tags", frozenset(self.tags))


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    records: tuple[ImageRecord, ...] = ()
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, record_id: str) -> ImageRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    def resolve_path(self, rec: ImageRecord, base: Path) -> Path:
        """Resolve a record's image path relative to the manifest directory."""
        return (base / rec.path).resolve()

    def with_records(self, records: Iterable[ImageRecord]) -> "DatasetManifest":
        return replace(self, records=tuple(records))


def _label_to_json(label: PlateLabel | None):
    if label is None:
        return None
    if label.raw in ("", label.chars):
        return label.chars
    return {"chars": label.chars, "raw": label.raw}


def _label_from_json(value) -> PlateLabel | None:
    if value is None:
        return None
    if isinstance(value, str):
        return PlateLabel(chars=value, raw=value)
    if isinstance(value, dict) and "chars" in value:
        return PlateLabel(chars=value["chars"], raw=value.get("raw", ""))
    raise ManifestError(f"bad label value: {value!r}")


def dumps_manifest(manifest: DatasetManifest) -> str:
    lines = [json.dumps({"name": manifest.name, "seed": manifest.seed}, sort_keys=True)]
    for rec in manifest.records:
        lines.append(
            json.dumps(
                {
                    "id": rec.id,
                    "path": rec.path,
                    "label": _label_to_json(rec.label),
                    "width_px": rec.width_px,
                    "height_px": rec.height_px,
                    "tags": sorted(rec.tags),
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(dumps_manifest(manifest), encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty manifest file (missing header line)")

    def parse_line(lineno: int, line: str) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ManifestError(f"{path}:{lineno}: expected an object")
        return obj

    header = parse_line(1, lines[0])
    if "name" not in header:
        raise ManifestError(f"{path}:1: header line missing 'name'")

    records: list[ImageRecord] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        obj = parse_line(lineno, line)
        for key in ("id", "path", "width_px", "height_px"):
            if key not in obj:
                raise ManifestError(f"{path}:{lineno}: record missing field {key!r}")
        try:
            records.append(
                ImageRecord(
                    id=obj["id"],
                    path=obj["path"],
                    width_px=int(obj["width_px"]),
                    height_px=int(obj["height_px"]),
                    label=_label_from_json(obj.get("label")),
                    tags=frozenset(obj.get("tags", ())),
                )
            )
        except (ManifestError, ValueError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc

    try:
        return DatasetManifest(name=header["name"], records=tuple(records), seed=header.get("seed"))
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
