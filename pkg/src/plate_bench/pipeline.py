"""Multi-stage recognition over single- or multi-car images.

Flow per image: detect cars, optionally filter each car by color/model
yes-no probes, detect the plate inside each surviving car crop, crop the
plate, and recognize its text. One car's failure never aborts the others.

Detector replies are parsed from two grammars: location tokens
(``<locNNNN>`` four per box, y1 x1 y2 x2 on a 0-1023 grid scaled by image
dimensions, boxes separated by ``;``) or a structured JSON fallback with
pixel x1/y1/x2/y2 fields.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .backends import Backend, BackendError, VisionQuery, extract_plate_token
from .image import GrayImage
from .labels import PlateFormat, PlateLabel
from .manifest import DatasetManifest
from .prompts import DETECT_CAR_PROMPT, DETECT_PLATE_PROMPT, RECOGNIZE_PROMPT

logger = logging.getLogger(__name__)

GRID = 1024  # location-token coordinate grid


class BoxSource(Enum):
    LOC_TOKENS = "loc-tokens"
    JSON_BOX = "json-box"


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int
    source: BoxSource = BoxSource.LOC_TOKENS

    def __post_init__(self) -> None:
        if self.x1 < 0 or self.y1 < 0 or self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(f"degenerate box ({self.x1},{self.y1},{self.x2},{self.y2})")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    class_label: str = ""


@dataclass(frozen=True)
class DetectionResult:
    boxes: tuple[Detection, ...] = ()
    diagnostics: tuple[str, ...] = ()


_LOC = re.compile(r"<loc(\d{4})>")
_JSON_BLOB = re.compile(r"\[.*\]|\{.*\}", re.DOTALL)


def _scale_to_pixels(value: int, dim: int) -> int:
    return round(value * dim / GRID)


def _scale_to_grid(value: int, dim: int) -> int:
    return min(max(round(value * GRID / dim), 0), GRID - 1)


def parse_detections(reply_text: str, image_w: int, image_h: int) -> DetectionResult:
    """Parse detector output; never raises on arbitrary text.

    Unparseable input yields an empty result with a diagnostic; degenerate
    boxes (zero area after scaling) are dropped the same way.
    """
    diagnostics: list[str] = []
    if image_w < 1 or image_h < 1:
        return DetectionResult((), ("image dimensions must be >= 1",))
    if not isinstance(reply_text, str) or not reply_text.strip():
        return DetectionResult((), ("empty detector reply",))

    detections: list[Detection] = []
    saw_tokens = False
    for segment in reply_text.split(";"):
        matches = list(_LOC.finditer(segment))
        if not matches:
            continue
        saw_tokens = True
        if len(matches) != 4:
            diagnostics.append(f"expected 4 location tokens, got {len(matches)}: {segment.strip()[:60]!r}")
            continue
        vals = [int(m.group(1)) for m in matches]
        if any(v >= GRID for v in vals):
            diagnostics.append(f"location token out of grid range: {segment.strip()[:60]!r}")
            continue
        gy1, gx1, gy2, gx2 = vals
        x1, y1 = _scale_to_pixels(gx1, image_w), _scale_to_pixels(gy1, image_h)
        x2, y2 = _scale_to_pixels(gx2, image_w), _scale_to_pixels(gy2, image_h)
        label = segment[matches[-1].end() :].strip()
        if x2 <= x1 or y2 <= y1:
            diagnostics.append(f"dropped degenerate box ({x1},{y1},{x2},{y2})")
            continue
        detections.append(
            Detection(BoundingBox(x1, y1, x2, y2, BoxSource.LOC_TOKENS), label)
        )
    if saw_tokens:
        return DetectionResult(tuple(detections), tuple(diagnostics))

    payload = None
    try:
        payload = json.loads(reply_text)
    except json.JSONDecodeError:
        blob = _JSON_BLOB.search(reply_text)
        if blob:
            try:
                payload = json.loads(blob.group(0))
            except json.JSONDecodeError:
                payload = None
    if payload is None:
        return DetectionResult((), tuple(diagnostics) + ("no detections parsed",))
    if isinstance(payload, Mapping):
        payload = [payload]
    if not isinstance(payload, list):
        return DetectionResult((), tuple(diagnostics) + ("JSON payload is not a box list",))
    for entry in payload:
        if not isinstance(entry, Mapping) or not all(k in entry for k in ("x1", "y1", "x2", "y2")):
            diagnostics.append(f"skipped non-box JSON entry: {str(entry)[:60]}")
            continue
        try:
            x1 = max(0, int(round(float(entry["x1"]))))
            y1 = max(0, int(round(float(entry["y1"]))))
            x2 = min(image_w, int(round(float(entry["x2"]))))
            y2 = min(image_h, int(round(float(entry["y2"]))))
        except (TypeError, ValueError):
            diagnostics.append(f"non-numeric box fields: {str(entry)[:60]}")
            continue
        if x2 <= x1 or y2 <= y1:
            diagnostics.append(f"dropped degenerate box ({x1},{y1},{x2},{y2})")
            continue
        label = entry.get("label") or entry.get("class") or ""
        detections.append(
            Detection(BoundingBox(x1, y1, x2, y2, BoxSource.JSON_BOX), str(label))
        )
    return DetectionResult(tuple(detections), tuple(diagnostics))


def encode_detections(detections: Sequence[Detection], image_w: int, image_h: int) -> str:
    """Inverse of the location-token grammar (used for round-trip checks)."""
    parts = []
    for det in detections:
        b = det.box
        tokens = (
            f"<loc{_scale_to_grid(b.y1, image_h):04d}>"
            f"<loc{_scale_to_grid(b.x1, image_w):04d}>"
            f"<loc{_scale_to_grid(b.y2, image_h):04d}>"
            f"<loc{_scale_to_grid(b.x2, image_w):04d}>"
        )
        parts.append(f"{tokens} {det.class_label}".rstrip())
    return " ; ".join(parts)


def crop_bounds(
    image_w: int, image_h: int, box: BoundingBox, pad_frac: float = 0.0
) -> tuple[int, int, int, int]:
    """Box expanded by pad_frac of its own size per side, clamped to the image."""
    pad_x = pad_frac * box.width
    pad_y = pad_frac * box.height
    x1 = max(0, int(math.floor(box.x1 - pad_x)))
    y1 = max(0, int(math.floor(box.y1 - pad_y)))
    x2 = min(image_w, int(math.ceil(box.x2 + pad_x)))
    y2 = min(image_h, int(math.ceil(box.y2 + pad_y)))
    return x1, y1, x2, y2


def crop(image: GrayImage, box: BoundingBox, pad_frac: float = 0.0) -> GrayImage:
    if box.x2 > image.width_px or box.y2 > image.height_px:
        raise ValueError(
            f"box ({box.x1},{box.y1},{box.x2},{box.y2}) exceeds image "
            f"{image.width_px}x{image.height_px}"
        )
    x1, y1, x2, y2 = crop_bounds(image.width_px, image.height_px, box, pad_frac)
    return GrayImage(image.pixels[y1:y2, x1:x2].copy())


@dataclass(frozen=True)
class AttributeFilter:
    color: str | None = None
    model: str | None = None

    def __post_init__(self) -> None:
        if not self.color and not self.model:
            raise ValueError("an active filter needs a color and/or a model")

    def prompts(self) -> tuple[str, ...]:
        out = []
        if self.color:
            out.append(f"Is this car {self.color}?")
        if self.model:
            out.append(f"Is this car {self.model}?")
        return tuple(out)


_YES_NO = re.compile(r"[^a-z]*(yes|no)\b", re.IGNORECASE)


def check_attribute(backend: Backend, car_crop: GrayImage, filt: AttributeFilter) -> bool:
    """Conjunction of yes/no attribute probes; anything non-affirmative is False.

    Ambiguous replies exclude the car (a false inclusion would corrupt a
    targeted run), with a warning logged.
    """
    image_bytes = car_crop.to_png_bytes()
    for prompt in filt.prompts():
        reply = backend.query(VisionQuery(image=image_bytes, prompt=prompt))
        m = _YES_NO.match(reply.text.strip())
        if m is None:
            logger.warning("attribute probe %r got non-yes/no reply %r", prompt, reply.text[:60])
            return False
        if m.group(1).lower() != "yes":
            return False
    return True


class Stage(Enum):
    DETECT_CARS = "detect-cars"
    ATTRIBUTE_FILTER = "attribute-filter"
    DETECT_PLATE = "detect-plate"
    RECOGNIZE = "recognize"


@dataclass(frozen=True)
class CarOutcome:
    car_box: BoundingBox
    passed_filter: bool
    plate_box: BoundingBox | None = None
    plate_label: PlateLabel | None = None
    stage_failed: Stage | None = None

    def __post_init__(self) -> None:
        if self.plate_label is not None and self.plate_box is None:
            raise ValueError("plate_label requires plate_box")
        if self.plate_box is not None and not self.passed_filter:
            raise ValueError("plate_box requires passed_filter")


@dataclass(frozen=True)
class PipelineResult:
    image_id: str
    per_car: tuple[CarOutcome, ...] = ()
    diagnostics: tuple[str, ...] = ()

    @property
    def plate_labels(self) -> tuple[PlateLabel, ...]:
        return tuple(c.plate_label for c in self.per_car if c.plate_label is not None)


def run_pipeline(
    backend_detect: Backend,
    backend_recognize: Backend,
    image: GrayImage,
    image_id: str = "",
    filt: AttributeFilter | None = None,
    pad_frac: float = 0.05,
    expected_format: PlateFormat | None = None,
) -> PipelineResult:
    diagnostics: list[str] = []
    try:
        reply = backend_detect.query(
            VisionQuery(image=image.to_png_bytes(), prompt=DETECT_CAR_PROMPT)
        )
    except BackendError as exc:
        return PipelineResult(image_id, (), (f"{Stage.DETECT_CARS.value}: {exc.kind}: {exc}",))
    cars = parse_detections(reply.text, image.width_px, image.height_px)
    diagnostics.extend(cars.diagnostics)

    outcomes: list[CarOutcome] = []
    for det in cars.boxes:
        outcomes.append(
            _run_car(
                backend_detect,
                backend_recognize,
                image,
                det.box,
                filt,
                pad_frac,
                expected_format,
                diagnostics,
            )
        )
    return PipelineResult(image_id, tuple(outcomes), tuple(diagnostics))


def _run_car(
    backend_detect: Backend,
    backend_recognize: Backend,
    image: GrayImage,
    car_box: BoundingBox,
    filt: AttributeFilter | None,
    pad_frac: float,
    expected_format: PlateFormat | None,
    diagnostics: list[str],
) -> CarOutcome:
    car_crop = crop(image, car_box, pad_frac)
    cx1, cy1, _, _ = crop_bounds(image.width_px, image.height_px, car_box, pad_frac)

    if filt is not None:
        try:
            if not check_attribute(backend_detect, car_crop, filt):
                return CarOutcome(car_box, passed_filter=False)
        except BackendError as exc:
            diagnostics.append(f"{Stage.ATTRIBUTE_FILTER.value}: {exc.kind}: {exc}")
            return CarOutcome(car_box, passed_filter=False, stage_failed=Stage.ATTRIBUTE_FILTER)

    try:
        reply = backend_detect.query(
            VisionQuery(image=car_crop.to_png_bytes(), prompt=DETECT_PLATE_PROMPT)
        )
    except BackendError as exc:
        diagnostics.append(f"{Stage.DETECT_PLATE.value}: {exc.kind}: {exc}")
        return CarOutcome(car_box, passed_filter=True, stage_failed=Stage.DETECT_PLATE)
    plates = parse_detections(reply.text, car_crop.width_px, car_crop.height_px)
    diagnostics.extend(plates.diagnostics)
    if not plates.boxes:
        return CarOutcome(car_box, passed_filter=True, stage_failed=Stage.DETECT_PLATE)

    local = plates.boxes[0].box
    plate_box = BoundingBox(
        cx1 + local.x1, cy1 + local.y1, cx1 + local.x2, cy1 + local.y2, local.source
    )
    plate_crop = crop(car_crop, local, pad_frac)
    try:
        reply = backend_recognize.query(
            VisionQuery(image=plate_crop.to_png_bytes(), prompt=RECOGNIZE_PROMPT)
        )
    except BackendError as exc:
        diagnostics.append(f"{Stage.RECOGNIZE.value}: {exc.kind}: {exc}")
        return CarOutcome(car_box, passed_filter=True, plate_box=plate_box, stage_failed=Stage.RECOGNIZE)
    label = extract_plate_token(reply.text, expected_format)
    return CarOutcome(car_box, passed_filter=True, plate_box=plate_box, plate_label=label)


@dataclass(frozen=True)
class MultiCarReport:
    images_total: int
    images_all_correct: int
    plates_total: int
    plates_correct: int

    @property
    def image_accuracy_pct(self) -> float:
        return 100.0 * self.images_all_correct / self.images_total

    @property
    def plate_accuracy_pct(self) -> float:
        return 100.0 * self.plates_correct / self.plates_total


def eval_multicar(results: Sequence[PipelineResult], manifest: DatasetManifest) -> MultiCarReport:
    """All-or-nothing image counter plus a per-plate counter.

    Ground truth for an image with several plates is several manifest records
    sharing one ``path``; results are keyed to that path via
    ``PipelineResult.image_id``. An image counts as correct only when every
    truth plate was recognized exactly; each recognized truth plate bumps the
    plate counter.
    """
    truth_by_image: dict[str, list[str]] = {}
    for rec in manifest.records:
        if rec.label is None:
            raise ValueError(f"manifest record {rec.id!r} lacks a ground-truth label")
        truth_by_image.setdefault(rec.path, []).append(rec.label.chars)

    result_ids = [r.image_id for r in results]
    if sorted(result_ids) != sorted(truth_by_image):
        missing = set(truth_by_image) - set(result_ids)
        extra = set(result_ids) - set(truth_by_image)
        raise ValueError(
            f"results do not match manifest images (missing={sorted(missing)}, extra={sorted(extra)})"
        )

    images_correct = 0
    plates_correct = 0
    plates_total = 0
    for result in results:
        truths = Counter(truth_by_image[result.image_id])
        preds = Counter(label.chars for label in result.plate_labels)
        matched = sum(min(count, preds[chars]) for chars, count in truths.items())
        plates_total += sum(truths.values())
        plates_correct += matched
        if matched == sum(truths.values()):
            images_correct += 1
    return MultiCarReport(
        images_total=len(results),
        images_all_correct=images_correct,
        plates_total=plates_total,
        plates_correct=plates_correct,
    )
