"""Deterministic synthetic plate-image generation.

Renders white dot-matrix text on a black 50x120 canvas in single-line or
two-line layout, then degrades it: rotation, box blur, additive Gaussian
noise, salt-and-pepper impulse noise, applied in that order. Every image is
a pure function of (spec.seed, image index), so datasets are bit-reproducible
regardless of generation order or parallelism.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .font import GLYPH_COLS, GLYPH_ROWS, glyph_bitmap
from .image import GrayImage
from .labels import DIGITS, LETTERS, PlateFormat, PlateLabel, PlateLayout
from .manifest import DatasetManifest, ImageRecord, save_manifest

_MARGIN_PX = 2  # blank border kept around each glyph line


@dataclass(frozen=True)
class DegradeParams:
    rotation_deg: float = 0.0
    blur_radius_px: float = 0.0
    gaussian_sigma: float = 0.0  # intensity units on the 0-255 scale
    salt_pepper_density: float = 0.0

    def __post_init__(self) -> None:
        if abs(self.rotation_deg) > 5.0:
            raise ValueError("rotation_deg must lie in [-5, +5]")
        if self.blur_radius_px < 0 or self.gaussian_sigma < 0:
            raise ValueError("blur radius and gaussian sigma must be >= 0")
        if not 0.0 <= self.salt_pepper_density <= 0.5:
            raise ValueError("salt_pepper_density must lie in [0, 0.5]")


@dataclass(frozen=True)
class ForgeSpec:
    format: PlateFormat = PlateFormat()
    width_px: int = 120
    height_px: int = 50
    foreground: int = 255
    background: int = 0
    seed: int = 0
    count: int = 1
    two_line_prob: float = 0.5
    rotation_limit_deg: float = 5.0
    blur_radius_px: float = 1.0
    gaussian_sigma: float = 12.0
    salt_pepper_density: float = 0.02

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")
        if not 0.0 <= self.two_line_prob <= 1.0:
            raise ValueError("two_line_prob must lie in [0, 1]")
        min_w, min_h = minimum_canvas(self.format)
        if self.width_px < min_w or self.height_px < min_h:
            raise ValueError(
                f"canvas {self.width_px}x{self.height_px} below glyph grid minimum {min_w}x{min_h}"
            )


def minimum_canvas(fmt: PlateFormat) -> tuple[int, int]:
    """Smallest (width, height) that fits the format at unit glyph scale.

    Sized for the roomier of the two layouts so a per-image layout draw can
    never fail.
    """
    single_w = _line_width(fmt.length, 1) + 2 * _MARGIN_PX
    two_w = _line_width(max(fmt.letters, fmt.digits), 1) + 2 * _MARGIN_PX
    single_h = GLYPH_ROWS + 2 * _MARGIN_PX
    two_h = 2 * (GLYPH_ROWS + 2 * _MARGIN_PX)
    return max(single_w, two_w), max(single_h, two_h)


def _line_width(n_glyphs: int, scale: int) -> int:
    # n glyphs of 5*scale px separated by 1*scale px gaps
    return scale * ((GLYPH_COLS + 1) * n_glyphs - 1)


def random_plate_text(fmt: PlateFormat, rng: np.random.Generator) -> PlateLabel:
    """Draw a uniformly random plate string matching the format counts."""
    letters = "".join(LETTERS[i] for i in rng.integers(0, len(LETTERS), size=fmt.letters))
    digits = "".join(DIGITS[i] for i in rng.integers(0, len(DIGITS), size=fmt.digits))
    chars = letters + digits
    return PlateLabel(chars=chars, raw=chars)


def _blit_line(canvas: np.ndarray, chars: str, y0: int, band_h: int, fg: int) -> None:
    h, w = canvas.shape
    n = len(chars)
    scale = min((band_h - 2 * _MARGIN_PX) // GLYPH_ROWS, (w - 2 * _MARGIN_PX) // ((GLYPH_COLS + 1) * n - 1))
    if scale < 1:
        raise ValueError(f"band {w}x{band_h} too small for {n} glyphs")
    x = (w - _line_width(n, scale)) // 2
    y = y0 + (band_h - GLYPH_ROWS * scale) // 2
    for ch in chars:
        block = np.kron(glyph_bitmap(ch), np.ones((scale, scale), dtype=bool))
        canvas[y : y + GLYPH_ROWS * scale, x : x + GLYPH_COLS * scale][block] = fg
        x += (GLYPH_COLS + 1) * scale


def render_plate(label: PlateLabel, fmt: PlateFormat, spec: ForgeSpec) -> GrayImage:
    """Rasterize a clean (undegraded) plate.

    Single-line puts all glyphs on one baseline; two-line centers the letters
    in the upper half and the digits in the lower half.
    """
    if not fmt.matches(label.chars):
        raise ValueError(f"label {label.chars!r} does not match format {fmt.letters}L+{fmt.digits}D")
    canvas = np.full((spec.height_px, spec.width_px), spec.background, dtype=np.uint8)
    if fmt.kind is PlateLayout.SINGLE_LINE:
        _blit_line(canvas, label.chars, 0, spec.height_px, spec.foreground)
    else:
        half = spec.height_px // 2
        _blit_line(canvas, label.chars[: fmt.letters], 0, half, spec.foreground)
        _blit_line(canvas, label.chars[fmt.letters :], half, spec.height_px - half, spec.foreground)
    return GrayImage(canvas)


def _rotate_bilinear(arr: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the image center; out-of-frame samples read as 0."""
    h, w = arr.shape
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx, dy = xs - cx, ys - cy
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0

    def sample(yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
        valid = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        out = np.zeros(arr.shape, dtype=np.float64)
        out[valid] = arr[yy[valid], xx[valid]]
        return out

    top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx
    bottom = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bottom * fy


def _box_blur(arr: np.ndarray, radius_px: float) -> np.ndarray:
    r = int(round(radius_px))
    if r < 1:
        return arr
    k = 2 * r + 1
    padded = np.pad(arr.astype(np.float64), r, mode="edge")
    return sliding_window_view(padded, (k, k)).mean(axis=(2, 3))


def degrade(img: GrayImage, params: DegradeParams, rng: np.random.Generator) -> GrayImage:
    """Apply rotation, blur, Gaussian noise, then salt-and-pepper noise.

    All-zero params return the input unchanged (bit-exact identity).
    """
    arr = img.pixels.astype(np.float64)
    if params.rotation_deg != 0.0:
        arr = _rotate_bilinear(arr, params.rotation_deg)
    arr = _box_blur(arr, params.blur_radius_px)
    if params.gaussian_sigma > 0.0:
        arr = arr + rng.normal(0.0, params.gaussian_sigma, size=arr.shape)
    arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    if params.salt_pepper_density > 0.0:
        u = rng.random(size=arr.shape)
        half = params.salt_pepper_density / 2.0
        arr = arr.copy()
        arr[u < half] = 0
        arr[u >= 1.0 - half] = 255
    return GrayImage(arr)


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Per-image RNG stream derived from (dataset seed, image index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def forge_image(spec: ForgeSpec, index: int) -> tuple[PlateLabel, PlateFormat, GrayImage]:
    """Generate the index-th plate of a dataset: label, layout, degraded image."""
    rng = image_rng(spec.seed, index)
    kind = PlateLayout.TWO_LINE if rng.random() < spec.two_line_prob else PlateLayout.SINGLE_LINE
    fmt = replace(spec.format, kind=kind)
    label = random_plate_text(fmt, rng)
    clean = render_plate(label, fmt, spec)
    params = DegradeParams(
        rotation_deg=float(rng.uniform(-spec.rotation_limit_deg, spec.rotation_limit_deg)),
        blur_radius_px=spec.blur_radius_px,
        gaussian_sigma=spec.gaussian_sigma,
        salt_pepper_density=spec.salt_pepper_density,
    )
    return label, fmt, degrade(clean, params, rng)


def forge_dataset(spec: ForgeSpec, out_dir: str | Path, workers: int = 1) -> DatasetManifest:
    """Write ``spec.count`` degraded plate images plus a labeled manifest.

    Output is schedule-independent: each image depends only on
    (spec.seed, index), so any worker count produces identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def build(index: int) -> ImageRecord:
        label, fmt, img = forge_image(spec, index)
        name = f"plate_{index:05d}.png"
        try:
            img.save_png(out / name)
        except OSError as exc:
            raise OSError(f"failed writing {out / name}: {exc}") from exc
        return ImageRecord(
            id=f"plate_{index:05d}",
            path=name,
            width_px=img.width_px,
            height_px=img.height_px,
            label=label,
            tags=frozenset({"synthetic", fmt.kind.value}),
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(build, range(spec.count)))
    else:
        records = [build(i) for i in range(spec.count)]

    manifest = DatasetManifest(name="forged", records=tuple(records), seed=spec.seed)
    save_manifest(manifest, out / "manifest.jsonl")
    return manifest
