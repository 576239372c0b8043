"""8-bit grayscale image container and PNG codec helpers."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class GrayImage:
    """Row-major uint8 intensity raster. Treated as immutable once built."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.floating) or np.issubdtype(arr.dtype, np.integer):
                arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
            else:
                raise ValueError(f"unsupported pixel dtype {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height_px(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width_px(self) -> int:
        return int(self.pixels.shape[1])

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_png_bytes())


def from_png_bytes(data: bytes) -> GrayImage:
    with Image.open(io.BytesIO(data)) as im:
        return GrayImage(np.asarray(im.convert("L"), dtype=np.uint8))


def load_png(path: str | Path) -> GrayImage:
    return from_png_bytes(Path(path).read_bytes())
