"""Heading-aligned perspective views from 2:1 equirectangular panoramas.

Pixel convention: equirect column ``x`` (integer index) looks at longitude
``(x / W - 0.5) * 360`` degrees relative to the panorama's base heading, row
``y`` at latitude ``(0.5 - y / H) * 180``. Output pixel ``(h // 2, w // 2)``
is the optical axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class Equirect:
    pixels: np.ndarray
    base_heading: float = 0.0

    def __post_init__(self) -> None:
        if self.pixels.ndim not in (2, 3):
            raise ProjectionError(f"expected HxW or HxWxC array, got shape {self.pixels.shape}")
        h, w = self.pixels.shape[:2]
        if h <= 0 or w != 2 * h:
            raise ProjectionError(f"equirect must be 2:1, got {w}x{h}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ViewSpec:
    heading: float
    pitch: float = 0.0
    fov: float = 90.0
    out_size: Tuple[int, int] = (512, 512)  # (width, height)

    def __post_init__(self) -> None:
        if not 0.0 < self.fov < 180.0:
            raise ProjectionError(f"fov must be in (0, 180), got {self.fov}")
        if min(self.out_size) <= 0:
            raise ProjectionError(f"bad output size {self.out_size}")


def view_rays(spec: ViewSpec, base_heading: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Longitude (relative to base heading) and latitude in degrees for each output pixel."""
    w, h = spec.out_size
    f = (w / 2.0) / np.tan(np.radians(spec.fov) / 2.0)
    x = (np.arange(w, dtype=np.float64) - w // 2) / f
    y = -(np.arange(h, dtype=np.float64) - h // 2) / f
    x, y = np.meshgrid(x, y)
    z = np.ones_like(x)
    p = np.radians(spec.pitch)
    y2 = y * np.cos(p) + z * np.sin(p)
    z2 = -y * np.sin(p) + z * np.cos(p)
    lon = np.degrees(np.arctan2(x, z2)) + (spec.heading - base_heading)
    lat = np.degrees(np.arctan2(y2, np.hypot(x, z2)))
    return lon, lat


def sample_bilinear(pixels: np.ndarray, lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Bilinear lookup with horizontal wraparound and vertical clamping."""
    H, W = pixels.shape[:2]
    u = np.mod((lon / 360.0 + 0.5) * W, W)
    v = np.clip((0.5 - lat / 180.0) * H, 0.0, H - 1)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0
    x0 %= W
    x1 = (x0 + 1) % W
    y1 = np.minimum(y0 + 1, H - 1)
    src = pixels.astype(np.float64)
    if src.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def project_view(img: Equirect, spec: ViewSpec) -> np.ndarray:
    lon, lat = view_rays(spec, img.base_heading)
    out = sample_bilinear(img.pixels, lon, lat)
    if np.issubdtype(img.pixels.dtype, np.integer):
        info = np.iinfo(img.pixels.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(img.pixels.dtype)
    return out.astype(img.pixels.dtype)


LOOKAROUND_OFFSETS = (0.0, 90.0, 180.0, 270.0)


def project_lookaround(img: Equirect, out_size: Tuple[int, int] = (512, 512)) -> List[np.ndarray]:
    return [project_view(img, ViewSpec((img.base_heading + d) % 360.0, 0.0, 90.0, out_size))
            for d in LOOKAROUND_OFFSETS]


def load_equirect(path: Union[str, Path], base_heading: float = 0.0) -> Equirect:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return Equirect(arr, base_heading)


def save_view(view: np.ndarray, path: Union[str, Path]) -> None:
    Image.fromarray(view).save(path, format="PNG")
