"""PNG rendering of beliefs, overlays and back-projection maps.

Palette (RGB):

======================  ===============
occupied                black (0,0,0)
free                    white (255,255,255)
unknown                 gray (127,127,127)
carved free             light blue (160,200,255)
NLOS occupied evidence  orange (255,140,0)
planned path            green (0,170,0)
robot                   red (220,0,0)
======================  ===============

Back-projection maps are written as 8-bit grayscale scaled so the maximum
maps to 255; an all-zero map stays black.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .gridmap import FREE, OCCUPIED, UNKNOWN, OccupancyGrid

PALETTE = {
    "occupied": (0, 0, 0),
    "free": (255, 255, 255),
    "unknown": (127, 127, 127),
    "carved": (160, 200, 255),
    "evidence": (255, 140, 0),
    "path": (0, 170, 0),
    "robot": (220, 0, 0),
}


def belief_rgb(
    belief: OccupancyGrid,
    carved: Optional[np.ndarray] = None,
    evidence: Optional[np.ndarray] = None,
    path: Sequence = (),
    robot=None,
) -> np.ndarray:
    """``(H, W, 3)`` uint8 image; later layers paint over earlier ones."""
    img = np.empty(belief.shape + (3,), np.uint8)
    img[belief.cells == FREE] = PALETTE["free"]
    img[belief.cells == OCCUPIED] = PALETTE["occupied"]
    img[belief.cells == UNKNOWN] = PALETTE["unknown"]
    if carved is not None:
        img[np.asarray(carved, bool)] = PALETTE["carved"]
    if evidence is not None:
        img[np.asarray(evidence, bool)] = PALETTE["evidence"]
    for x, y in path:
        img[y, x] = PALETTE["path"]
    if robot is not None:
        x, y = robot
        img[y, x] = PALETTE["robot"]
    return img


def scale_unit(values: np.ndarray) -> np.ndarray:
    """Map non-negative values to uint8 with the maximum at 255."""
    v = np.clip(np.asarray(values, np.float64), 0.0, None)
    peak = v.max() if v.size else 0.0
    if not np.isfinite(peak) or peak <= 0:
        return np.zeros(v.shape, np.uint8)
    return np.round(v / peak * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path, scale: int = 1) -> None:
    if scale < 1:
        raise ValueError("scale must be >= 1")
    if scale > 1:
        img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    Image.fromarray(img).save(path, format="PNG")


def render_belief(dest, belief: OccupancyGrid, scale: int = 1, **layers) -> None:
    save_png(belief_rgb(belief, **layers), dest, scale)


def render_backprojection(dest, bp: np.ndarray, scale: int = 1) -> None:
    save_png(scale_unit(bp), dest, scale)
