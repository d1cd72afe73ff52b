"""Occupancy grids, PGM I/O, wall normals and grid ray casting.

Coordinate convention, used throughout the package: ``x`` is the column,
``y`` is the row, the origin is the top-left corner of cell ``(0, 0)`` and
``y`` grows downward. Angles are measured from ``+x`` toward ``+y``.
Continuous positions are in cell units; the centre of cell ``(c, r)`` is
``(c + 0.5, r + 0.5)``. Distances returned to callers are in meters.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from . import kernels


class CellState(IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


FREE = CellState.FREE
OCCUPIED = CellState.OCCUPIED
UNKNOWN = CellState.UNKNOWN

# PGM byte value written for each state
PGM_VALUE = {FREE: 255, OCCUPIED: 0, UNKNOWN: 127}
OCCUPIED_BELOW = 100
FREE_ABOVE = 200


class GridFormatError(ValueError):
    """Raised for malformed or inadmissible grid files."""


@dataclass(eq=False)
class OccupancyGrid:
    """A 2D lattice of :class:`CellState` values.

    ``cells`` has shape ``(height, width)`` and dtype ``uint8``.
    """

    cells: np.ndarray
    resolution: float = 0.1

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if cells.ndim != 2:
            raise ValueError(f"cells must be 2D, got shape {cells.shape}")
        if cells.size and cells.max() > UNKNOWN:
            raise ValueError("cells contain values outside {FREE, OCCUPIED, UNKNOWN}")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        self.cells = cells
        self.resolution = float(self.resolution)

    @classmethod
    def filled(cls, width: int, height: int, state: CellState = UNKNOWN, resolution: float = 0.1):
        return cls(np.full((height, width), int(state), np.uint8), resolution)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def occupied(self) -> np.ndarray:
        return self.cells == OCCUPIED

    @property
    def free(self) -> np.ndarray:
        return self.cells == FREE

    @property
    def unknown(self) -> np.ndarray:
        return self.cells == UNKNOWN

    @property
    def is_ground_truth(self) -> bool:
        return not self.unknown.any()

    def in_bounds(self, x: float, y: float) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def state(self, col: int, row: int) -> CellState:
        return CellState(int(self.cells[row, col]))

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.cells.copy(), self.resolution)

    def same_lattice(self, other: "OccupancyGrid") -> bool:
        return self.shape == other.shape

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.cells, other.cells)

    def __repr__(self):
        return f"OccupancyGrid({self.width}x{self.height}, resolution={self.resolution})"


@dataclass(frozen=True)
class Pose:
    """Robot position in continuous cell coordinates."""

    x: float
    y: float

    @classmethod
    def at_cell(cls, col: int, row: int) -> "Pose":
        return cls(col + 0.5, row + 0.5)

    @property
    def cell(self) -> tuple[int, int]:
        return int(math.floor(self.x)), int(math.floor(self.y))


@dataclass(frozen=True)
class Hit:
    cell: tuple[int, int]
    point: tuple[float, float]
    distance: float
    incidence_angle: float
    normal: tuple[float, float]
    prev_cell: tuple[int, int]


# ---------------------------------------------------------------- file I/O


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif data[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise GridFormatError("truncated PGM header")
    return data[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or plain (P2) PGM into a ``uint8`` array scaled to
    maxval 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P2"):
        raise GridFormatError(f"{path}: not a PGM (magic {magic!r})")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise GridFormatError(f"{path}: bad {name} {tok!r}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise GridFormatError(f"{path}: empty image {width}x{height}")
    if not 0 < maxval < 256:
        raise GridFormatError(f"{path}: unsupported maxval {maxval}")
    n = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        pixels = data[pos:pos + n]
        if len(pixels) != n:
            raise GridFormatError(f"{path}: expected {n} pixel bytes, got {len(pixels)}")
        img = np.frombuffer(pixels, np.uint8).reshape(height, width)
    else:
        values = []
        try:
            for _ in range(n):
                tok, pos = _read_token(data, pos)
                values.append(int(tok))
        except (GridFormatError, ValueError):
            raise GridFormatError(f"{path}: expected {n} pixel values, got {len(values)}") from None
        if max(values) > maxval or min(values) < 0:
            raise GridFormatError(f"{path}: pixel value outside [0, {maxval}]")
        img = np.asarray(values, np.uint8).reshape(height, width)
    if maxval != 255:
        img = np.round(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return img


def write_pgm(path, img: np.ndarray) -> None:
    if not path:
        raise ValueError("empty output path")
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def pixels_to_cells(img: np.ndarray) -> np.ndarray:
    cells = np.full(img.shape, int(UNKNOWN), np.uint8)
    cells[img < OCCUPIED_BELOW] = OCCUPIED
    cells[img > FREE_ABOVE] = FREE
    return cells


def cells_to_pixels(cells: np.ndarray) -> np.ndarray:
    lut = np.array([PGM_VALUE[FREE], PGM_VALUE[OCCUPIED], PGM_VALUE[UNKNOWN]], np.uint8)
    return lut[cells]


def load_grid(path, kind: str = "belief", resolution: float = 0.1) -> OccupancyGrid:
    """Load a PGM floorplan.

    Pixels below 100 are occupied, above 200 free, anything else unknown.
    ``kind="ground_truth"`` rejects files with unknown cells.
    """
    if kind not in ("belief", "ground_truth"):
        raise ValueError(f"kind must be 'belief' or 'ground_truth', got {kind!r}")
    grid = OccupancyGrid(pixels_to_cells(read_pgm(path)), resolution)
    if kind == "ground_truth" and not grid.is_ground_truth:
        n = int(grid.unknown.sum())
        raise GridFormatError(f"{path}: ground-truth map has {n} mid-gray (unknown) pixels")
    return grid


def save_grid(grid: OccupancyGrid, path) -> None:
    if not path or not os.fspath(path):
        raise ValueError("empty output path")
    write_pgm(path, cells_to_pixels(grid.cells))


# ---------------------------------------------------------------- normals

# anisotropy needed to trust the structure-tensor axis of thin walls
_MIN_ANISOTROPY = 0.5


def estimate_normals(grid: OccupancyGrid) -> np.ndarray:
    """Wall normals from Sobel gradients of the occupancy indicator.

    Returns an ``(H, W, 2)`` array of unit ``(nx, ny)`` vectors, NaN where no
    normal is defined. Boundary wall cells get the normalized negative
    gradient, which points into free space. One-cell-thick walls have a
    vanishing gradient; they get the dominant axis of the local structure
    tensor instead, with an arbitrary sign (orientation is resolved per ray
    by :func:`orient_normals`). Isolated pixels stay undefined.
    """
    occ = grid.occupied.astype(np.float64)
    gx = ndimage.sobel(occ, axis=1, mode="nearest")
    gy = ndimage.sobel(occ, axis=0, mode="nearest")
    free_nb = ndimage.binary_dilation(grid.free, structure=np.ones((3, 3), bool))
    boundary = grid.occupied & free_nb

    normals = np.full(grid.shape + (2,), np.nan)
    mag = np.hypot(gx, gy)
    strong = boundary & (mag > 1e-9)
    normals[strong, 0] = -gx[strong] / mag[strong]
    normals[strong, 1] = -gy[strong] / mag[strong]

    weak = boundary & ~strong
    if weak.any():
        box = np.ones((3, 3))
        jxx = ndimage.correlate(gx * gx, box, mode="constant")
        jyy = ndimage.correlate(gy * gy, box, mode="constant")
        jxy = ndimage.correlate(gx * gy, box, mode="constant")
        tr = jxx + jyy
        spread = np.hypot(jxx - jyy, 2.0 * jxy)
        with np.errstate(invalid="ignore", divide="ignore"):
            aniso = np.where(tr > 0, spread / tr, 0.0)
        ok = weak & (aniso > _MIN_ANISOTROPY)
        theta = 0.5 * np.arctan2(2.0 * jxy[ok], jxx[ok] - jyy[ok])
        normals[ok, 0] = np.cos(theta)
        normals[ok, 1] = np.sin(theta)
    return normals


def orient_normals(normals: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Flip each normal so it makes an acute angle with the reversed ray."""
    flip = (normals[..., 0] * dirs[..., 0] + normals[..., 1] * dirs[..., 1]) > 0.0
    out = normals.copy()
    out[flip] *= -1.0
    return out


# ---------------------------------------------------------------- ray casting


def blocking_mask(grid: OccupancyGrid, blockers: Iterable[CellState] = (OCCUPIED,)) -> np.ndarray:
    return np.isin(grid.cells, [int(b) for b in blockers])


def cast(blocking, ox, oy, dirs, max_t, start=None):
    """Vectorized wrapper over :func:`kernels.cast_rays`.

    ``ox``/``oy`` may be scalars; ``dirs`` is ``(n, 2)``. ``start`` optionally
    gives the ``(n, 2)`` start cells, defaulting to the cell containing the
    origin.
    """
    n = dirs.shape[0]
    ox = np.broadcast_to(np.asarray(ox, np.float64), (n,)).copy()
    oy = np.broadcast_to(np.asarray(oy, np.float64), (n,)).copy()
    if start is None:
        sx = np.floor(ox).astype(np.int64)
        sy = np.floor(oy).astype(np.int64)
    else:
        sx = np.ascontiguousarray(start[:, 0], np.int64)
        sy = np.ascontiguousarray(start[:, 1], np.int64)
    dx = np.ascontiguousarray(dirs[:, 0], np.float64)
    dy = np.ascontiguousarray(dirs[:, 1], np.float64)
    return kernels.cast_rays(blocking, ox, oy, dx, dy, sx, sy, float(max_t))


def uniform_directions(n: int) -> tuple[np.ndarray, np.ndarray]:
    angles = 2.0 * np.pi * np.arange(n) / n
    return angles, np.stack([np.cos(angles), np.sin(angles)], axis=1)


def raycast(
    grid: OccupancyGrid,
    origin: Pose,
    direction: float,
    max_range: float,
    blockers: Iterable[CellState] = (OCCUPIED,),
    normals: Optional[np.ndarray] = None,
) -> Optional[Hit]:
    """First blocking cell along a ray, by exact grid walking.

    The incidence angle is taken against the wall normal when ``normals``
    defines one at the hit cell, otherwise against the crossed cell face.
    """
    blocking = blocking_mask(grid, blockers)
    d = np.array([[math.cos(direction), math.sin(direction)]])
    hx, hy, t, px, py, face = cast(blocking, origin.x, origin.y, d, max_range / grid.resolution)
    if hx[0] < 0:
        return None
    n = None
    if normals is not None and not np.isnan(normals[hy[0], hx[0], 0]):
        n = normals[hy[0], hx[0]]
    if n is None:
        n = np.array([1.0, 0.0]) if face[0] == 0 else np.array([0.0, 1.0])
    n = orient_normals(n[None, :], d)[0]
    cos_inc = min(1.0, max(0.0, -float(n @ d[0])))
    tt = float(t[0])
    return Hit(
        cell=(int(hx[0]), int(hy[0])),
        point=(origin.x + tt * d[0, 0], origin.y + tt * d[0, 1]),
        distance=tt * grid.resolution,
        incidence_angle=math.acos(cos_inc),
        normal=(float(n[0]), float(n[1])),
        prev_cell=(int(px[0]), int(py[0])),
    )


def visible_cells(
    grid: OccupancyGrid,
    origin: Pose,
    n_rays: int,
    max_range: float,
    blockers: Iterable[CellState] = (OCCUPIED,),
) -> np.ndarray:
    """Boolean mask of cells seen from ``origin`` by ``n_rays`` uniform rays.

    Covers every traversed non-blocking cell plus the terminal blocker of
    each ray, within ``max_range`` meters. The origin cell is always seen.
    """
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    out = np.zeros(grid.shape, bool)
    _, dirs = uniform_directions(n_rays)
    mark_from(blocking_mask(grid, blockers), origin, dirs, max_range / grid.resolution, out)
    return out


def mark_from(blocking, origin: Pose, dirs, max_t, out) -> None:
    n = dirs.shape[0]
    ox = np.full(n, float(origin.x))
    oy = np.full(n, float(origin.y))
    sx = np.full(n, origin.cell[0], np.int64)
    sy = np.full(n, origin.cell[1], np.int64)
    kernels.mark_rays(
        blocking, ox, oy,
        np.ascontiguousarray(dirs[:, 0]), np.ascontiguousarray(dirs[:, 1]),
        sx, sy, float(max_t), out,
    )
