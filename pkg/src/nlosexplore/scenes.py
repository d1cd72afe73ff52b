"""Synthetic ground-truth floorplans.

Every generator returns an :class:`OccupancyGrid` with no unknown cells and a
single 4-connected free region. Walls are ``wall`` cells thick (default 2)
so Sobel normals are well defined on both faces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .gridmap import FREE, OCCUPIED, OccupancyGrid

KINDS = ("corridor", "L_deadend", "L_corner", "rooms", "maze")


class SceneError(ValueError):
    pass


def _blank(width, height):
    return np.full((height, width), int(OCCUPIED), np.uint8)


def _carve_rect(cells, x0, y0, x1, y1):
    """Free the half-open rectangle [x0, x1) x [y0, y1)."""
    cells[y0:y1, x0:x1] = FREE


def free_components(cells: np.ndarray) -> int:
    _, n = ndimage.label(cells == FREE)
    return n


def check_connected(cells: np.ndarray) -> None:
    n = free_components(cells)
    if n != 1:
        raise SceneError(f"free space has {n} connected components, expected 1")


def keep_largest_free(cells: np.ndarray) -> np.ndarray:
    """Fill every free pocket except the largest one."""
    lab, n = ndimage.label(cells == FREE)
    if n <= 1:
        return cells
    sizes = np.bincount(lab.ravel())[1:]
    keep = 1 + int(np.argmax(sizes))
    out = cells.copy()
    out[(lab > 0) & (lab != keep)] = OCCUPIED
    return out


def _grid(cells, resolution):
    check_connected(cells)
    return OccupancyGrid(cells, resolution)


def corridor(length: int = 60, width: int = 6, wall: int = 2, resolution: float = 0.1) -> OccupancyGrid:
    if length < 1 or width < 1 or wall < 1:
        raise SceneError("corridor length, width and wall must be >= 1")
    cells = _blank(length + 2 * wall, width + 2 * wall)
    _carve_rect(cells, wall, wall, wall + length, wall + width)
    return _grid(cells, resolution)


@dataclass(frozen=True)
class LDeadEndLayout:
    """Named regions of the dead-end scene, in cell coordinates.

    Rectangles are ``(x0, y0, x1, y1)``, half-open.
    """

    start: tuple[int, int]
    corner: tuple[int, int, int, int]
    far_segment: tuple[int, int, int, int]
    dead_end_wall: tuple[int, int, int, int]


def l_deadend(
    width: int = 8,
    arm: int = 24,
    far: int = 10,
    branch: int = 8,
    room: int = 24,
    wall: int = 2,
    resolution: float = 0.1,
):
    """L-shaped corridor whose far segment ends in a wall, plus an open
    branch from the start leading south into a room.

    The corridor runs east for ``arm`` cells, turns north and stops after
    ``far`` cells at a ``wall``-thick dead-end wall. Returns ``(grid, layout)``.
    """
    if width < 3 or arm < 2 * width or far < 2 or branch < 1 or room < width or wall < 1:
        raise SceneError("degenerate L_deadend parameters")
    w_total = wall + max(arm + width, room) + wall
    y_arm = wall + wall + far
    h_total = y_arm + width + branch + room + wall
    cells = _blank(w_total, h_total)
    x0 = wall
    # east arm
    _carve_rect(cells, x0, y_arm, x0 + arm + width, y_arm + width)
    # far segment north of the turn, closed by the dead-end wall
    fx0 = x0 + arm
    _carve_rect(cells, fx0, y_arm - far, fx0 + width, y_arm)
    dead = (fx0, y_arm - far - wall, fx0 + width, y_arm - far)
    # south branch from the start into a room
    by0 = y_arm + width
    _carve_rect(cells, x0, by0, x0 + width, by0 + branch)
    _carve_rect(cells, x0, by0 + branch, x0 + room, by0 + branch + room)
    layout = LDeadEndLayout(
        start=(x0 + width // 2, y_arm + width // 2),
        corner=(fx0, y_arm, fx0 + width, y_arm + width),
        far_segment=(fx0, y_arm - far, fx0 + width, y_arm),
        dead_end_wall=dead,
    )
    return _grid(cells, resolution), layout


@dataclass(frozen=True)
class LCornerLayout:
    robot: tuple[int, int]
    pillar: tuple[float, float]  # centre, continuous cells
    pillar_cells: tuple[int, int, int, int]


def l_corner(
    width: int = 16,
    length: int = 44,
    height: int = 40,
    pillar_dx: int = 0,
    pillar_dy: int = 6,
    pillar_size: int = 2,
    wall: int = 2,
    resolution: float = 0.1,
):
    """Corridor running east that turns north, with a pillar hidden in the
    north leg. ``pillar_dx``/``pillar_dy`` offset the pillar from the middle of
    the leg, measured from the turn. Returns ``(grid, layout)``."""
    if width < pillar_size + 2 or length <= width or height <= width + pillar_size:
        raise SceneError("degenerate L_corner parameters")
    w_total = length + 2 * wall
    h_total = height + 2 * wall
    cells = _blank(w_total, h_total)
    cy0 = wall + height - width
    _carve_rect(cells, wall, cy0, wall + length, cy0 + width)
    lx0 = wall + length - width
    _carve_rect(cells, lx0, wall, lx0 + width, cy0)
    px0 = lx0 + (width - pillar_size) // 2 + pillar_dx
    py0 = cy0 - pillar_dy - pillar_size
    if not (lx0 < px0 and px0 + pillar_size < lx0 + width and wall < py0):
        raise SceneError("pillar does not fit inside the hidden leg")
    cells[py0:py0 + pillar_size, px0:px0 + pillar_size] = OCCUPIED
    layout = LCornerLayout(
        robot=(wall + 3, cy0 + width // 2),
        pillar=(px0 + pillar_size / 2, py0 + pillar_size / 2),
        pillar_cells=(px0, py0, px0 + pillar_size, py0 + pillar_size),
    )
    return _grid(cells, resolution), layout


def rooms(
    n_x: int = 2,
    n_y: int = 2,
    room: int = 20,
    door: int = 6,
    wall: int = 2,
    seed: int = 0,
    resolution: float = 0.1,
) -> OccupancyGrid:
    """``n_x`` by ``n_y`` rooms; a random spanning tree of doors links them."""
    if n_x < 1 or n_y < 1 or room < 3 or not 1 <= door <= room or wall < 1:
        raise SceneError("degenerate rooms parameters")
    rng = np.random.default_rng(seed)
    pitch = room + wall
    cells = _blank(n_x * pitch + wall, n_y * pitch + wall)
    for j in range(n_y):
        for i in range(n_x):
            x0, y0 = wall + i * pitch, wall + j * pitch
            _carve_rect(cells, x0, y0, x0 + room, y0 + room)
    for (i, j), (i2, j2) in _spanning_tree(n_x, n_y, rng):
        off = int(rng.integers(0, room - door + 1))
        if i2 != i:  # east-west neighbours
            x0 = wall + max(i, i2) * pitch - wall
            y0 = wall + j * pitch + off
            _carve_rect(cells, x0, y0, x0 + wall, y0 + door)
        else:
            y0 = wall + max(j, j2) * pitch - wall
            x0 = wall + i * pitch + off
            _carve_rect(cells, x0, y0, x0 + door, y0 + wall)
    return _grid(cells, resolution)


def _spanning_tree(n_x, n_y, rng):
    """Randomized depth-first spanning tree over the room lattice."""
    seen = {(0, 0)}
    stack = [(0, 0)]
    edges = []
    while stack:
        i, j = stack[-1]
        nbrs = [(i + di, j + dj) for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= i + di < n_x and 0 <= j + dj < n_y and (i + di, j + dj) not in seen]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[int(rng.integers(len(nbrs)))]
        seen.add(nxt)
        edges.append(((i, j), nxt))
        stack.append(nxt)
    return edges


def maze(
    n_x: int = 4,
    n_y: int = 4,
    passage: int = 6,
    wall: int = 2,
    seed: int = 0,
    resolution: float = 0.1,
) -> OccupancyGrid:
    """Perfect maze (randomized DFS) with ``passage``-cell wide corridors."""
    if n_x < 1 or n_y < 1 or passage < 1 or wall < 1:
        raise SceneError("degenerate maze parameters")
    rng = np.random.default_rng(seed)
    pitch = passage + wall
    cells = _blank(n_x * pitch + wall, n_y * pitch + wall)
    for j in range(n_y):
        for i in range(n_x):
            x0, y0 = wall + i * pitch, wall + j * pitch
            _carve_rect(cells, x0, y0, x0 + passage, y0 + passage)
    for (i, j), (i2, j2) in _spanning_tree(n_x, n_y, rng):
        if i2 != i:
            x0 = wall + max(i, i2) * pitch - wall
            y0 = wall + j * pitch
            _carve_rect(cells, x0, y0, x0 + wall, y0 + passage)
        else:
            y0 = wall + max(j, j2) * pitch - wall
            x0 = wall + i * pitch
            _carve_rect(cells, x0, y0, x0 + passage, y0 + wall)
    return _grid(cells, resolution)


def random_scene(
    seed: int,
    width: int = 60,
    height: int = 60,
    n_blocks: int = 8,
    wall: int = 2,
    resolution: float = 0.1,
) -> OccupancyGrid:
    """Bordered room scattered with rectangular blocks; used for property
    and oracle tests."""
    rng = np.random.default_rng(seed)
    cells = _blank(width, height)
    _carve_rect(cells, wall, wall, width - wall, height - wall)
    for _ in range(n_blocks):
        bw, bh = (int(v) for v in rng.integers(1, max(2, min(width, height) // 5), size=2))
        x0 = int(rng.integers(wall, width - wall - bw + 1))
        y0 = int(rng.integers(wall, height - wall - bh + 1))
        cells[y0:y0 + bh, x0:x0 + bw] = OCCUPIED
    return OccupancyGrid(keep_largest_free(cells), resolution)


def random_free_cell(grid: OccupancyGrid, rng, margin: int = 1) -> tuple[int, int]:
    """A free cell whose ``margin`` neighbourhood is also free."""
    free = grid.free
    if margin > 0:
        free = ndimage.binary_erosion(free, np.ones((2 * margin + 1,) * 2, bool))
    ys, xs = np.nonzero(free)
    if xs.size == 0:
        raise SceneError("no free cell with the requested margin")
    k = int(rng.integers(xs.size))
    return int(xs[k]), int(ys[k])


def generate(kind: str, seed: int = 0, resolution: float = 0.1, **params) -> OccupancyGrid:
    """Dispatch by name; used by the command line ``gen`` subcommand."""
    if kind == "corridor":
        return corridor(resolution=resolution, **params)
    if kind == "L_deadend":
        return l_deadend(resolution=resolution, **params)[0]
    if kind == "L_corner":
        return l_corner(resolution=resolution, **params)[0]
    if kind == "rooms":
        return rooms(seed=seed, resolution=resolution, **params)
    if kind == "maze":
        return maze(seed=seed, resolution=resolution, **params)
    raise SceneError(f"unknown scene kind {kind!r}; choose from {', '.join(KINDS)}")
