"""Frontier exploration driven by predicted maps.

Each step the robot senses, updates its belief, predicts complete maps,
and (when its plan has run out or gone stale) picks the frontier with the
best information gain net of path cost. It then moves one cell.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from . import nlos
from .gridmap import FREE, OCCUPIED, OccupancyGrid, Pose, estimate_normals, visible_cells
from .metrics import coverage, map_iou
from .predict import DEFAULT_RADII, PredictedEnsemble, PredictorInput, predict_builtin
from .spad_sim import SensorConfig, simulate_scan

MODES = ("LOS", "NLOS", "nearest_frontier")
TRACE_HEADER = ("t", "x", "y", "coverage", "iou", "frontier_id", "path_len")

_NBR4 = ((1, 0), (-1, 0), (0, 1), (0, -1))
_CROSS = ndimage.generate_binary_structure(2, 1)
_SQUARE = np.ones((3, 3), bool)


class ExplorationError(RuntimeError):
    pass


# ---------------------------------------------------------------- frontiers


@dataclass
class Frontier:
    cells: np.ndarray  # (n, 2) x, y in row-major order
    centroid: tuple[float, float]
    anchor: tuple[int, int]  # cluster cell nearest the centroid

    @property
    def size(self) -> int:
        return int(self.cells.shape[0])


def frontier_mask(belief: OccupancyGrid) -> np.ndarray:
    """Free cells with at least one Unknown 4-neighbour."""
    near_unknown = ndimage.binary_dilation(belief.unknown, structure=_CROSS)
    return belief.free & near_unknown


def detect_frontiers(belief: OccupancyGrid, min_size: int = 5) -> list[Frontier]:
    """8-connected clusters of frontier cells with at least ``min_size`` cells,
    largest first, ties by the row-major position of their first cell."""
    labels, n = ndimage.label(frontier_mask(belief), structure=_SQUARE)
    out = []
    for k in range(1, n + 1):
        ys, xs = np.nonzero(labels == k)
        if xs.size < min_size:
            continue
        cx, cy = xs.mean() + 0.5, ys.mean() + 0.5
        j = int(np.argmin((xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2))
        out.append(Frontier(np.stack([xs, ys], axis=1), (float(cx), float(cy)), (int(xs[j]), int(ys[j]))))
    out.sort(key=lambda f: (-f.size, int(f.cells[0, 1]), int(f.cells[0, 0])))
    return out


def information_gain(
    frontier: Frontier,
    ensemble: PredictedEnsemble,
    belief: OccupancyGrid,
    sensor: SensorConfig,
) -> float:
    """Mean over members of the unknown cells visible from the frontier
    anchor, each weighted by ``1 - disagreement / 2``."""
    pose = Pose.at_cell(*frontier.anchor)
    weight = np.where(belief.unknown, 1.0 - ensemble.disagreement / 2.0, 0.0)
    total = 0.0
    for member in ensemble.members:
        seen = visible_cells(member, pose, sensor.n_primary, sensor.max_range)
        total += float(weight[seen].sum())
    return total / len(ensemble.members)


# ---------------------------------------------------------------- planning


def plan_path(belief: OccupancyGrid, start, goal, traversable: Optional[np.ndarray] = None):
    """A* over 4-connected Free cells with unit steps and a Euclidean
    heuristic. Open-list ties go to the smaller heuristic, then row-major
    order. Returns a list of ``(x, y)`` cells from start to goal, or None."""
    free = belief.free if traversable is None else traversable
    h_, w_ = free.shape
    sx, sy = int(start[0]), int(start[1])
    gx, gy = int(goal[0]), int(goal[1])
    for x, y in ((sx, sy), (gx, gy)):
        if not (0 <= x < w_ and 0 <= y < h_) or not free[y, x]:
            return None

    def h(x, y):
        return math.hypot(x - gx, y - gy)

    g = {(sx, sy): 0}
    parent = {}
    heap = [(h(sx, sy), h(sx, sy), sy, sx)]
    closed = set()
    while heap:
        _, _, y, x = heapq.heappop(heap)
        if (x, y) in closed:
            continue
        if (x, y) == (gx, gy):
            path = [(x, y)]
            while path[-1] in parent:
                path.append(parent[path[-1]])
            return path[::-1]
        closed.add((x, y))
        gc = g[(x, y)] + 1
        for dx, dy in _NBR4:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w_ and 0 <= ny < h_ and free[ny, nx] and (nx, ny) not in closed:
                if gc < g.get((nx, ny), math.inf):
                    g[(nx, ny)] = gc
                    parent[(nx, ny)] = (x, y)
                    hn = h(nx, ny)
                    heapq.heappush(heap, (gc + hn, hn, ny, nx))
    return None


def path_costs(traversable: np.ndarray, start) -> np.ndarray:
    """4-connected BFS step counts from ``start``; -1 where unreachable."""
    h_, w_ = traversable.shape
    dist = np.full((h_, w_), -1, np.int64)
    sx, sy = int(start[0]), int(start[1])
    if not traversable[sy, sx]:
        return dist
    dist[sy, sx] = 0
    q = deque([(sx, sy)])
    while q:
        x, y = q.popleft()
        d = dist[y, x] + 1
        for dx, dy in _NBR4:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w_ and 0 <= ny < h_ and traversable[ny, nx] and dist[ny, nx] < 0:
                dist[ny, nx] = d
                q.append((nx, ny))
    return dist


def select_frontier(frontiers: Sequence[Frontier], scores, costs, lam: float = 1.0) -> Optional[int]:
    """Index of the frontier maximizing ``score - lam * cost`` among those
    with a finite cost; ties go to the lower cost, then the earlier frontier.
    None when nothing is reachable."""
    best, best_key = None, None
    for i in range(len(frontiers)):
        c = costs[i]
        if c is None or not math.isfinite(c) or c < 0:
            continue
        key = (-(scores[i] - lam * c), c, i)
        if best_key is None or key < best_key:
            best, best_key = i, key
    return best


# ---------------------------------------------------------------- loop


@dataclass
class ExploreSettings:
    lam: float = 1.0
    min_frontier_size: int = 5
    replan_interval: int = 20
    percentile: float = nlos.DEFAULT_PERCENTILE
    gap: int = nlos.DEFAULT_GAP
    radii: Sequence[int] = DEFAULT_RADII
    # keep occupied evidence from earlier scans while its cells stay unknown
    accumulate_evidence: bool = True
    # optional replacement for the built-in ensemble
    predictor: Optional[Callable[[PredictorInput], PredictedEnsemble]] = None


@dataclass
class StepState:
    t: int
    pose: Pose
    belief: OccupancyGrid
    ensemble: PredictedEnsemble
    predicted: OccupancyGrid
    evidence: np.ndarray
    carved: np.ndarray
    path: list


@dataclass
class ExplorationTrace:
    mode: str
    steps: int
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    coverage: list = field(default_factory=list)
    iou: list = field(default_factory=list)
    frontier_id: list = field(default_factory=list)
    path_len: list = field(default_factory=list)
    belief: Optional[OccupancyGrid] = None

    def __len__(self):
        return len(self.t)

    def append(self, t, pose_cell, cov, iou, fid, plen):
        self.t.append(t)
        self.x.append(pose_cell[0])
        self.y.append(pose_cell[1])
        self.coverage.append(cov)
        self.iou.append(iou)
        self.frontier_id.append(fid)
        self.path_len.append(plen)

    def rows(self):
        for i in range(len(self)):
            yield (self.t[i], self.x[i], self.y[i], f"{self.coverage[i]:.6f}", f"{self.iou[i]:.6f}",
                   self.frontier_id[i], self.path_len[i])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            w.writerows(self.rows())

    @classmethod
    def read_csv(cls, path, mode: str = "", steps: Optional[int] = None) -> "ExplorationTrace":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r, None)
            if tuple(header or ()) != TRACE_HEADER:
                raise ValueError(f"{path}: unexpected trace header {header}")
            tr = cls(mode, 0)
            for row in r:
                t, x, y, cov, iou, fid, plen = row
                tr.append(int(t), (int(x), int(y)), float(cov), float(iou), int(fid), int(plen))
        tr.steps = steps if steps is not None else (tr.t[-1] if tr.t else 0)
        return tr


class _Goal:
    def __init__(self, gid, frontier, path, t):
        self.id = gid
        self.cells = {tuple(c) for c in frontier.cells.tolist()}
        self.path = path
        self.cursor = 0
        self.t = t

    def remaining(self):
        return self.path[self.cursor + 1:]


def run_exploration(
    gt: OccupancyGrid,
    start,
    sensor: SensorConfig,
    mode: str = "NLOS",
    steps: int = 1000,
    seed: int = 0,
    settings: Optional[ExploreSettings] = None,
    on_step: Optional[Callable[[StepState], None]] = None,
) -> ExplorationTrace:
    """Explore ``gt`` from cell ``start`` for at most ``steps`` moves.

    Returns one trace row per sensed pose (``t = 0`` is the start). The run
    is deterministic; ``seed`` is carried for bookkeeping only, since no
    stage draws random numbers.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not gt.is_ground_truth:
        raise ValueError("ground truth must not contain unknown cells")
    settings = settings or ExploreSettings()
    x, y = int(start[0]), int(start[1])
    if not (0 <= x < gt.width and 0 <= y < gt.height) or gt.cells[y, x] != FREE:
        raise ExplorationError(f"start cell ({x}, {y}) is not free in the ground truth")

    belief = OccupancyGrid.filled(gt.width, gt.height, resolution=gt.resolution)
    normals = estimate_normals(gt) if mode == "NLOS" else None
    trace = ExplorationTrace(mode, steps)
    evidence_acc = np.zeros(gt.shape, bool)
    goal: Optional[_Goal] = None
    n_goals = 0
    plen = 0

    for t in range(steps + 1):
        pose = Pose.at_cell(x, y)
        carved = np.zeros(gt.shape, bool)
        evidence = np.zeros(gt.shape, bool)
        if mode == "NLOS":
            scan = simulate_scan(gt, normals, pose, sensor)
        seen = visible_cells(gt, pose, sensor.n_primary, sensor.max_range)
        belief.cells[seen] = gt.cells[seen]
        if mode == "NLOS":
            belief, carved, evidence = _nlos_update(belief, scan, settings)
            if settings.accumulate_evidence:
                evidence_acc |= evidence
                evidence = evidence_acc & belief.unknown

        inp = PredictorInput.from_belief(belief, evidence)
        ensemble = settings.predictor(inp) if settings.predictor else predict_builtin(inp, settings.radii)
        predicted = ensemble.majority()
        trace.append(t, (x, y), coverage(belief, gt), map_iou(predicted, gt),
                     goal.id if goal else -1, plen)
        if on_step is not None:
            on_step(StepState(t, pose, belief, ensemble, predicted, evidence, carved,
                              goal.remaining() if goal else []))
        if t == steps:
            break

        frontiers = detect_frontiers(belief, settings.min_frontier_size)
        if not frontiers:
            break
        if goal is None or _stale(goal, belief, frontiers, t, settings.replan_interval):
            goal = _choose(belief, (x, y), frontiers, ensemble, sensor, mode, settings, n_goals, t)
            if goal is None:
                break
            n_goals += 1
            trace.frontier_id[-1] = goal.id
        if goal.cursor + 1 < len(goal.path):
            goal.cursor += 1
            x, y = goal.path[goal.cursor]
            if gt.cells[y, x] == OCCUPIED:
                raise ExplorationError(f"collision at ({x}, {y}) on step {t + 1}")
            plen += 1
        else:
            # standing on the goal without it dissolving: force a fresh choice
            goal = None

    trace.belief = belief
    return trace


def _nlos_update(belief, scan, settings):
    carved_belief, ev, _ = nlos.extract_evidence(belief, scan, settings.gap, settings.percentile)
    return carved_belief, ev.carved_free, ev.occupied_evidence


def _stale(goal: _Goal, belief, frontiers, t, interval) -> bool:
    if goal.cursor + 1 >= len(goal.path):
        return True
    if interval > 0 and t - goal.t >= interval:
        return True
    live = frontier_mask(belief)
    if not any(live[cy, cx] for cx, cy in goal.cells):
        return True
    free = belief.free
    return any(not free[cy, cx] for cx, cy in goal.remaining())


def _choose(belief, here, frontiers, ensemble, sensor, mode, settings, n_goals, t) -> Optional[_Goal]:
    dist = path_costs(belief.free, here)
    costs = []
    for f in frontiers:
        c = dist[f.anchor[1], f.anchor[0]]
        # a frontier that persists under the robot cannot be resolved by going there
        costs.append(float(c) if c > 0 else None)
    if mode == "nearest_frontier":
        scores = [0.0] * len(frontiers)
        lam = 1.0
    else:
        scores = [information_gain(f, ensemble, belief, sensor) if c is not None else 0.0
                  for f, c in zip(frontiers, costs)]
        lam = settings.lam
    i = select_frontier(frontiers, scores, costs, lam)
    if i is None:
        return None
    path = plan_path(belief, here, frontiers[i].anchor)
    if path is None:
        return None
    return _Goal(n_goals, frontiers[i], path, t)
