"""Coverage, predicted-map IoU, curve AUC and suite aggregation."""

from __future__ import annotations

import csv
from collections import defaultdict

import numpy as np

from .gridmap import OccupancyGrid

SUMMARY_HEADER = ("mode", "metric", "bucket", "mean", "std", "n")
N_BUCKETS = 10


def _check(a: OccupancyGrid, b: OccupancyGrid):
    if a.shape != b.shape:
        raise ValueError(f"lattice mismatch: {a.shape} vs {b.shape}")


def coverage(belief: OccupancyGrid, gt: OccupancyGrid) -> float:
    """Fraction of all grid cells that are no longer Unknown (carved cells included)."""
    _check(belief, gt)
    return float(np.count_nonzero(~belief.unknown)) / belief.cells.size


def map_iou(pred: OccupancyGrid, gt: OccupancyGrid) -> float:
    """IoU of the Occupied class; 1.0 when neither map has walls."""
    _check(pred, gt)
    if pred.unknown.any():
        raise ValueError("predicted map must not contain unknown cells")
    a, b = pred.occupied, gt.occupied
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def auc(t, values, t_max=None) -> float:
    """Trapezoidal area under ``values(t)`` over ``[t[0], t_max]`` divided by
    ``t_max - t[0]``. A curve that stops early is held at its last value."""
    t = np.asarray(t, np.float64)
    v = np.asarray(values, np.float64)
    if t.shape != v.shape or t.size < 1:
        raise ValueError("need matching, non-empty t and values")
    if np.any(np.diff(t) <= 0):
        raise ValueError("t must be strictly increasing")
    t_max = float(t[-1]) if t_max is None else float(t_max)
    if t_max < t[-1]:
        keep = t <= t_max
        t, v = t[keep], v[keep]
    if t_max > t[-1]:
        t = np.append(t, t_max)
        v = np.append(v, v[-1])
    span = t_max - t[0]
    if t.size < 2 or span <= 0:
        raise ValueError("need at least two points spanning a positive interval")
    return float(np.sum((v[1:] + v[:-1]) * np.diff(t)) / 2.0 / span)


def bucket_label(k: int) -> str:
    return f"{10 * k}-{10 * (k + 1)}"


def coverage_bucket(cov) -> np.ndarray:
    return np.minimum((np.asarray(cov) * N_BUCKETS).astype(np.int64), N_BUCKETS - 1)


def early_iou(trace, below: float = 0.3) -> float:
    """Mean IoU over steps whose coverage is under ``below``; NaN if none."""
    cov = np.asarray(trace.coverage)
    iou = np.asarray(trace.iou)
    sel = cov < below
    return float(iou[sel].mean()) if sel.any() else float("nan")


def trace_auc(trace) -> float:
    """Coverage AUC over the trace's full step budget."""
    if trace.steps <= trace.t[0]:
        return float(trace.coverage[0])
    return auc(trace.t, trace.coverage, trace.steps)


def aggregate(traces) -> list[tuple]:
    """Per-mode mean and standard deviation (ddof 0) of coverage AUC and of
    the mean IoU inside each coverage decile. ``n`` counts contributing traces."""
    if not traces:
        raise ValueError("no traces to aggregate")
    aucs = defaultdict(list)
    ious = defaultdict(list)
    for tr in traces:
        aucs[tr.mode].append(trace_auc(tr))
        b = coverage_bucket(tr.coverage)
        iou = np.asarray(tr.iou)
        for k in range(N_BUCKETS):
            sel = b == k
            if sel.any():
                ious[(tr.mode, k)].append(float(iou[sel].mean()))
    rows = []
    for mode in sorted(aucs):
        v = np.asarray(aucs[mode])
        rows.append((mode, "coverage_auc", "all", float(v.mean()), float(v.std()), int(v.size)))
        for k in range(N_BUCKETS):
            if (mode, k) in ious:
                v = np.asarray(ious[(mode, k)])
                rows.append((mode, "iou", bucket_label(k), float(v.mean()), float(v.std()), int(v.size)))
    return rows


def write_summary(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for mode, metric, bucket, mean, std, n in rows:
            w.writerow((mode, metric, bucket, f"{mean:.6f}", f"{std:.6f}", n))
