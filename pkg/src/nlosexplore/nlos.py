"""Beyond-line-of-sight evidence from transient histograms.

Two products come out of a scan:

* carved free space: around each primary hit, no hidden surface can be
  closer than the first third-bounce return, so unknown cells that the
  secondary fan crosses inside that radius are free;
* a back-projection map: each late bin spreads its photons over the
  half-circle of points that could have produced that path length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from . import kernels
from .gridmap import FREE, OccupancyGrid, mark_from
from .spad_sim import Scan, bin_index, fan_offsets, photons_first_bounce, third_bounce

DEFAULT_GAP = 3
DEFAULT_PERCENTILE = 97.0
# LOS bin counts above the single first bounce by more than this hide a merged return
_MERGE_RTOL = 1e-9

LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], np.float64)


@dataclass(frozen=True)
class PeakDecomposition:
    los_bin: Optional[int] = None
    los_end: Optional[int] = None
    nlos_onset: Optional[int] = None

    @property
    def has_peaks(self) -> bool:
        return self.los_bin is not None


def peak_arrays(bins: np.ndarray, gap: int = DEFAULT_GAP):
    """Row-wise peak decomposition of an ``(n, n_bins)`` histogram array.

    Returns ``(los_bin, los_end, nlos_onset)`` as int arrays, -1 where absent.
    """
    if gap < 1:
        raise ValueError("gap must be >= 1")
    bins = np.atleast_2d(bins)
    n, nb = bins.shape
    col = np.arange(nb)[None, :]
    nz = bins > 0
    any_nz = nz.any(axis=1)
    los_bin = np.where(any_nz, np.argmax(nz, axis=1), -1)

    zero_after = ~nz & (col > los_bin[:, None])
    los_end = np.where(zero_after.any(axis=1), np.argmax(zero_after, axis=1), nb) - 1
    los_end = np.where(any_nz, los_end, -1)

    later = nz & (col > los_end[:, None])
    has_later = later.any(axis=1) & any_nz
    nxt = np.argmax(later, axis=1)
    onset = np.where(has_later & (nxt - los_end - 1 >= gap), nxt, -1)
    return los_bin, los_end, onset


def detect_peaks(bins, gap: int = DEFAULT_GAP) -> PeakDecomposition:
    """LOS cluster and NLOS onset of a single histogram.

    The LOS cluster is the contiguous nonzero run starting at the first
    nonzero bin. The NLOS onset is the next nonzero bin, reported only when
    at least ``gap`` empty bins separate it from the LOS cluster.
    """
    bins = getattr(bins, "bins", bins)
    lb, le, on = (int(v[0]) for v in peak_arrays(np.asarray(bins, np.float64)[None, :], gap))
    if lb < 0:
        return PeakDecomposition()
    return PeakDecomposition(lb, le, on if on >= 0 else None)


def carve_radii(scan: Scan) -> np.ndarray:
    """Guaranteed-empty radius (meters) around each primary hit.

    The radius is the lower edge of the first nonzero bin after the LOS
    bin, so returns that merge with the LOS cluster shrink it to under half
    a bin. A return inside the LOS bin itself shows up as surplus counts
    over the single first bounce; such rays get radius 0. With no later
    return the radius extends to the end of the histogram window, capped at
    the sensor range. NaN for rays that cannot carve (no hit, no normal, or
    LOS return outside the window).
    """
    sensor = scan.sensor
    L = sensor.bin_length
    bins = scan.bins
    nb = bins.shape[1]
    nz = bins > 0
    los = np.where(nz.any(axis=1), np.argmax(nz, axis=1), -1)
    after = nz & (np.arange(nb)[None, :] > los[:, None])
    has_after = after.any(axis=1)
    first = np.argmax(after, axis=1)
    edge = np.where(has_after, first, nb) * L
    with np.errstate(invalid="ignore"):
        r = np.minimum((edge - 2.0 * scan.d1) / 2.0, sensor.max_range)
    n1 = photons_first_bounce(sensor.pulse_energy, sensor.reflectance, sensor.efficiency, sensor.wavelength)
    los_counts = bins[np.arange(bins.shape[0]), np.maximum(los, 0)]
    r = np.where(los_counts > n1 * (1.0 + _MERGE_RTOL), 0.0, r)
    usable = scan.hit & (los >= 0) & ~np.isnan(scan.normal[:, 0])
    return np.where(usable, r, np.nan)


def carve(belief: OccupancyGrid, scan: Scan):
    """Space-carve unknown cells of ``belief`` from one scan.

    Only the directions of the secondary fan are certified empty: a hidden
    wall that falls between two fan directions returns no light, so the
    cells between them are left alone.

    Returns ``(new_belief, carved)`` where ``carved`` marks cells turned from
    unknown to free. Believed-occupied cells block the view from each hit;
    occupied cells are never changed.
    """
    if belief.shape != scan.shape:
        raise ValueError(f"belief lattice {belief.shape} does not match scan {scan.shape}")
    r = carve_radii(scan) / scan.resolution
    use = np.nonzero(r > 0)[0]
    phi = fan_offsets(scan.sensor.m_secondary)
    carved = np.zeros(belief.shape, bool)
    if use.size:
        kernels.carve_fans(
            belief.occupied,
            belief.unknown,
            np.ascontiguousarray(scan.hit_point[use, 0]),
            np.ascontiguousarray(scan.hit_point[use, 1]),
            np.ascontiguousarray(scan.prev_cell[use, 0]),
            np.ascontiguousarray(scan.prev_cell[use, 1]),
            np.ascontiguousarray(scan.normal[use, 0]),
            np.ascontiguousarray(scan.normal[use, 1]),
            np.ascontiguousarray(r[use]),
            np.cos(phi),
            np.sin(phi),
            carved,
        )
    out = belief.copy()
    out.cells[carved] = FREE
    return out, carved


def los_hit_mask(scan: Scan) -> np.ndarray:
    """Cells struck by a primary ray."""
    mask = np.zeros(scan.shape, bool)
    hc = scan.hit_cell[scan.hit]
    mask[hc[:, 1], hc[:, 0]] = True
    return mask


def sensor_visible(scan: Scan, blocking: Optional[np.ndarray] = None) -> np.ndarray:
    """Cells the primary fan passes through, up to and including its hits."""
    blocking = los_hit_mask(scan) if blocking is None else blocking
    out = np.zeros(scan.shape, bool)
    dirs = np.stack([np.cos(scan.directions), np.sin(scan.directions)], axis=1)
    mark_from(blocking, scan.pose, dirs, scan.sensor.max_range / scan.resolution, out)
    return out


# residual counts below this fraction of the measured bin are round-off
_RESIDUAL_RTOL = 1e-6
# arcs sit at the far edge of their bin
_ARC_BIN_OFFSET = 1.0


def explained_transient(scan: Scan) -> np.ndarray:
    """Histograms predicted from the surfaces the scan itself observed.

    The first bounce of every hit plus every third bounce that stays inside
    the observed geometry: secondary fans are traced against the primary hit
    cells only, priced with the normals measured at those cells.
    """
    sensor = scan.sensor
    n = len(scan)
    out = np.zeros((n, sensor.n_bins))
    hit = scan.hit
    b1 = bin_index(2.0 * scan.d1[hit], sensor.bin_width)
    rows = np.nonzero(hit)[0]
    ok = b1 < sensor.n_bins
    out[rows[ok], b1[ok]] += photons_first_bounce(
        sensor.pulse_energy, sensor.reflectance, sensor.efficiency, sensor.wavelength
    )
    blocking = los_hit_mask(scan)
    normals = np.full(scan.shape + (2,), np.nan)
    has = hit & ~np.isnan(scan.normal[:, 0])
    hc = scan.hit_cell[has]
    normals[hc[:, 1], hc[:, 0]] = scan.normal[has]
    ray, _, _, _, _, count, b2 = third_bounce(
        blocking, normals, scan.hit_point, scan.prev_cell, scan.normal, scan.theta1, scan.d1,
        np.nonzero(has)[0], sensor, scan.resolution,
    )
    keep = b2 < sensor.n_bins
    np.add.at(out, (ray[keep], b2[keep]), count[keep])
    return out


def residual_transient(scan: Scan) -> np.ndarray:
    """Measured minus explained counts, clipped at zero."""
    res = scan.bins - explained_transient(scan)
    res[res <= _RESIDUAL_RTOL * scan.bins] = 0.0
    return res


def backproject(scan: Scan, shape=None, gap: int = DEFAULT_GAP) -> np.ndarray:
    """Accumulate half-circle arcs for every bin at or after the NLOS onset.

    Bin ``b`` of a ray with primary distance ``d1`` maps to an arc about the
    primary hit point, on the normal side of the wall, at the far edge of
    the bin: radius ``((b + 1) * c * dt - 2 d1) / 2``, so the arc falls in
    the cell the secondary ray entered. The weight is the bin's photon count
    minus what the observed surfaces already explain. Arc samples count only
    where the hit point sees them past the observed surfaces and where the
    sensor itself does not see.
    """
    shape = scan.shape if shape is None else tuple(shape)
    if shape != scan.shape:
        raise ValueError(f"lattice {shape} does not match scan {scan.shape}")
    out = np.zeros(shape)
    _, _, onset = peak_arrays(scan.bins, gap)
    ok = (onset >= 0) & scan.hit & ~np.isnan(scan.normal[:, 0])
    late = (scan.bins > 0) & (np.arange(scan.bins.shape[1])[None, :] >= onset[:, None]) & ok[:, None]
    ray, b = np.nonzero(late)
    if ray.size == 0:
        return out
    relays, counts = np.unique(ray, return_counts=True)
    ray_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    L = scan.sensor.bin_length
    radius = ((b + _ARC_BIN_OFFSET) * L - 2.0 * scan.d1[ray]) / 2.0 / scan.resolution
    weight = residual_transient(scan)[ray, b]
    blocking = los_hit_mask(scan)
    support = ~sensor_visible(scan, blocking)
    c = np.ascontiguousarray
    kernels.backproject_arcs(
        blocking,
        support,
        c(scan.hit_point[relays, 0]),
        c(scan.hit_point[relays, 1]),
        c(scan.prev_cell[relays, 0], np.int64),
        c(scan.prev_cell[relays, 1], np.int64),
        c(scan.normal[relays, 0]),
        c(scan.normal[relays, 1]),
        ray_start,
        c(radius),
        c(weight),
        out,
    )
    return out


def _percentile_mask(values: np.ndarray, percentile: float) -> np.ndarray:
    if not 0 <= percentile <= 100:
        raise ValueError("percentile must be within [0, 100]")
    nz = values[values != 0]
    if nz.size == 0:
        return np.zeros(values.shape, bool)
    thr = np.percentile(nz, percentile)
    return (values >= thr) & (values > 0)


def laplacian_response(bp: np.ndarray) -> np.ndarray:
    """Sign-flipped discrete Laplacian, positive on peaks."""
    return ndimage.correlate(bp, -LAPLACIAN, mode="constant")


def laplacian_filter(bp: np.ndarray, percentile: float = DEFAULT_PERCENTILE) -> np.ndarray:
    """Binary occupied evidence: cells whose Laplacian peak response reaches
    the given percentile of the positive responses."""
    return _percentile_mask(laplacian_response(bp), percentile)


def raw_threshold(bp: np.ndarray, percentile: float = DEFAULT_PERCENTILE) -> np.ndarray:
    """Unfiltered baseline: threshold the map itself at the same percentile."""
    return _percentile_mask(bp, percentile)


def evaluate_filter(evidence: np.ndarray, truth: np.ndarray) -> float:
    """IoU of two boolean grids, 1.0 when both are empty."""
    evidence = np.asarray(evidence, bool)
    truth = np.asarray(truth, bool)
    if evidence.shape != truth.shape:
        raise ValueError("evidence and truth lattices differ")
    union = np.count_nonzero(evidence | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(evidence & truth) / union


@dataclass
class NlosEvidence:
    carved_free: np.ndarray
    occupied_evidence: np.ndarray


def extract_evidence(
    belief: OccupancyGrid,
    scan: Scan,
    gap: int = DEFAULT_GAP,
    percentile: float = DEFAULT_PERCENTILE,
):
    """Carve, back-project and filter one scan.

    Returns ``(carved_belief, NlosEvidence, bp_map)``. Occupied evidence is
    restricted to cells still unknown after carving.
    """
    carved_belief, carved = carve(belief, scan)
    bp = backproject(scan, belief.shape, gap)
    evidence = laplacian_filter(bp, percentile) & carved_belief.unknown
    return carved_belief, NlosEvidence(carved, evidence), bp


# ---------------------------------------------------------------- float grid export

FLOAT_GRID_MAGIC = "NLOSX-F32"


def write_float_grid(path, values: np.ndarray, resolution: float) -> None:
    """Three text header lines (magic, ``width height``, resolution), then
    little-endian float32 values, row-major."""
    values = np.asarray(values)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"{FLOAT_GRID_MAGIC}\n{w} {h}\n{resolution!r}\n".encode("ascii"))
        fh.write(values.astype("<f4").tobytes())


def read_float_grid(path):
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").strip()
        if magic != FLOAT_GRID_MAGIC:
            raise ValueError(f"{path}: not a float grid ({magic!r})")
        w, h = (int(v) for v in fh.readline().split())
        res = float(fh.readline())
        data = np.frombuffer(fh.read(), "<f4")
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} values, got {data.size}")
    return data.reshape(h, w).astype(np.float64), res
