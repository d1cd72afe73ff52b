"""Noise-free transient rendering for a confocal 2D single-photon LiDAR.

Each primary ray is traced to its first wall hit. The hit deposits the
first-bounce photon count at the bin of the round-trip distance ``2 d1``,
then a fan of secondary rays leaves the hit over the open half-plane of the
wall normal. Every secondary hit deposits a third-bounce count at the bin of
``2 d1 + 2 d2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .kernels._consts import MIN_SECONDARY_T
from .gridmap import (
    FREE,
    Hit,
    OccupancyGrid,
    Pose,
    blocking_mask,
    cast,
    orient_normals,
    uniform_directions,
)

SPEED_OF_LIGHT = 2.998e8  # m/s
PLANCK = 6.626e-34  # J s

# tolerance added before flooring a bin index, absorbs c * dt round-off
_BIN_EPS = 1e-9
# secondary hits closer than this (cells) re-enter the wall they left
_MIN_SECONDARY_T = MIN_SECONDARY_T


@dataclass(frozen=True)
class SensorConfig:
    n_primary: int = 2500
    m_secondary: int = 181
    max_range: float = 20.0
    pulse_energy: float = 1e-9
    wavelength: float = 532e-9
    efficiency: float = 0.2
    bin_width: float = 0.1 / SPEED_OF_LIGHT
    n_bins: Optional[int] = None
    reflectance: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not v > 0:
                raise ValueError(f"sensor {f.name} must be positive, got {v}")
        if self.n_bins is None:
            n = math.ceil(4.0 * self.max_range / self.bin_length - _BIN_EPS)
            object.__setattr__(self, "n_bins", int(n))
        for name in ("efficiency", "reflectance"):
            if getattr(self, name) > 1:
                raise ValueError(f"sensor {name} must be in (0, 1]")
        object.__setattr__(self, "n_primary", int(self.n_primary))
        object.__setattr__(self, "m_secondary", int(self.m_secondary))
        object.__setattr__(self, "n_bins", int(self.n_bins))

    @property
    def bin_length(self) -> float:
        """Path length covered by one bin, in meters."""
        return SPEED_OF_LIGHT * self.bin_width

    @property
    def window_length(self) -> float:
        return self.n_bins * self.bin_length

    def covers_three_bounce(self) -> bool:
        return self.window_length >= 4.0 * self.max_range - 1e-9


def bin_index(d, bin_width: float):
    """Time bin of a photon that travelled ``d`` meters."""
    b = np.floor(np.asarray(d, np.float64) / (SPEED_OF_LIGHT * bin_width) + _BIN_EPS)
    if np.ndim(b) == 0:
        return int(b)
    return b.astype(np.int64)


def _photon_scale(wavelength):
    return wavelength / (PLANCK * SPEED_OF_LIGHT)


def photons_first_bounce(energy, reflectance, efficiency, wavelength):
    return (efficiency * energy * reflectance / math.pi) * _photon_scale(wavelength)


def photons_third_bounce(energy, reflectance, efficiency, wavelength, theta1, theta2, d1, d2, res=0.1):
    num = energy * reflectance**3 * np.cos(theta1) * np.cos(theta2) * res**2 * efficiency
    return num / (math.pi**3 * d1 * d2**2) * _photon_scale(wavelength)


@dataclass
class TransientHistogram:
    ray_index: int
    direction: float
    primary: Optional[Hit]
    bins: np.ndarray


@dataclass
class SecondaryHits:
    """Flat record of every third-bounce path (debug / supervision data)."""

    ray: np.ndarray
    cell: np.ndarray
    point: np.ndarray
    d2: np.ndarray
    theta2: np.ndarray
    bin: np.ndarray
    count: np.ndarray

    def __len__(self):
        return self.ray.shape[0]


@dataclass
class Scan:
    pose: Pose
    sensor: SensorConfig
    resolution: float
    shape: tuple
    directions: np.ndarray
    hit: np.ndarray
    hit_cell: np.ndarray
    hit_point: np.ndarray
    prev_cell: np.ndarray
    d1: np.ndarray
    theta1: np.ndarray
    normal: np.ndarray
    bins: np.ndarray
    secondary: SecondaryHits = field(repr=False)

    def __len__(self):
        return self.directions.shape[0]

    def histogram(self, i: int) -> TransientHistogram:
        primary = None
        if self.hit[i]:
            n = self.normal[i]
            primary = Hit(
                cell=tuple(int(v) for v in self.hit_cell[i]),
                point=tuple(float(v) for v in self.hit_point[i]),
                distance=float(self.d1[i]),
                incidence_angle=float(self.theta1[i]),
                normal=(float(n[0]), float(n[1])),
                prev_cell=tuple(int(v) for v in self.prev_cell[i]),
            )
        return TransientHistogram(i, float(self.directions[i]), primary, self.bins[i])

    def histograms(self):
        return [self.histogram(i) for i in range(len(self))]

    def hidden_hit_cells(self) -> np.ndarray:
        """Boolean grid of cells hit by at least one secondary ray."""
        out = np.zeros(self.shape, bool)
        c = self.secondary.cell
        out[c[:, 1], c[:, 0]] = True
        return out


def fan_offsets(m: int) -> np.ndarray:
    """Secondary fan angles about the normal, open interval (-90, 90) deg."""
    if m == 1:
        return np.zeros(1)
    phi = np.linspace(-0.5 * math.pi, 0.5 * math.pi, m)
    return phi[np.abs(phi) < 0.5 * math.pi - 1e-12]


def _face_normals(face, dirs):
    n = np.zeros_like(dirs)
    n[face == 0, 0] = 1.0
    n[face == 1, 1] = 1.0
    return orient_normals(n, dirs)


def _incidence(normals, dirs):
    cos = -(normals[:, 0] * dirs[:, 0] + normals[:, 1] * dirs[:, 1])
    return np.arccos(np.clip(cos, 0.0, 1.0))


def third_bounce(blocking, normals, hit_point, prev_cell, nrm, theta1, d1, src, sensor: SensorConfig, res: float):
    """Trace the secondary fans of rays ``src`` and price every hit.

    ``nrm`` holds the oriented relay normals per primary ray, ``normals`` the
    per-cell wall normals used at the secondary hit (NaN falls back to the
    face crossed). Returns ``(ray, h2_cell, t2, dirs, theta2, count, bin)``
    with ``t2`` in cells.
    """
    phi = fan_offsets(sensor.m_secondary)
    m = phi.shape[0]
    ray = np.repeat(src, m)
    c = np.tile(np.cos(phi), src.shape[0])
    s = np.tile(np.sin(phi), src.shape[0])
    nx, ny = nrm[ray, 0], nrm[ray, 1]
    sdirs = np.stack([nx * c - ny * s, nx * s + ny * c], axis=1)
    h2x, h2y, t2, _, _, face2 = cast(
        blocking, hit_point[ray, 0], hit_point[ray, 1], sdirs, sensor.max_range / res, start=prev_cell[ray]
    )
    good = (h2x >= 0) & (t2 > _MIN_SECONDARY_T)
    ray, sdirs, t2, face2 = ray[good], sdirs[good], t2[good], face2[good]
    h2 = np.stack([h2x[good], h2y[good]], axis=1)
    n2 = normals[h2[:, 1], h2[:, 0]].copy()
    undef = np.isnan(n2[:, 0])
    n2[undef] = _face_normals(face2[undef], sdirs[undef])
    n2 = orient_normals(n2, sdirs)
    theta2 = _incidence(n2, sdirs)
    d2 = t2 * res
    e, rho, alpha, lam = sensor.pulse_energy, sensor.reflectance, sensor.efficiency, sensor.wavelength
    count = photons_third_bounce(e, rho, alpha, lam, theta1[ray], theta2, d1[ray], d2, res)
    b2 = bin_index(2.0 * d1[ray] + 2.0 * d2, sensor.bin_width)
    return ray, h2, t2, sdirs, theta2, count, b2


def simulate_scan(gt: OccupancyGrid, normals: np.ndarray, pose: Pose, sensor: SensorConfig) -> Scan:
    """Render one 360 degree scan of transient histograms from ``pose``."""
    col, row = pose.cell
    if not gt.in_bounds(pose.x, pose.y) or gt.cells[row, col] != FREE:
        raise ValueError(f"pose ({pose.x}, {pose.y}) is not on a free cell")
    res = gt.resolution
    max_t = sensor.max_range / res
    blocking = blocking_mask(gt)
    n = sensor.n_primary

    angles, dirs = uniform_directions(n)
    hx, hy, t1, px, py, face = cast(blocking, pose.x, pose.y, dirs, max_t)
    hit = hx >= 0
    hit_cell = np.stack([hx, hy], axis=1)
    prev_cell = np.stack([px, py], axis=1)
    hit_point = np.full((n, 2), np.nan)
    hit_point[hit, 0] = pose.x + t1[hit] * dirs[hit, 0]
    hit_point[hit, 1] = pose.y + t1[hit] * dirs[hit, 1]
    d1 = np.where(hit, t1 * res, np.inf)

    # wall normals at the primary hits, oriented toward the sensor
    nrm = np.full((n, 2), np.nan)
    nrm[hit] = normals[hy[hit], hx[hit]]
    has_normal = hit & ~np.isnan(nrm[:, 0])
    nrm[has_normal] = orient_normals(nrm[has_normal], dirs[has_normal])
    inc_n = np.where(has_normal[:, None], nrm, 0.0)
    inc_n[hit & ~has_normal] = _face_normals(face[hit & ~has_normal], dirs[hit & ~has_normal])
    theta1 = np.full(n, np.nan)
    theta1[hit] = _incidence(inc_n[hit], dirs[hit])

    bins = np.zeros((n, sensor.n_bins))
    e, rho, alpha, lam = sensor.pulse_energy, sensor.reflectance, sensor.efficiency, sensor.wavelength
    b1 = bin_index(2.0 * d1[hit], sensor.bin_width)
    ok = b1 < sensor.n_bins
    rows = np.nonzero(hit)[0]
    bins[rows[ok], b1[ok]] += photons_first_bounce(e, rho, alpha, lam)

    ray, h2, t2, sdirs, theta2, count, b2 = third_bounce(
        blocking, normals, hit_point, prev_cell, nrm, theta1, d1, np.nonzero(has_normal)[0], sensor, res
    )
    keep = b2 < sensor.n_bins
    np.add.at(bins, (ray[keep], b2[keep]), count[keep])
    d2 = t2 * res

    point2 = hit_point[ray] + t2[:, None] * sdirs
    secondary = SecondaryHits(ray, h2, point2, d2, theta2, b2, count)
    return Scan(
        pose=pose,
        sensor=sensor,
        resolution=res,
        shape=gt.shape,
        directions=angles,
        hit=hit,
        hit_cell=np.where(hit[:, None], hit_cell, -1),
        hit_point=hit_point,
        prev_cell=prev_cell,
        d1=d1,
        theta1=theta1,
        normal=np.where(has_normal[:, None], nrm, np.nan),
        bins=bins,
        secondary=secondary,
    )


# ---------------------------------------------------------------- scan dump

_SENSOR_FIELDS = [f.name for f in fields(SensorConfig)]


def write_scan_dump(scan: Scan, path) -> None:
    """Plain-text scan dump.

    Layout::

        # nlosexplore scan v1
        pose <x> <y>
        resolution <meters per cell>
        sensor <n_primary> <m_secondary> <max_range> <pulse_energy> <wavelength>
               <efficiency> <bin_width> <n_bins> <reflectance>      (one line)
        ray <index> <direction rad> <d1 m or inf> <nnz> <bin>:<count> ...
    """
    lines = [
        "# nlosexplore scan v1",
        f"pose {float(scan.pose.x)!r} {float(scan.pose.y)!r}",
        f"resolution {float(scan.resolution)!r}",
        "sensor " + " ".join(repr(getattr(scan.sensor, k)) for k in _SENSOR_FIELDS),
    ]
    for i in range(len(scan)):
        nz = np.nonzero(scan.bins[i])[0]
        pairs = " ".join(f"{b}:{float(scan.bins[i, b])!r}" for b in nz)
        lines.append(f"ray {i} {float(scan.directions[i])!r} {float(scan.d1[i])!r} {nz.size} {pairs}".rstrip())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scan_dump(path) -> dict:
    """Parse a dump back into plain arrays (pose, sensor, directions, d1, bins)."""
    out = {"rays": []}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            key, *rest = line.split()
            if key == "pose":
                out["pose"] = Pose(float(rest[0]), float(rest[1]))
            elif key == "resolution":
                out["resolution"] = float(rest[0])
            elif key == "sensor":
                kw = {}
                for name, tok in zip(_SENSOR_FIELDS, rest):
                    kw[name] = int(tok) if name in ("n_primary", "m_secondary", "n_bins") else float(tok)
                out["sensor"] = SensorConfig(**kw)
            elif key == "ray":
                idx, direction, d1, nnz = int(rest[0]), float(rest[1]), float(rest[2]), int(rest[3])
                pairs = [p.split(":") for p in rest[4:4 + nnz]]
                out["rays"].append((idx, direction, d1, {int(b): float(v) for b, v in pairs}))
    sensor = out["sensor"]
    bins = np.zeros((len(out["rays"]), sensor.n_bins))
    for idx, _, _, sparse in out["rays"]:
        for b, v in sparse.items():
            bins[idx, b] = v
    out["directions"] = np.array([r[1] for r in out["rays"]])
    out["d1"] = np.array([r[2] for r in out["rays"]])
    out["bins"] = bins
    return out
