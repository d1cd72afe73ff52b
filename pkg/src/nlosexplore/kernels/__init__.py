"""Hot grid kernels with a compiled and a pure-numpy backend.

The numba backend is used when numba imports cleanly. Set the environment
variable ``NLOSEXPLORE_PURE_NUMPY=1`` before import to force the vectorized
numpy path (same results, slower).

Kernels
-------
cast_rays(blocking, ox, oy, dx, dy, sx, sy, max_t)
    First blocking cell along each ray -> ``(hx, hy, t, px, py, face)``.
mark_rays(blocking, ox, oy, dx, dy, sx, sy, max_t, out)
    Mark traversed cells (terminal blocker included) into ``out``.
carve_fans(blocking, carvable, ox, oy, sx, sy, nx, ny, radius, fan_c, fan_s, out)
    Mark carvable cells each relay's fan directions (normal rotated by the
    fan angles given as cos/sin) cross before ``radius`` and any blocker.
backproject_arcs(blocking, support, cx, cy, sx, sy, nx, ny, ray_start, radius, weight, out)
    Accumulate weighted half-circle arcs about each relay, counting only
    samples the relay sees and that fall inside ``support``.
"""

import os

from . import _numpy

PURE_NUMPY = os.environ.get("NLOSEXPLORE_PURE_NUMPY", "").strip().lower() in ("1", "true", "yes")

_impl = _numpy
if not PURE_NUMPY:
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba missing
        _impl = _numpy

BACKEND = "numba" if _impl is not _numpy else "numpy"

cast_rays = _impl.cast_rays
mark_rays = _impl.mark_rays
carve_fans = _impl.carve_fans
backproject_arcs = _impl.backproject_arcs

__all__ = ["BACKEND", "cast_rays", "mark_rays", "carve_fans", "backproject_arcs"]
