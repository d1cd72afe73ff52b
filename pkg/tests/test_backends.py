import os
import subprocess
import sys

import numpy as np
import pytest

from nlosexplore import kernels, nlos, scenes
from nlosexplore.explore import run_exploration
from nlosexplore.gridmap import UNKNOWN, Pose, estimate_normals, visible_cells
from nlosexplore.kernels import _numpy
from nlosexplore.spad_sim import SensorConfig, simulate_scan

_numba = pytest.importorskip("nlosexplore.kernels._numba")

# kernel name -> index of the output argument (None: result is returned)
KERNELS = {"cast_rays": None, "mark_rays": 8, "carve_fans": 11, "backproject_arcs": 11}


def _same(a, b):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape and a.dtype.kind == b.dtype.kind
    if a.dtype.kind == "f":
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    else:
        np.testing.assert_array_equal(a, b)


@pytest.fixture
def cross_checked(monkeypatch):
    """Route every kernel call through both backends and compare."""
    calls = {name: 0 for name in KERNELS}

    def make(name, out_idx):
        def both(*args):
            calls[name] += 1
            a_args = [x.copy() if isinstance(x, np.ndarray) else x for x in args]
            b_args = [x.copy() if isinstance(x, np.ndarray) else x for x in args]
            ra = getattr(_numba, name)(*a_args)
            rb = getattr(_numpy, name)(*b_args)
            if out_idx is None:
                for x, y in zip(ra, rb):
                    _same(x, y)
            else:
                _same(a_args[out_idx], b_args[out_idx])
            return getattr(_numba, name)(*args)
        return both

    for name, idx in KERNELS.items():
        monkeypatch.setattr(kernels, name, make(name, idx))
    return calls


def test_scan_pipeline_agrees(cross_checked):
    g, lay = scenes.l_corner()
    pose = Pose.at_cell(*lay.robot)
    sensor = SensorConfig(n_primary=720, m_secondary=61)
    scan = simulate_scan(g, estimate_normals(g), pose, sensor)
    belief = g.copy()
    belief.cells[~visible_cells(g, pose, 720, sensor.max_range)] = UNKNOWN
    nlos.extract_evidence(belief, scan)
    assert all(n > 0 for n in cross_checked.values())


def test_exploration_agrees(cross_checked):
    g, lay = scenes.l_deadend()
    run_exploration(g, lay.start, SensorConfig(n_primary=360, m_secondary=31, max_range=8.0), "NLOS", steps=5)
    assert all(n > 0 for n in cross_checked.values())


def test_random_scenes_agree(cross_checked):
    rng = np.random.default_rng(2)
    for seed in range(4):
        g = scenes.random_scene(seed=seed, width=40, height=40)
        pose = Pose.at_cell(*scenes.random_free_cell(g, rng))
        scan = simulate_scan(g, estimate_normals(g), pose, SensorConfig(n_primary=360, m_secondary=31))
        belief = g.copy()
        belief.cells[~visible_cells(g, pose, 360, 20.0)] = UNKNOWN
        nlos.extract_evidence(belief, scan)


def test_default_backend_is_numba():
    assert kernels.BACKEND == "numba"


def test_env_flag_selects_numpy():
    env = dict(os.environ, NLOSEXPLORE_PURE_NUMPY="1")
    proc = subprocess.run([sys.executable, "-c", "from nlosexplore import kernels; print(kernels.BACKEND)"],
                          capture_output=True, text=True, env=env)
    assert proc.stdout.strip() == "numpy"
