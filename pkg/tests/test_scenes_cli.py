import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from nlosexplore import cli, scenes
from nlosexplore.config import SCHEMA, ConfigError, load_config
from nlosexplore.gridmap import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, load_grid, save_grid
from nlosexplore.render import PALETTE

SCEN = cli.SCENARIO_DIR


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _golden():
    out = {}
    for line in (SCEN / "golden.sha256").read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            digest, name = line.split()
            out[name] = digest
    return out


def _ascii(rows):
    return np.array([[OCCUPIED if ch == "#" else FREE for ch in r] for r in rows], np.uint8)


# ---------------------------------------------------------------- scenes


def test_l_deadend_matches_hand_drawn_reference():
    ref = _ascii([
        "###########",
        "###########",
        "#######...#",
        "#######...#",
        "#.........#",
        "#.........#",
        "#.........#",
        "#...#######",
        "#...#######",
        "#...#######",
        "#...#######",
        "###########",
    ])
    g, lay = scenes.l_deadend(width=3, arm=6, far=2, branch=1, room=3, wall=1)
    assert np.array_equal(g.cells, ref)
    assert lay.start == (2, 5)
    assert lay.far_segment == (7, 2, 10, 4)
    assert lay.dead_end_wall == (7, 1, 10, 2)


def test_l_deadend_default_topology():
    g, lay = scenes.l_deadend()
    assert scenes.free_components(g.cells) == 1
    x0, y0, x1, y1 = lay.dead_end_wall
    assert (g.cells[y0:y1, x0:x1] == OCCUPIED).all()
    x0, y0, x1, y1 = lay.far_segment
    assert (g.cells[y0:y1, x0:x1] == FREE).all()
    # the far segment is a pocket: walled on both sides and at its end
    assert (g.cells[y0:y1, x0 - 1] == OCCUPIED).all() and (g.cells[y0:y1, x1] == OCCUPIED).all()
    assert g.cells[lay.start[1], lay.start[0]] == FREE


def test_single_room_is_a_rectangle():
    g = scenes.rooms(n_x=1, n_y=1)
    ys, xs = np.nonzero(g.free)
    assert g.free[ys.min():ys.max() + 1, xs.min():xs.max() + 1].all()


@pytest.mark.parametrize("kind", ["corridor", "L_deadend", "L_corner", "rooms", "maze"])
def test_generated_scenes_connected(kind):
    g = scenes.generate(kind, seed=4)
    assert scenes.free_components(g.cells) == 1
    assert g.is_ground_truth


def test_degenerate_parameters_rejected():
    with pytest.raises(scenes.SceneError):
        scenes.corridor(width=0)
    with pytest.raises(scenes.SceneError):
        scenes.generate("spiral")


# ---------------------------------------------------------------- gen


def test_gen_is_deterministic(tmp_path):
    a, b, c = tmp_path / "a.pgm", tmp_path / "b.pgm", tmp_path / "c.pgm"
    assert cli.main(["gen", "maze", str(a), "--seed", "3"]) == 0
    assert cli.main(["gen", "maze", str(b), "--seed", "3"]) == 0
    assert cli.main(["gen", "maze", str(c), "--seed", "4"]) == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_gen_params(tmp_path):
    p = tmp_path / "r.pgm"
    assert cli.main(["gen", "rooms", str(p), "--param", "n_x=1", "--param", "n_y=1"]) == 0
    assert load_grid(p, kind="ground_truth") == scenes.rooms(n_x=1, n_y=1)


@pytest.mark.parametrize("argv", [
    ["gen", "corridor", "X", "--param", "width=0"],
    ["gen", "corridor", "X", "--param", "width"],
    ["gen", "corridor", "X", "--param", "colour=3"],
    ["gen", "spiral", "X"],
])
def test_gen_usage_errors(tmp_path, argv):
    argv = [str(tmp_path / a) if a == "X" else a for a in argv]
    assert cli.main(argv) == 1


def test_gen_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["gen", "corridor", str(blocker / "x.pgm")]) == 2


# ---------------------------------------------------------------- config


def _ini(tmp_path, text, name="s.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_bundled_configs_load():
    for name in ("deadend", "rooms", "maze"):
        cfg = load_config(SCEN / f"{name}.ini")
        assert len(cfg.start) == 4
        gt = cfg.ground_truth()
        assert all(gt.cells[y, x] == FREE for x, y in cfg.start)


def test_unknown_key_rejected(tmp_path):
    p = _ini(tmp_path, "[scenario]\ngenerator = maze\nstart = 3,3\ncolour = red\n")
    with pytest.raises(ConfigError, match="colour"):
        load_config(p)


def test_unknown_section_rejected(tmp_path):
    p = _ini(tmp_path, "[scenario]\ngenerator = maze\nstart = 3,3\n[extras]\na = 1\n")
    with pytest.raises(ConfigError, match="extras"):
        load_config(p)


def test_key_in_wrong_section_rejected(tmp_path):
    p = _ini(tmp_path, "[sensor]\nsteps = 3\n[scenario]\ngenerator = maze\nstart = 3,3\n")
    with pytest.raises(ConfigError, match="steps"):
        load_config(p)


def test_bad_value_names_field(tmp_path):
    p = _ini(tmp_path, "[scenario]\ngenerator = maze\nstart = 3,3\n[sensor]\nn_primary = many\n")
    with pytest.raises(ConfigError, match="n_primary"):
        load_config(p)


def test_map_and_generator_exclusive(tmp_path):
    p = _ini(tmp_path, "[scenario]\ngenerator = maze\nmap = x.pgm\nstart = 3,3\n")
    with pytest.raises(ConfigError, match="map"):
        load_config(p)


def test_flag_overrides_file(tmp_path):
    p = _ini(tmp_path, "[scenario]\ngenerator = maze\nstart = 3,3\nsteps = 9\n")
    assert load_config(p, {"steps": "4", "lam": "0.5"}).steps == 4


def test_help_lists_every_key():
    for sub in ("explore", "scan"):
        proc = subprocess.run([sys.executable, "-m", "nlosexplore", sub, "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for key in SCHEMA:
            assert f"--{key.name}" in proc.stdout


def test_unknown_flag_is_usage_error():
    proc = subprocess.run([sys.executable, "-m", "nlosexplore", "explore", "x.ini", "--colour", "red"],
                          capture_output=True, text=True)
    assert proc.returncode == 1


# ---------------------------------------------------------------- explore


def _explore(tmp_path, sub, *extra):
    out = tmp_path / sub
    rc = cli.main(["explore", str(SCEN / "deadend.ini"), "--output", str(out), "--start", "6,18", *extra])
    return rc, out


def test_explore_bundled_scenario(tmp_path):
    rc, out = _explore(tmp_path, "a", "--steps", "8", "--snapshot_interval", "4")
    assert rc == 0
    rows = (out / "trace_0.csv").read_text().splitlines()
    assert 2 <= len(rows) <= 8 + 2
    meta = json.loads((out / "trace_0.json").read_text())
    assert meta["mode"] == "NLOS" and meta["steps"] == 8
    assert (out / "gt.pgm").exists() and (out / "belief_0.pgm").exists()
    assert sorted(p.name for p in out.glob("snap_*.png")) == ["snap_0_00000.png", "snap_0_00004.png", "snap_0_00008.png"]


def test_explore_is_byte_deterministic(tmp_path):
    _, a = _explore(tmp_path, "a", "--steps", "10")
    _, b = _explore(tmp_path, "b", "--steps", "10")
    assert (a / "trace_0.csv").read_bytes() == (b / "trace_0.csv").read_bytes()


def test_explore_missing_map(tmp_path, capsys):
    p = _ini(tmp_path, "[scenario]\nmap = nowhere.pgm\nstart = 3,3\n")
    assert cli.main(["explore", str(p)]) == 1
    assert "map" in capsys.readouterr().err


def test_explore_missing_config(tmp_path):
    assert cli.main(["explore", str(tmp_path / "none.ini")]) == 1


def test_explore_start_on_wall(tmp_path):
    rc, _ = _explore(tmp_path, "a", "--steps", "2", "--start", "0,0")
    assert rc == 2


def test_golden_checksums(tmp_path):
    golden = _golden()
    for name in ("deadend", "rooms", "maze"):
        assert _sha(SCEN / f"{name}.pgm") == golden[f"{name}.pgm"]
        cfg = load_config(SCEN / f"{name}.ini")
        x, y = cfg.start[0]
        out = tmp_path / name
        assert cli.main(["explore", str(SCEN / f"{name}.ini"), "--output", str(out),
                         "--steps", "20", "--start", f"{x},{y}"]) == 0
        assert _sha(out / "trace_0.csv") == golden[f"{name}/trace_0.csv"]


# ---------------------------------------------------------------- eval


def test_eval_two_modes(tmp_path):
    base = tmp_path / "runs"
    for mode in ("LOS", "NLOS"):
        assert _explore(tmp_path, f"runs_{mode}", "--steps", "6", "--mode", mode)[0] == 0
        src = tmp_path / f"runs_{mode}"
        base.mkdir(exist_ok=True)
        (base / "gt.pgm").write_bytes((src / "gt.pgm").read_bytes())
        for ext in ("csv", "json"):
            (base / f"{mode}.{ext}").write_bytes((src / f"trace_0.{ext}").read_bytes())
    out = tmp_path / "summary.csv"
    assert cli.main(["eval", str(base), "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "mode,metric,bucket,mean,std,n"
    assert {ln.split(",")[0] for ln in lines[1:]} == {"LOS", "NLOS"}


def test_eval_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert cli.main(["eval", str(tmp_path / "empty")]) == 1


def test_eval_lattice_mismatch(tmp_path):
    _, out = _explore(tmp_path, "a", "--steps", "2")
    meta = json.loads((out / "trace_0.json").read_text())
    meta["width"] += 1
    (out / "trace_0.json").write_text(json.dumps(meta))
    assert cli.main(["eval", str(out), "-o", str(tmp_path / "s.csv")]) == 2


# ---------------------------------------------------------------- scan


def test_scan_self_test(tmp_path, capsys):
    assert cli.main(["scan", "--self-test", "--output", str(tmp_path / "st")]) == 0
    assert "PASS" in capsys.readouterr().out
    for name in ("scan.txt", "backprojection.f32", "backprojection.png", "carved.pgm", "carved.png"):
        assert (tmp_path / "st" / name).exists()


def test_scan_empty_scene_gives_black_backprojection(tmp_path):
    save_grid(OccupancyGrid(np.full((30, 30), FREE, np.uint8)), tmp_path / "empty.pgm")
    p = _ini(tmp_path, "[scenario]\nmap = empty.pgm\nstart = 15,15\noutput = %s\n"
             "[sensor]\nn_primary = 360\nm_secondary = 31\n" % (tmp_path / "o"))
    assert cli.main(["scan", str(p)]) == 0
    img = np.asarray(Image.open(tmp_path / "o" / "backprojection.png"))
    assert not img.any()


def test_scan_pose_on_wall(tmp_path):
    assert cli.main(["scan", str(SCEN / "deadend.ini"), "--pose", "0,0",
                     "--output", str(tmp_path / "o")]) == 2


def test_scan_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["scan", str(SCEN / "deadend.ini"), "--n_primary", "90",
                     "--output", str(blocker / "sub")]) == 2


def test_scan_without_config(tmp_path):
    assert cli.main(["scan"]) == 1


# ---------------------------------------------------------------- render


def test_render_palette(tmp_path):
    cells = np.array([[FREE, OCCUPIED, UNKNOWN, UNKNOWN, FREE]], np.uint8)
    save_grid(OccupancyGrid(cells), tmp_path / "b.pgm")
    carved = np.array([[FREE, FREE, OCCUPIED, FREE, FREE]], np.uint8)
    evidence = np.array([[FREE, FREE, FREE, OCCUPIED, FREE]], np.uint8)
    save_grid(OccupancyGrid(carved), tmp_path / "c.pgm")
    save_grid(OccupancyGrid(evidence), tmp_path / "e.pgm")
    out = tmp_path / "b.png"
    assert cli.main(["render", str(tmp_path / "b.pgm"), str(out), "--scale", "2",
                     "--carved", str(tmp_path / "c.pgm"), "--evidence", str(tmp_path / "e.pgm"),
                     "--robot", "4,0"]) == 0
    img = np.asarray(Image.open(out).convert("RGB"))
    assert img.shape == (2, 10, 3)
    expect = ["free", "occupied", "carved", "evidence", "robot"]
    for i, name in enumerate(expect):
        assert tuple(img[1, 2 * i + 1]) == PALETTE[name]


def test_render_float_grid(tmp_path):
    assert cli.main(["scan", "--self-test", "--output", str(tmp_path / "st")]) == 0
    out = tmp_path / "bp.png"
    assert cli.main(["render", str(tmp_path / "st" / "backprojection.f32"), str(out), "--scale", "1"]) == 0
    img = np.asarray(Image.open(out))
    assert img.max() == 255


def test_render_missing_input(tmp_path):
    assert cli.main(["render", str(tmp_path / "none.pgm"), str(tmp_path / "x.png")]) == 2
