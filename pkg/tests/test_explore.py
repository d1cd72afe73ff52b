import numpy as np
import pytest

from nlosexplore import scenes
from nlosexplore.explore import (
    ExplorationError,
    ExplorationTrace,
    ExploreSettings,
    Frontier,
    detect_frontiers,
    frontier_mask,
    information_gain,
    path_costs,
    plan_path,
    run_exploration,
    select_frontier,
)
from nlosexplore.gridmap import FREE, OCCUPIED, UNKNOWN, OccupancyGrid
from nlosexplore.predict import PredictedEnsemble, disagreement_of
from nlosexplore.spad_sim import SensorConfig

import oracles

LIGHT = SensorConfig(n_primary=720, m_secondary=61, max_range=10.0)


def _frontier_at(x, y):
    return Frontier(np.array([[x, y]]), (x + 0.5, y + 0.5), (x, y))


def _ensemble(*members):
    return PredictedEnsemble(list(members), disagreement_of(members))


# ---------------------------------------------------------------- frontiers


def test_no_unknown_no_frontiers():
    assert detect_frontiers(OccupancyGrid(np.full((6, 6), FREE, np.uint8))) == []


def test_doorway_gives_one_frontier():
    cells = np.full((12, 12), UNKNOWN, np.uint8)
    cells[0:8, :] = OCCUPIED
    cells[1:7, 1:11] = FREE
    cells[7, 4:9] = FREE  # doorway, 5 cells wide, opening onto unknown
    fr = detect_frontiers(OccupancyGrid(cells))
    assert len(fr) == 1
    assert sorted(map(tuple, fr[0].cells.tolist())) == [(x, 7) for x in range(4, 9)]
    assert fr[0].centroid == (6.5, 7.5)


def test_two_openings_largest_first():
    cells = np.full((12, 20), UNKNOWN, np.uint8)
    cells[0:8, :] = OCCUPIED
    cells[1:7, 1:19] = FREE
    cells[7, 2:7] = FREE  # 5 cells
    cells[7, 10:17] = FREE  # 7 cells
    fr = detect_frontiers(OccupancyGrid(cells))
    assert [f.size for f in fr] == [7, 5]
    assert fr[0].cells[:, 0].min() == 10


def test_min_size_filters_small_clusters():
    cells = np.full((12, 20), UNKNOWN, np.uint8)
    cells[0:8, :] = OCCUPIED
    cells[1:7, 1:19] = FREE
    cells[7, 2:5] = FREE
    assert detect_frontiers(OccupancyGrid(cells), min_size=5) == []
    assert len(detect_frontiers(OccupancyGrid(cells), min_size=3)) == 1


def test_frontier_anchor_is_a_frontier_cell():
    cells = np.full((20, 20), UNKNOWN, np.uint8)
    cells[5:15, 5:15] = FREE
    b = OccupancyGrid(cells)
    m = frontier_mask(b)
    for f in detect_frontiers(b):
        assert m[f.anchor[1], f.anchor[0]]


# ---------------------------------------------------------------- information gain


def _room_belief():
    # known strip in row 7, 5x8 unknown room above it, walls around
    cells = np.full((10, 12), OCCUPIED, np.uint8)
    cells[2:7, 2:10] = UNKNOWN
    cells[7, 2:10] = FREE
    return OccupancyGrid(cells)


def test_gain_zero_when_all_visible_cells_observed():
    b = _room_belief()
    b.cells[2:7, 2:10] = FREE
    b.cells[0, 0] = UNKNOWN  # unknown but out of sight
    m = b.copy()
    m.cells[0, 0] = OCCUPIED
    assert information_gain(_frontier_at(5, 7), _ensemble(m), b, LIGHT) == 0.0


def test_gain_counts_open_room():
    b = _room_belief()
    m = b.copy()
    m.cells[2:7, 2:10] = FREE
    assert information_gain(_frontier_at(5, 7), _ensemble(m), b, SensorConfig()) == 40.0


def test_gain_between_members():
    cells = np.full((22, 12), OCCUPIED, np.uint8)
    cells[12:17, 2:10] = UNKNOWN  # 40-cell room
    cells[2:12, 5] = UNKNOWN  # 10-cell corridor leaving the room straight up
    cells[17, 2:10] = FREE
    b = OccupancyGrid(cells)
    open_ = b.copy()
    open_.cells[b.unknown] = FREE
    shut = open_.copy()
    shut.cells[11, 5] = OCCUPIED  # corridor walled at its mouth
    f = _frontier_at(5, 17)
    s_open = information_gain(f, _ensemble(open_), b, SensorConfig())
    s_shut = information_gain(f, _ensemble(shut), b, SensorConfig())
    both = information_gain(f, _ensemble(open_, shut), b, SensorConfig())
    assert (s_open, s_shut) == (50.0, 41.0)
    assert s_shut < both < s_open
    assert both == pytest.approx(45.0)


# ---------------------------------------------------------------- planning


def test_plan_start_is_goal():
    b = OccupancyGrid(np.full((5, 5), FREE, np.uint8))
    assert plan_path(b, (2, 2), (2, 2)) == [(2, 2)]


def test_plan_straight_line():
    b = OccupancyGrid(np.full((10, 10), FREE, np.uint8))
    p = plan_path(b, (0, 0), (0, 9))
    assert len(p) == 10 and p[0] == (0, 0) and p[-1] == (0, 9)


def test_plan_unreachable():
    cells = np.full((5, 5), FREE, np.uint8)
    cells[:, 2] = OCCUPIED
    assert plan_path(OccupancyGrid(cells), (0, 0), (4, 4)) is None


def test_plan_never_crosses_unknown():
    cells = np.full((5, 5), FREE, np.uint8)
    cells[:, 2] = UNKNOWN
    assert plan_path(OccupancyGrid(cells), (0, 0), (4, 4)) is None


def test_astar_matches_dijkstra_on_random_grids():
    rng = np.random.default_rng(11)
    exact = 0
    for _ in range(100):
        free = rng.random((20, 20)) > 0.3
        cells = np.where(free, FREE, OCCUPIED).astype(np.uint8)
        ys, xs = np.nonzero(free)
        i, j = rng.choice(xs.size, 2, replace=False)
        s, g = (int(xs[i]), int(ys[i])), (int(xs[j]), int(ys[j]))
        p = plan_path(OccupancyGrid(cells), s, g)
        ref = oracles.dijkstra(free, s, g)
        if p is None:
            exact += ref is None
            continue
        for (ax, ay), (bx, by) in zip(p, p[1:]):
            assert abs(ax - bx) + abs(ay - by) == 1 and free[by, bx]
        exact += ref == len(p) - 1
    assert exact == 100


def test_path_costs_match_dijkstra():
    rng = np.random.default_rng(5)
    free = rng.random((15, 15)) > 0.25
    free[0, 0] = True
    d = path_costs(free, (0, 0))
    for y in range(15):
        for x in range(15):
            ref = oracles.dijkstra(free, (0, 0), (x, y)) if free[y, x] else None
            assert d[y, x] == (-1 if ref is None else ref)


def test_select_single_frontier():
    assert select_frontier([_frontier_at(1, 1)], [3.0], [7]) == 0


def test_select_ties_go_to_nearer():
    fr = [_frontier_at(1, 1), _frontier_at(2, 2)]
    assert select_frontier(fr, [10.0, 10.0], [5, 3]) == 1


def test_select_lambda_zero_is_pure_gain():
    fr = [_frontier_at(1, 1), _frontier_at(2, 2)]
    assert select_frontier(fr, [10.0, 11.0], [1, 500], lam=0.0) == 1


def test_select_skips_unreachable():
    fr = [_frontier_at(1, 1), _frontier_at(2, 2)]
    assert select_frontier(fr, [100.0, 1.0], [None, 4]) == 1
    assert select_frontier(fr, [1.0, 1.0], [None, None]) is None


# ---------------------------------------------------------------- loop


def test_closed_room_terminates_immediately():
    cells = np.full((12, 12), OCCUPIED, np.uint8)
    cells[1:11, 1:11] = FREE
    gt = OccupancyGrid(cells)
    for mode in ("LOS", "NLOS", "nearest_frontier"):
        tr = run_exploration(gt, (5, 5), LIGHT, mode=mode, steps=50)
        assert len(tr) <= 2
        assert not tr.belief.unknown[1:11, 1:11].any()


def test_start_must_be_free():
    g, lay = scenes.l_corner()
    with pytest.raises(ExplorationError):
        run_exploration(g, (0, 0), LIGHT)


def test_bad_mode():
    g, lay = scenes.l_corner()
    with pytest.raises(ValueError):
        run_exploration(g, lay.robot, LIGHT, mode="teleport")


def test_zero_steps_records_start_only():
    g, lay = scenes.l_corner()
    tr = run_exploration(g, lay.robot, LIGHT, mode="LOS", steps=0)
    assert len(tr) == 1 and tr.t == [0] and tr.path_len == [0]


@pytest.fixture(scope="module")
def deadend_runs():
    g, lay = scenes.l_deadend()
    out = {}
    for mode in ("LOS", "NLOS", "nearest_frontier"):
        beliefs = []
        tr = run_exploration(g, lay.start, LIGHT, mode=mode, steps=60,
                             on_step=lambda s: beliefs.append(s.belief.cells.copy()))
        out[mode] = (tr, beliefs)
    return g, out


def test_trace_shape(deadend_runs):
    _, runs = deadend_runs
    for tr, _ in runs.values():
        assert tr.t == list(range(len(tr)))
        assert len(tr) <= tr.steps + 1
        assert all(b - a in (0, 1) for a, b in zip(tr.path_len, tr.path_len[1:]))
        steps = [abs(x1 - x0) + abs(y1 - y0) for x0, y0, x1, y1 in zip(tr.x, tr.y, tr.x[1:], tr.y[1:])]
        assert all(s <= 1 for s in steps)


def test_robot_only_visits_free_cells(deadend_runs):
    g, runs = deadend_runs
    for tr, _ in runs.values():
        assert all(g.cells[y, x] == FREE for x, y in zip(tr.x, tr.y))


def test_belief_monotone_and_coverage_nondecreasing(deadend_runs):
    g, runs = deadend_runs
    for tr, beliefs in runs.values():
        for a, b in zip(beliefs, beliefs[1:]):
            assert not ((a != UNKNOWN) & (b == UNKNOWN)).any()
        assert all(y >= x for x, y in zip(tr.coverage, tr.coverage[1:]))


def test_nlos_belief_is_sound(deadend_runs):
    g, runs = deadend_runs
    _, beliefs = runs["NLOS"]
    for b in beliefs:
        known = b != UNKNOWN
        assert np.array_equal(b[known], g.cells[known])


def test_exploration_is_deterministic(deadend_runs):
    g, runs = deadend_runs
    tr = run_exploration(g, (runs["NLOS"][0].x[0], runs["NLOS"][0].y[0]), LIGHT, mode="NLOS", steps=60)
    assert list(tr.rows()) == list(runs["NLOS"][0].rows())


def test_trace_csv_round_trip(tmp_path, deadend_runs):
    _, runs = deadend_runs
    tr = runs["LOS"][0]
    tr.write_csv(tmp_path / "t.csv")
    back = ExplorationTrace.read_csv(tmp_path / "t.csv", mode="LOS", steps=tr.steps)
    assert list(back.rows()) == list(tr.rows())
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,x,y,coverage,iou,frontier_id,path_len"


def test_trace_csv_rejects_bad_header(tmp_path):
    (tmp_path / "t.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        ExplorationTrace.read_csv(tmp_path / "t.csv")


def test_settings_are_respected():
    g, lay = scenes.l_deadend()
    a = run_exploration(g, lay.start, LIGHT, mode="LOS", steps=30, settings=ExploreSettings(lam=0.0))
    b = run_exploration(g, lay.start, LIGHT, mode="LOS", steps=30, settings=ExploreSettings(lam=5.0))
    assert len(a) == len(b) == 31
