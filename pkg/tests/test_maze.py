import json

import numpy as np
import pytest

from rnn_dynlab.maze import (FREE, WALL, DEFAULT_TIMEOUT, EnvState, MazeTask,
                             RetriesExhausted, StepEvent, Unreachable,
                             env_step, generate_maze, goal_distance_grid,
                             maze_from_json, maze_to_json, observe,
                             shortest_path_len)
from helpers import bfs_dist_oracle, dijkstra_dist_oracle


def manual_task(grid_rows, start, goal, seed=0):
    grid = np.array(grid_rows, dtype=np.uint8)
    return MazeTask(width=grid.shape[1], height=grid.shape[0], grid=grid,
                    start=tuple(start), goal=tuple(goal), seed=seed)


def test_generate_deterministic_and_valid():
    for seed in range(30):
        a = generate_maze(seed)
        b = generate_maze(seed)
        assert np.array_equal(a.grid, b.grid)
        assert a.start == b.start and a.goal == b.goal
        assert a.grid.shape == (10, 10)
        assert a.start != a.goal
        assert a.grid[a.start] == FREE and a.grid[a.goal] == FREE
        # connectivity per independent BFS
        assert tuple(a.goal) in bfs_dist_oracle(a.grid, a.start)


def test_generate_distinct_seeds_differ():
    grids = [generate_maze(s).grid.tobytes() for s in range(10)]
    assert len(set(grids)) > 1


def test_generate_retries_exhausted():
    with pytest.raises(RetriesExhausted):
        generate_maze(0, wall_prob=0.995, max_retries=5)


def test_shortest_path_matches_dijkstra():
    for seed in range(40):
        t = generate_maze(seed)
        assert shortest_path_len(t) == dijkstra_dist_oracle(t.grid, t.start, t.goal)


def test_shortest_path_unreachable():
    t = manual_task([[0, 1, 0],
                     [1, 1, 0],
                     [0, 0, 0]], start=(0, 0), goal=(2, 2))
    with pytest.raises(Unreachable):
        shortest_path_len(t)


def test_observe_shape_and_onehot():
    for seed in range(5):
        t = generate_maze(seed)
        o = observe(t, t.start)
        assert o.shape == (27,)
        cells = o.reshape(9, 3)
        assert np.all(cells.sum(axis=1) == 1.0)
        assert set(np.unique(o)) <= {0.0, 1.0}


def test_observe_window_contents():
    t = manual_task([[0, 0, 0],
                     [0, 0, 1],
                     [0, 1, 0]], start=(0, 0), goal=(2, 2))
    o = observe(t, (1, 1)).reshape(9, 3)
    # window rows scan (dr,dc) in (-1..1)x(-1..1) order around (1,1)
    expect_wall = [False, False, False, False, False, True, False, True, False]
    expect_goal = [False, False, False, False, False, False, False, False, True]
    for k in range(9):
        assert o[k, 1] == expect_wall[k]
        assert o[k, 2] == expect_goal[k]
        assert o[k, 0] == (not expect_wall[k] and not expect_goal[k])


def test_observe_out_of_bounds_is_wall():
    t = manual_task([[0, 0], [0, 0]], start=(0, 0), goal=(1, 1))
    o = observe(t, (0, 0)).reshape(9, 3)
    # five of the nine window cells fall outside the 2x2 grid
    oob = [0, 1, 2, 3, 6]
    for k in oob:
        assert o[k, 1] == 1.0


def test_observe_goal_channel_beats_wall():
    # a goal cell is shown as goal even if the grid marks it free; build a
    # case where the goal sits inside the window
    t = manual_task([[0, 0], [0, 0]], start=(0, 0), goal=(0, 1))
    o = observe(t, (0, 0)).reshape(9, 3)
    assert o[5, 2] == 1.0 and o[5, 1] == 0.0  # (0,1) is window index 5


def test_env_step_blocked_move_stays():
    t = manual_task([[0, 1], [0, 0]], start=(0, 0), goal=(1, 1))
    s = EnvState((0, 0))
    s2, ev = env_step(t, s, 3)  # Right into wall
    assert s2.position == (0, 0) and s2.steps_in_episode == 1
    assert ev == StepEvent.FLOW


def test_env_step_goal_resets_position_only():
    t = manual_task([[0, 0], [0, 0]], start=(0, 0), goal=(0, 1))
    s = EnvState((0, 0), steps_in_episode=4, episode_index=2)
    s2, ev = env_step(t, s, 3)
    assert ev == StepEvent.GOAL_REACHED
    assert s2.position == t.start
    assert s2.steps_in_episode == 0
    assert s2.episode_index == 3


def test_env_step_timeout_at_budget():
    t = manual_task([[0, 0], [1, 1]], start=(0, 0), goal=(0, 1))
    s = EnvState((0, 0), steps_in_episode=DEFAULT_TIMEOUT - 1)
    s2, ev = env_step(t, s, 0)  # Up is blocked, step count still advances
    assert ev == StepEvent.TIMEOUT
    assert s2.position == t.start and s2.steps_in_episode == 0
    assert s2.episode_index == 1


def test_env_step_goal_wins_over_timeout():
    t = manual_task([[0, 0], [0, 0]], start=(0, 0), goal=(0, 1))
    s = EnvState((0, 0), steps_in_episode=DEFAULT_TIMEOUT - 1)
    _, ev = env_step(t, s, 3)
    assert ev == StepEvent.GOAL_REACHED


def test_grid_is_readonly():
    t = generate_maze(0)
    with pytest.raises(ValueError):
        t.grid[0, 0] = 1


def test_json_round_trip():
    for seed in (0, 7):
        t = generate_maze(seed)
        s = maze_to_json(t)
        t2 = maze_from_json(s)
        assert np.array_equal(t.grid, t2.grid)
        assert t.start == t2.start and t.goal == t2.goal and t.seed == t2.seed
        # canonical form: re-serialization is byte-identical
        assert maze_to_json(t2) == s
        json.loads(s)


def test_goal_distance_grid_oracle():
    for seed in (0, 3, 9):
        t = generate_maze(seed)
        g = goal_distance_grid(t)
        assert g[t.goal] == 0
        assert g[t.start] == shortest_path_len(t)
        sentinel = t.width * t.height
        assert np.all(g[t.grid == 1] == sentinel)
        # any free cell with finite distance has a neighbour one closer
        for r in range(t.height):
            for c in range(t.width):
                if t.grid[r, c] == 0 and 0 < g[r, c] < sentinel:
                    nb = [g[rr, cc] for rr, cc in
                          ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
                          if t.is_free(rr, cc)]
                    assert min(nb) == g[r, c] - 1
