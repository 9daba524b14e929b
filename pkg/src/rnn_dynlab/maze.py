"""Procedural maze tasks and the environment half of the joint agent-env system.

A maze is a rectangular grid of Free/Wall cells with one start and one goal
cell. The agent sees a 3x3 window around itself, one-hot encoded over
(Free, Wall, Goal), flattened row-major to 27 scalars. Episode resets
(goal reached, timeout) are the jump events of the joint dynamics; the
environment itself is fully deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

FREE = 0
WALL = 1

# action index -> (d_row, d_col)
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_DELTAS = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
N_ACTIONS = 4
OBS_DIM = 27  # 9 window cells x 3 channels

DEFAULT_TIMEOUT = 200  # episode step cap for 10x10 mazes


class StepEvent(IntEnum):
    FLOW = 0
    GOAL_REACHED = 1
    TIMEOUT = 2


class RetriesExhausted(RuntimeError):
    """No connected maze found within the retry bound (wall_prob too high)."""


class Unreachable(RuntimeError):
    """Goal not reachable from start (cannot occur for generated tasks)."""


@dataclass(frozen=True)
class MazeTask:
    """One maze instance: layout, start, goal, and the seed that produced it."""

    width: int
    height: int
    grid: np.ndarray  # (height, width) uint8, 0=Free 1=Wall, read-only
    start: tuple[int, int]
    goal: tuple[int, int]
    seed: int

    def __post_init__(self):
        self.grid.setflags(write=False)

    def is_free(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width and self.grid[r, c] == FREE


@dataclass
class EnvState:
    position: tuple[int, int]
    steps_in_episode: int = 0
    episode_index: int = 0


@dataclass
class EnvConfig:
    """Maze-distribution parameters shared by training and analysis runs."""
    width: int = 10
    height: int = 10
    wall_prob: float = 0.3
    timeout: int = DEFAULT_TIMEOUT


def _bfs_distances(grid: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    """4-connected BFS distance grid from source; unreachable cells get -1."""
    h, w = grid.shape
    dist = np.full((h, w), -1, dtype=np.int64)
    dist[source] = 0
    frontier = [source]
    while frontier:
        nxt = []
        for (r, c) in frontier:
            d = dist[r, c] + 1
            for dr, dc in ACTION_DELTAS.values():
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and grid[rr, cc] == FREE and dist[rr, cc] < 0:
                    dist[rr, cc] = d
                    nxt.append((rr, cc))
        frontier = nxt
    return dist


def generate_maze(seed: int, width: int = 10, height: int = 10,
                  wall_prob: float = 0.3, max_retries: int = 1000) -> MazeTask:
    """Sample i.i.d. wall cells, then (start, goal) among the Free cells,
    resampling with derived sub-seeds until start and goal are distinct and
    connected. Bit-identical output for identical arguments.

    Raises RetriesExhausted after max_retries failed attempts.
    """
    if not (0.0 <= wall_prob < 1.0):
        raise ValueError(f"wall_prob must be in [0, 1), got {wall_prob}")
    if width < 3 or height < 3:
        raise ValueError("width and height must be >= 3")
    for attempt in range(max_retries):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(attempt,)))
        grid = (rng.random((height, width)) < wall_prob).astype(np.uint8)
        free = np.argwhere(grid == FREE)
        if len(free) < 2:
            continue
        pick = rng.choice(len(free), size=2, replace=False)
        start = tuple(int(v) for v in free[pick[0]])
        goal = tuple(int(v) for v in free[pick[1]])
        if _bfs_distances(grid, start)[goal] >= 0:
            return MazeTask(width=width, height=height, grid=grid,
                            start=start, goal=goal, seed=seed)
    raise RetriesExhausted(
        f"no connected maze in {max_retries} attempts (seed={seed}, wall_prob={wall_prob})")


def observe(task: MazeTask, pos: tuple[int, int]) -> np.ndarray:
    """27-dim observation: 3x3 window, row-major cells, 3 one-hot channels
    (Free, Wall, Goal) per cell. Out-of-bounds cells encode as Wall."""
    r0, c0 = pos
    obs = np.zeros(OBS_DIM)
    k = 0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r, c = r0 + dr, c0 + dc
            if not (0 <= r < task.height and 0 <= c < task.width):
                obs[3 * k + 1] = 1.0  # Wall
            elif (r, c) == task.goal:
                obs[3 * k + 2] = 1.0  # Goal
            elif task.grid[r, c] == WALL:
                obs[3 * k + 1] = 1.0
            else:
                obs[3 * k] = 1.0  # Free
            k += 1
    return obs


def env_step(task: MazeTask, state: EnvState, action: int,
             timeout: int = DEFAULT_TIMEOUT) -> tuple[EnvState, StepEvent]:
    """One physical transition. Moves into walls or out of bounds keep the
    position (the step still counts). Entering the goal or exhausting the
    episode budget resets position to start and bumps episode_index; the
    hidden state is the caller's business (kept on goal, zeroed on timeout,
    per the trial protocol)."""
    dr, dc = ACTION_DELTAS[action]
    r, c = state.position
    nr, nc = r + dr, c + dc
    if not task.is_free(nr, nc):
        nr, nc = r, c
    steps = state.steps_in_episode + 1
    if (nr, nc) == task.goal:
        return EnvState(task.start, 0, state.episode_index + 1), StepEvent.GOAL_REACHED
    if steps >= timeout:
        return EnvState(task.start, 0, state.episode_index + 1), StepEvent.TIMEOUT
    return EnvState((nr, nc), steps, state.episode_index), StepEvent.FLOW


def shortest_path_len(task: MazeTask) -> int:
    """BFS distance (number of 4-connected moves) from start to goal."""
    d = int(_bfs_distances(task.grid, task.start)[task.goal])
    if d < 0:
        raise Unreachable(f"goal not reachable (seed={task.seed})")
    return d


def goal_distance_grid(task: MazeTask) -> np.ndarray:
    """BFS distance from every free cell to the goal; walls and cells that
    cannot reach the goal get the sentinel width*height."""
    d = _bfs_distances(task.grid, task.goal)
    sentinel = task.width * task.height
    return np.where(d < 0, sentinel, d).astype(np.int64)


def maze_to_json(task: MazeTask) -> str:
    return json.dumps({
        "width": task.width,
        "height": task.height,
        "grid": [int(v) for v in task.grid.ravel()],  # row-major 0/1
        "start": list(task.start),
        "goal": list(task.goal),
        "seed": task.seed,
    }, sort_keys=True)


def maze_from_json(text: str) -> MazeTask:
    d = json.loads(text)
    grid = np.array(d["grid"], dtype=np.uint8).reshape(d["height"], d["width"])
    return MazeTask(width=d["width"], height=d["height"], grid=grid,
                    start=tuple(d["start"]), goal=tuple(d["goal"]), seed=d["seed"])
