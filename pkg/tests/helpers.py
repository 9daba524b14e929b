"""Independent oracle implementations used across the test modules.

These deliberately avoid the library's own internals (deque BFS and heapq
Dijkstra instead of the array flood fill) so agreement is meaningful.
"""

import heapq
from collections import deque

import numpy as np

from rnn_dynlab.maze import ACTION_DELTAS, MazeTask


def bfs_dist_oracle(grid: np.ndarray, source) -> dict:
    """Plain dict/deque BFS over free cells, 4-connected."""
    h, w = grid.shape
    dist = {tuple(source): 0}
    q = deque([tuple(source)])
    while q:
        r, c = q.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and grid[nr, nc] == 0 and (nr, nc) not in dist:
                dist[(nr, nc)] = dist[(r, c)] + 1
                q.append((nr, nc))
    return dist


def dijkstra_dist_oracle(grid: np.ndarray, source, target) -> int | None:
    h, w = grid.shape
    best = {tuple(source): 0}
    heap = [(0, tuple(source))]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if (r, c) == tuple(target):
            return d
        if d > best.get((r, c), 1 << 30):
            continue
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and grid[nr, nc] == 0:
                nd = d + 1
                if nd < best.get((nr, nc), 1 << 30):
                    best[(nr, nc)] = nd
                    heapq.heappush(heap, (nd, (nr, nc)))
    return None


def bfs_policy_act_fn(task: MazeTask):
    """Oracle act_fn for the trial runner: always step along a shortest path
    to the goal. Ignores the hidden state (returns it unchanged)."""
    dist_to_goal = bfs_dist_oracle(np.asarray(task.grid), task.goal)

    def act(_obs, state, h):
        r, c = state.position
        best_a, best_d = 0, 1 << 30
        for a, (dr, dc) in ACTION_DELTAS.items():
            nxt = (r + dr, c + dc)
            d = dist_to_goal.get(nxt, 1 << 30)
            if d < best_d:
                best_a, best_d = a, d
        return h, best_a

    return act


def naive_gru_step(params, h, o):
    """Textbook per-gate computation from the structured views."""
    z = 1.0 / (1.0 + np.exp(-(params.W_z @ o + params.U_z @ h + params.b_z)))
    r = 1.0 / (1.0 + np.exp(-(params.W_r @ o + params.U_r @ h + params.b_r)))
    cand = np.tanh(params.W_c @ o + params.U_c @ (r * h) + params.b_c)
    return (1.0 - z) * h + z * cand


def naive_vanilla_step(params, h, o):
    return np.tanh(params.W_in @ o + params.W_rec_v @ h + params.b_v)
