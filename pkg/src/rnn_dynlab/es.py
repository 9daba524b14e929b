"""Evolution-strategies meta-training of the recurrent policy.

A trial is a sequence of episodes on ONE fixed maze: position resets to start
on every episode boundary, the hidden state is kept across goal resets and
zeroed across timeout resets (soft failure). Fitness is the length of the
last successful episode, or the timeout penalty if the goal was never
reached; lower is better. The ES update is the OpenAI-style estimator with
antithetic noise and a centered rank transform.

The population runner evaluates all candidates on all of a generation's
mazes in lockstep with batched matmuls; per-candidate results are identical
to evaluating candidates one at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maze import (DEFAULT_TIMEOUT, EnvConfig, EnvState, MazeTask, StepEvent,
                   env_step, generate_maze, goal_distance_grid, observe)
from .policy import (GRU, VANILLA, PolicyParams, greedy_action, param_count,
                     policy_logits, recurrent_step)


class TooFewCandidates(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass
class EsConfig:
    population_size: int = 128   # even; antithetic pairs
    sigma: float = 0.05
    learning_rate: float = 0.03
    generations: int = 300
    trial_budget: int = 1000     # env steps per trial
    episodes_per_trial: int = 0  # 0 = unlimited, trial_budget is the bound
    eval_mazes_per_candidate: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2 or self.population_size % 2 != 0:
            raise ValueError("population_size must be even and >= 2")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class FitnessRecord:
    candidate_index: int
    L_last: float
    reached_goal: bool


@dataclass
class TrialResult:
    L_last: float
    reached_goal: bool
    episodes: int
    episode_lengths: list
    episode_events: list


def _run_trial(task: MazeTask, act_fn, *, trial_budget: int,
               timeout: int = DEFAULT_TIMEOUT, episodes_per_trial: int = 0,
               h0: np.ndarray | None = None, hidden_dim: int = 64) -> TrialResult:
    """Scalar reference trial loop.

    act_fn(obs, env_state, h) -> (h', action) so tests can substitute oracle
    policies; the library's own callers pass the recurrent policy closure.
    Episodes cut off by the step budget contribute nothing.
    """
    h = np.zeros(hidden_dim) if h0 is None else np.array(h0, dtype=np.float64)
    state = EnvState(task.start)
    L_last, reached, episodes = None, False, 0
    ep_lengths, ep_events = [], []
    for _ in range(trial_budget):
        o = observe(task, state.position)
        h, a = act_fn(o, state, h)
        length = state.steps_in_episode + 1
        state, ev = env_step(task, state, a, timeout)
        if ev != StepEvent.FLOW:
            episodes += 1
            ep_lengths.append(length)
            ep_events.append(ev)
            if ev == StepEvent.GOAL_REACHED:
                L_last, reached = length, True
            else:
                h = np.zeros_like(h)  # soft failure reset
            if episodes_per_trial and episodes >= episodes_per_trial:
                break
    return TrialResult(float(L_last) if reached else float(timeout),
                       reached, episodes, ep_lengths, ep_events)


def policy_act_fn(params: PolicyParams, rng: np.random.Generator | None = None,
                  tau: float = 1.0):
    """Greedy by default; pass an rng to sample from the softmax policy at
    temperature tau (Gumbel-max, exactly categorical; tau=0 is greedy)."""
    def act(o, _state, h):
        h = recurrent_step(params, h, o)
        logits = policy_logits(params, h)
        if rng is not None:
            logits = logits + tau * rng.gumbel(size=logits.shape)
        return h, greedy_action(logits)
    return act


def evaluate_fitness(params: PolicyParams, task: MazeTask, cfg: EsConfig,
                     timeout: int = DEFAULT_TIMEOUT,
                     candidate_index: int = 0) -> FitnessRecord:
    res = _run_trial(task, policy_act_fn(params), trial_budget=cfg.trial_budget,
                     timeout=timeout, episodes_per_trial=cfg.episodes_per_trial,
                     hidden_dim=params.hidden_dim)
    return FitnessRecord(candidate_index, res.L_last, res.reached_goal)


def centered_rank_transform(fitnesses) -> np.ndarray:
    """Zero-sum rank weights; lowest fitness (best) gets +0.5, highest -0.5.

    Ranks are taken ascending on the negated fitnesses and mapped through
    rank/(N-1) - 0.5; ties share the mean of their rank positions.
    """
    f = np.asarray(fitnesses, dtype=np.float64)
    n = f.size
    if n < 2:
        raise TooFewCandidates(f"need >= 2 fitness values, got {n}")
    g = -f  # ascending rank on -f: best candidate ranks last
    order = np.argsort(g, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(n, dtype=np.float64)
    # average rank positions within tie groups
    gs = g[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and gs[j + 1] == gs[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = 0.5 * (i + j)
        i = j + 1
    w = ranks / (n - 1) - 0.5
    w -= w.mean()  # exact zero-sum up to one rounding
    return w


def es_update(theta: np.ndarray, noise: np.ndarray, weights: np.ndarray,
              sigma: float, learning_rate: float) -> np.ndarray:
    if noise.ndim != 2 or noise.shape[0] != weights.shape[0] or theta.shape != (noise.shape[1],):
        raise ShapeMismatch(f"theta {theta.shape}, noise {noise.shape}, weights {weights.shape}")
    n = noise.shape[0]
    return theta + (learning_rate / (n * sigma)) * (noise.T @ weights)


# ---------------------------------------------------------------------------
# batched lockstep engine

_DR9 = np.repeat([-1, 0, 1], 3)
_DC9 = np.tile([-1, 0, 1], 3)
_DRA = np.array([-1, 1, 0, 0])  # Up, Down, Left, Right
_DCA = np.array([0, 0, -1, 1])


@dataclass
class BatchTrialResult:
    L_last: np.ndarray        # (N, M) final successful episode length or penalty
    reached: np.ndarray       # (N, M) bool
    episodes: np.ndarray      # (N, M) completed episode count
    events: np.ndarray | None = None    # (T, N, M) uint8 StepEvent codes
    actions: np.ndarray | None = None   # (T, N, M) uint8
    goal_h: np.ndarray | None = None    # (N, H, M) hidden state at last goal event
    goal_h_step: np.ndarray | None = None  # (N, M) step index of that event, -1 if none
    final_h: np.ndarray | None = None   # (N, H, M)
    min_goal_dist: np.ndarray | None = None  # (N, M) closest BFS approach


def _fused_weights(thetas: np.ndarray, arch: str, h_dim: int, i_dim: int, a_dim: int):
    """Per-candidate weight stacks laid out for batched matmul on [o; h; 1]."""
    n = thetas.shape[0]
    if arch == GRU:
        hi, hh = h_dim * i_dim, h_dim * h_dim
        w_in = thetas[:, :3 * hi].reshape(n, 3, h_dim, i_dim)
        u = thetas[:, 3 * hi:3 * hi + 3 * hh].reshape(n, 3, h_dim, h_dim)
        b = thetas[:, 3 * hi + 3 * hh:3 * hi + 3 * hh + 3 * h_dim].reshape(n, 3, h_dim)
        off = 3 * hi + 3 * hh + 3 * h_dim
        w1 = np.zeros((n, 3 * h_dim, i_dim + h_dim + 1))
        for k in range(3):
            blk = w1[:, k * h_dim:(k + 1) * h_dim]
            blk[:, :, :i_dim] = w_in[:, k]
            if k < 2:  # candidate-gate recurrence goes through r*h separately
                blk[:, :, i_dim:i_dim + h_dim] = u[:, k]
            blk[:, :, i_dim + h_dim] = b[:, k]
        u_c = np.ascontiguousarray(u[:, 2])
    else:
        hi, hh = h_dim * i_dim, h_dim * h_dim
        w1 = np.zeros((n, h_dim, i_dim + h_dim + 1))
        w1[:, :, :i_dim] = thetas[:, :hi].reshape(n, h_dim, i_dim)
        w1[:, :, i_dim:i_dim + h_dim] = thetas[:, hi:hi + hh].reshape(n, h_dim, h_dim)
        w1[:, :, i_dim + h_dim] = thetas[:, hi + hh:hi + hh + h_dim]
        off = hi + hh + h_dim
        u_c = None
    w_out = thetas[:, off:off + a_dim * h_dim].reshape(n, a_dim, h_dim)
    b_out = thetas[:, off + a_dim * h_dim:off + a_dim * h_dim + a_dim].reshape(n, a_dim, 1)
    return w1, u_c, w_out, b_out


def run_batched_trials(thetas: np.ndarray, arch: str, hidden_dim: int,
                       tasks: list[MazeTask], *, trial_budget: int,
                       timeout: int = DEFAULT_TIMEOUT, episodes_per_trial: int = 0,
                       input_dim: int = 27, n_actions: int = 4,
                       h0: np.ndarray | None = None,
                       record_events: bool = False, record_actions: bool = False,
                       snapshot_goal_h: bool = False,
                       final_h: bool = False,
                       action_rng: np.random.Generator | None = None,
                       action_tau: float = 1.0,
                       track_goal_distance: bool = False) -> BatchTrialResult:
    """Run N candidates x M tasks in lockstep for trial_budget steps.

    Each (candidate, task) pair follows exactly the scalar trial semantics:
    episode resets on goal/timeout, hidden kept on goal, zeroed on timeout.
    With episodes_per_trial > 0, accounting freezes once the quota is hit
    (the simulation keeps stepping; later events are ignored).
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    n, dim = thetas.shape
    if dim != param_count(arch, hidden_dim, input_dim, n_actions):
        raise ShapeMismatch(f"theta dim {dim} wrong for {arch}/{hidden_dim}")
    m = len(tasks)
    hgt, wid = tasks[0].height, tasks[0].width
    if any(t.height != hgt or t.width != wid for t in tasks):
        raise ShapeMismatch("batched tasks must share grid dimensions")
    h_dim, i_dim, a_dim = hidden_dim, input_dim, n_actions

    padded = np.ones((m, hgt + 2, wid + 2), dtype=np.uint8)
    for k, t in enumerate(tasks):
        padded[k, 1:-1, 1:-1] = t.grid
    start_r = np.array([t.start[0] for t in tasks])
    start_c = np.array([t.start[1] for t in tasks])
    goal_r = np.array([t.goal[0] for t in tasks])
    goal_c = np.array([t.goal[1] for t in tasks])

    w1, u_c, w_out, b_out = _fused_weights(thetas, arch, h_dim, i_dim, a_dim)

    pos_r = np.broadcast_to(start_r, (n, m)).copy()
    pos_c = np.broadcast_to(start_c, (n, m)).copy()
    steps = np.zeros((n, m), dtype=np.int64)
    episodes = np.zeros((n, m), dtype=np.int64)
    L_last = np.full((n, m), float(timeout))
    reached = np.zeros((n, m), dtype=bool)
    frozen = np.zeros((n, m), dtype=bool)
    h = np.zeros((n, h_dim, m)) if h0 is None else np.array(h0, dtype=np.float64)
    if h.shape != (n, h_dim, m):
        raise ShapeMismatch(f"h0 shape {h.shape} != {(n, h_dim, m)}")

    ev_hist = np.zeros((trial_budget, n, m), dtype=np.uint8) if record_events else None
    act_hist = np.zeros((trial_budget, n, m), dtype=np.uint8) if record_actions else None
    goal_h = np.zeros((n, h_dim, m)) if snapshot_goal_h else None
    goal_h_step = np.full((n, m), -1, dtype=np.int64) if snapshot_goal_h else None
    goal_dist = min_gd = None
    if track_goal_distance:
        goal_dist = np.stack([goal_distance_grid(t) for t in tasks], axis=0)
        min_gd = goal_dist[np.arange(m)[None, :], pos_r, pos_c].astype(np.int64)

    m_idx3 = np.arange(m)[None, :, None]
    m_idx2 = np.arange(m)[None, :]
    x = np.empty((n, i_dim + h_dim + 1, m))
    x[:, i_dim + h_dim, :] = 1.0

    for t_step in range(trial_budget):
        wr = pos_r[:, :, None] + _DR9
        wc = pos_c[:, :, None] + _DC9
        vals = padded[m_idx3, wr + 1, wc + 1]
        goal_mask = (wr == goal_r[None, :, None]) & (wc == goal_c[None, :, None])
        wall_mask = (vals == 1) & ~goal_mask
        obs3 = np.empty((n, m, 9, 3))
        obs3[..., 0] = ~(wall_mask | goal_mask)
        obs3[..., 1] = wall_mask
        obs3[..., 2] = goal_mask
        x[:, :i_dim, :] = obs3.reshape(n, m, i_dim).transpose(0, 2, 1)
        x[:, i_dim:i_dim + h_dim, :] = h

        if arch == GRU:
            g = w1 @ x
            z = 1.0 / (1.0 + np.exp(-g[:, :h_dim]))
            r = 1.0 / (1.0 + np.exp(-g[:, h_dim:2 * h_dim]))
            cand = np.tanh(g[:, 2 * h_dim:] + u_c @ (r * h))
            h = (1.0 - z) * h + z * cand
        else:
            h = np.tanh(w1 @ x)
        logits = w_out @ h + b_out
        if action_rng is not None:
            # Gumbel-max: softmax sampling at temperature tau through the
            # argmax code path; tau=0 recovers greedy exactly
            logits = logits + action_tau * action_rng.gumbel(size=logits.shape)
        acts = np.argmax(logits, axis=1)

        nr = pos_r + _DRA[acts]
        nc = pos_c + _DCA[acts]
        blocked = padded[m_idx2, nr + 1, nc + 1] == 1
        nr = np.where(blocked, pos_r, nr)
        nc = np.where(blocked, pos_c, nc)
        if track_goal_distance:
            np.minimum(min_gd, goal_dist[m_idx2, nr, nc], out=min_gd)
        steps += 1
        goal_hit = (nr == goal_r) & (nc == goal_c)
        timeout_hit = ~goal_hit & (steps >= timeout)

        live = ~frozen
        g_live = goal_hit & live
        L_last[g_live] = steps[g_live]
        reached |= g_live
        episodes += (goal_hit | timeout_hit) & live

        hit = goal_hit | timeout_hit
        pos_r = np.where(hit, start_r, nr)
        pos_c = np.where(hit, start_c, nc)
        steps[hit] = 0
        h *= (~timeout_hit)[:, None, :]  # soft failure reset

        if record_events:
            ev_hist[t_step][goal_hit] = int(StepEvent.GOAL_REACHED)
            ev_hist[t_step][timeout_hit] = int(StepEvent.TIMEOUT)
        if record_actions:
            act_hist[t_step] = acts
        if snapshot_goal_h:
            gi = np.nonzero(goal_hit)
            goal_h[gi[0], :, gi[1]] = h[gi[0], :, gi[1]]
            goal_h_step[goal_hit] = t_step
        if episodes_per_trial:
            frozen |= episodes >= episodes_per_trial

    return BatchTrialResult(L_last=L_last, reached=reached, episodes=episodes,
                            events=ev_hist, actions=act_hist, goal_h=goal_h,
                            goal_h_step=goal_h_step,
                            final_h=h if final_h else None,
                            min_goal_dist=min_gd)


# ---------------------------------------------------------------------------
# training loop


def sample_generation_tasks(seed: int, generation: int, count: int,
                            env: EnvConfig) -> list[MazeTask]:
    """Common maze set shared by every candidate of one generation."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7, generation)))
    seeds = rng.integers(0, 2 ** 62, size=count)
    return [generate_maze(int(s), env.width, env.height, env.wall_prob) for s in seeds]


def train(cfg: EsConfig, env: EnvConfig | None = None, arch: str = GRU,
          hidden_dim: int = 64, init_std: float = 0.1,
          theta0: np.ndarray | None = None,
          sample_actions: bool = True,
          tau_schedule=None,
          progress_cb=None) -> tuple[PolicyParams, list[dict]]:
    """Full ES loop. Returns the final center parameters and the per-generation
    log rows: generation, best_L, mean_L, success_rate (mean of reached over
    all candidate x maze evaluations).

    Training trials sample actions from the softmax policy (seeded, so runs
    are reproducible); deterministic greedy rollouts from a fresh start have
    nothing to explore with and stall at the timeout penalty. Evaluation and
    analysis always use greedy decoding. tau_schedule(generation) -> float
    sets the sampling temperature per generation (default constant 1);
    annealing it to 0 hands the exploration job over to the trained dynamics
    so the selected policies stay competent under greedy decoding."""
    env = env or EnvConfig()
    dim = param_count(arch, hidden_dim)
    if theta0 is None:
        rng0 = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(11,)))
        theta = init_std * rng0.standard_normal(dim)
    else:
        if theta0.shape != (dim,):
            raise ShapeMismatch(f"theta0 shape {theta0.shape} != ({dim},)")
        theta = theta0.astype(np.float64).copy()
    log = []
    half = cfg.population_size // 2
    for gen in range(cfg.generations):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(13, gen)))
        eps = rng.standard_normal((half, dim))
        noise = np.concatenate([eps, -eps], axis=0)
        thetas = theta + cfg.sigma * noise
        tasks = sample_generation_tasks(cfg.seed, gen, cfg.eval_mazes_per_candidate, env)
        act_rng = (np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(17, gen)))
                   if sample_actions else None)
        tau = float(tau_schedule(gen)) if tau_schedule is not None else 1.0
        res = run_batched_trials(thetas, arch, hidden_dim, tasks,
                                 trial_budget=cfg.trial_budget, timeout=env.timeout,
                                 episodes_per_trial=cfg.episodes_per_trial,
                                 action_rng=act_rng, action_tau=tau)
        fitness = res.L_last.mean(axis=1)
        weights = centered_rank_transform(fitness)
        theta = es_update(theta, noise, weights, cfg.sigma, cfg.learning_rate)
        row = {"generation": gen, "best_L": float(fitness.min()),
               "mean_L": float(fitness.mean()),
               "success_rate": float(res.reached.mean())}
        log.append(row)
        if progress_cb is not None:
            progress_cb(row)
    params = PolicyParams(arch=arch, hidden_dim=hidden_dim, theta=theta)
    return params, log
