"""Closed-loop joint rollouts, finite-time divergence-rate estimation, and
perturbation-recovery experiments.

Indexing convention for Trajectory arrays: at index t, positions[t] is the
cell the agent observed, hidden[t] is the updated memory that produced
actions[t], and events[t] is the environment's response to that action.
Advancing the memory from step t to t+1 therefore uses observations[t+1]:
h_{t+1} = f(h_t, o_{t+1}).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maze import (DEFAULT_TIMEOUT, EnvState, MazeTask, StepEvent, env_step,
                   observe)
from .policy import PolicyParams, greedy_action, policy_logits, recurrent_step


class DegenerateSeparation(RuntimeError):
    """Shadow separation underflowed; eps too small for this trajectory."""


@dataclass
class JointState:
    env: EnvState
    h: np.ndarray


@dataclass
class Trajectory:
    task: MazeTask
    positions: np.ndarray          # (n, 2) int
    steps_in_episode: np.ndarray   # (n,) int
    episode_index: np.ndarray      # (n,) int
    hidden: np.ndarray             # (n, H)
    observations: np.ndarray       # (n, 27)
    actions: np.ndarray            # (n,) int
    events: np.ndarray             # (n,) uint8 StepEvent codes

    @property
    def task_ref(self) -> int:
        return self.task.seed

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def states(self) -> list[JointState]:
        return [JointState(env=EnvState(tuple(self.positions[t]),
                                        int(self.steps_in_episode[t]),
                                        int(self.episode_index[t])),
                           h=self.hidden[t]) for t in range(len(self))]


@dataclass
class Episode:
    start: int            # first step index
    end: int              # one past the terminating step
    event: StepEvent
    actions: np.ndarray

    @property
    def length(self) -> int:
        return self.end - self.start


def rollout(params: PolicyParams, task: MazeTask, total_steps: int,
            reset_hidden_on_timeout: bool = True,
            timeout: int = DEFAULT_TIMEOUT,
            h0: np.ndarray | None = None) -> Trajectory:
    """Closed loop observe -> memory update -> greedy action -> env step.

    Memory is carried across goal resets; zeroed on timeout when
    reset_hidden_on_timeout (the trial protocol's soft failure reset).
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    hd = params.hidden_dim
    h = np.zeros(hd) if h0 is None else np.array(h0, dtype=np.float64)
    state = EnvState(task.start)
    pos = np.zeros((total_steps, 2), dtype=np.int64)
    sie = np.zeros(total_steps, dtype=np.int64)
    epi = np.zeros(total_steps, dtype=np.int64)
    hid = np.zeros((total_steps, hd))
    obs = np.zeros((total_steps, params.input_dim))
    act = np.zeros(total_steps, dtype=np.int64)
    evs = np.zeros(total_steps, dtype=np.uint8)
    for t in range(total_steps):
        o = observe(task, state.position)
        h = recurrent_step(params, h, o)
        a = greedy_action(policy_logits(params, h))
        pos[t] = state.position
        sie[t] = state.steps_in_episode
        epi[t] = state.episode_index
        hid[t] = h
        obs[t] = o
        act[t] = a
        state, ev = env_step(task, state, a, timeout)
        evs[t] = int(ev)
        if ev == StepEvent.TIMEOUT and reset_hidden_on_timeout:
            h = np.zeros(hd)
    return Trajectory(task=task, positions=pos, steps_in_episode=sie,
                      episode_index=epi, hidden=hid, observations=obs,
                      actions=act, events=evs)


def episodes_of(traj: Trajectory) -> list[Episode]:
    """Complete episodes only; a trailing unfinished episode is dropped."""
    out = []
    start = 0
    for t in range(len(traj)):
        if traj.events[t] != StepEvent.FLOW:
            out.append(Episode(start=start, end=t + 1,
                               event=StepEvent(int(traj.events[t])),
                               actions=traj.actions[start:t + 1].copy()))
            start = t + 1
    return out


@dataclass
class ConvergencePoint:
    t0: int          # first step index after the confirming repeat
    period: int      # steps per repeated episode loop
    episode_start: int  # index of the first of the identical episodes


def convergence_point(traj: Trajectory, min_repeats: int = 3) -> ConvergencePoint | None:
    """First point where min_repeats consecutive complete episodes have
    identical action sequences (and events). Returns the step after the
    last of the repeats, i.e. the start of the next episode loop."""
    eps = episodes_of(traj)
    for i in range(len(eps) - min_repeats + 1):
        ref = eps[i]
        same = all(e.event == ref.event and len(e.actions) == len(ref.actions)
                   and np.array_equal(e.actions, ref.actions)
                   for e in eps[i + 1:i + min_repeats])
        if same:
            return ConvergencePoint(t0=eps[i + min_repeats - 1].end,
                                    period=ref.length,
                                    episode_start=eps[i].start)
    return None


@dataclass
class FtliRecord:
    """Benettin-style finite-time divergence estimate.

    delta_series[0] is the injected separation eps; delta_series[k] for
    k >= 1 is the separation measured after the k-th map application, each
    application starting from a separation renormalized back to eps. The
    rate is therefore recomputable as
        lam = mean(log(delta_series[1:] / delta_series[0])),
    the average of the K-1 per-step log growth factors.
    """
    t0: int
    K: int
    lam: float
    delta_series: np.ndarray  # (K,)


def ftli_from_stream(step_fn, h0: np.ndarray, inputs, K: int, eps: float,
                     direction: np.ndarray, t0: int = 0) -> FtliRecord:
    """Core estimator on an arbitrary driven map step_fn(h, u) -> h'.

    inputs supplies the K-1 drive values (observations for the policy map;
    ignored entries for synthetic maps)."""
    if K < 2:
        raise ValueError("K must be >= 2")
    if eps <= 0:
        raise ValueError("eps must be positive")
    h_nom = np.array(h0, dtype=np.float64)
    u = np.asarray(direction, dtype=np.float64)
    u = u / np.linalg.norm(u)
    h_sh = h_nom + eps * u
    deltas = np.empty(K)
    deltas[0] = eps
    acc = 0.0
    for k in range(1, K):
        x = inputs[k - 1]
        h_nom = step_fn(h_nom, x)
        h_sh = step_fn(h_sh, x)
        diff = h_sh - h_nom
        d = float(np.linalg.norm(diff))
        if d < 1e-300:
            raise DegenerateSeparation(f"separation underflow at step {k}")
        deltas[k] = d
        acc += np.log(d / eps)
        h_sh = h_nom + (eps / d) * diff
    return FtliRecord(t0=t0, K=K, lam=acc / (K - 1), delta_series=deltas)


def ftli(params: PolicyParams, task: MazeTask, t0: int | None = None,
         K: int = 1000, eps: float = 1e-6, seed: int = 0,
         timeout: int = DEFAULT_TIMEOUT, convergence_budget: int = 2000,
         burn_in: int = 200) -> FtliRecord:
    """Divergence rate of the hidden dynamics along the policy's own
    trajectory. The shadow state shares the maze and position stream, so
    the measured separation is purely neural.

    If t0 is None the window starts where the behavior has converged
    (three identical consecutive episodes), falling back to burn_in for
    policies that never settle."""
    need_probe = t0 is None
    total = (convergence_budget if need_probe else t0) + K
    traj = rollout(params, task, total, timeout=timeout)
    if need_probe:
        cp = convergence_point(traj)
        t0 = cp.t0 if cp is not None and cp.t0 <= convergence_budget else burn_in
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(params.hidden_dim)

    def step(h, o):
        return recurrent_step(params, h, o)

    inputs = traj.observations[t0 + 1:t0 + K]
    return ftli_from_stream(step, traj.hidden[t0], inputs, K, eps, direction, t0=t0)


@dataclass
class FtliSummary:
    lambdas: np.ndarray
    median: float
    fraction_negative: float
    task_seeds: list
    records: list = field(default_factory=list)


def ftli_histogram(params: PolicyParams, n_tasks: int, K: int = 1000,
                   eps: float = 1e-6, seed: int = 0, task_seeds=None,
                   env=None, timeout: int = DEFAULT_TIMEOUT) -> FtliSummary:
    """One divergence rate per sampled task, windows starting post-convergence."""
    from .maze import EnvConfig, generate_maze
    env = env or EnvConfig()
    if task_seeds is None:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(21,)))
        task_seeds = [int(s) for s in rng.integers(0, 2 ** 62, size=n_tasks)]
    else:
        task_seeds = list(task_seeds)[:n_tasks] if n_tasks else list(task_seeds)
    records = []
    for i, ts in enumerate(task_seeds):
        task = generate_maze(ts, env.width, env.height, env.wall_prob)
        records.append(ftli(params, task, K=K, eps=eps, seed=seed + 1000 + i,
                            timeout=timeout))
    lams = np.array([r.lam for r in records])
    return FtliSummary(lambdas=lams,
                       median=float(np.median(lams)) if len(lams) else float("nan"),
                       fraction_negative=float(np.mean(lams < 0)) if len(lams) else float("nan"),
                       task_seeds=task_seeds, records=records)


@dataclass
class RecoveryCurve:
    eps: float
    variant: int
    distances: np.ndarray    # (horizon+1,) distance to nearest nominal cycle point
    initial_distance: float
    recovered_at: int        # first step with distance < 0.1 * initial, -1 if never
    hidden: np.ndarray | None = None  # (horizon, H) when recording is requested


@dataclass
class RecoveryReport:
    period: int
    t_star: int
    curves: list


class NotConverged(RuntimeError):
    pass


def perturb_and_recover(params: PolicyParams, task: MazeTask,
                        t_star: int | None = None,
                        eps_list=(0.1, 0.25, 0.5), n_variants: int = 10,
                        periods: int = 8, seed: int = 0,
                        timeout: int = DEFAULT_TIMEOUT,
                        total_steps: int = 3000,
                        record_hidden: bool = False) -> RecoveryReport:
    """Kick the hidden state off the converged cycle by eps * N(0, I) draws
    and track the distance back to the nominal cycle, closed loop."""
    traj = rollout(params, task, total_steps, timeout=timeout)
    cp = convergence_point(traj)
    if cp is None:
        raise NotConverged(f"no converged cycle within {total_steps} steps")
    T = cp.period
    cycle = traj.hidden[cp.t0:cp.t0 + T]
    if t_star is None:
        t_star = cp.t0 + T
    if t_star + 1 >= len(traj):
        raise ValueError("t_star too close to the end of the probe rollout")
    horizon = periods * T
    rng = np.random.default_rng(seed)

    def dist_to_cycle(h):
        return float(np.min(np.linalg.norm(cycle - h, axis=1)))

    curves = []
    for eps in eps_list:
        for v in range(n_variants):
            delta = rng.standard_normal(params.hidden_dim)
            h = traj.hidden[t_star] + eps * delta
            state = EnvState(tuple(traj.positions[t_star + 1]),
                             int(traj.steps_in_episode[t_star + 1]),
                             int(traj.episode_index[t_star + 1]))
            d = np.empty(horizon + 1)
            d[0] = dist_to_cycle(h)
            trace = np.empty((horizon, params.hidden_dim)) if record_hidden else None
            for k in range(1, horizon + 1):
                o = observe(task, state.position)
                h = recurrent_step(params, h, o)
                a = greedy_action(policy_logits(params, h))
                if trace is not None:
                    trace[k - 1] = h
                d[k] = dist_to_cycle(h)
                state, ev = env_step(task, state, a, timeout)
                if ev == StepEvent.TIMEOUT:
                    h = np.zeros_like(h)
            thresh = 0.1 * d[0]
            below = np.nonzero(d < thresh)[0] if d[0] > 0 else np.array([0])
            curves.append(RecoveryCurve(eps=float(eps), variant=v, distances=d,
                                        initial_distance=float(d[0]),
                                        recovered_at=int(below[0]) if len(below) else -1,
                                        hidden=trace))
    return RecoveryReport(period=T, t_star=t_star, curves=curves)
