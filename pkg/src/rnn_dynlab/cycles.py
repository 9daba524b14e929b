"""Limit-cycle extraction by periodic-drive entrainment.

A converged closed-loop trajectory repeats one episode forever; its
observation sequence becomes an open-loop periodic drive. Entraining hidden
states under that drive and keeping only orbits that (a) close up and
(b) decode the drive's own action sequence yields cycles that can sustain
themselves in closed loop. Orbits passing (a) but not (b) are ghosts:
stable echoes of the forcing that fall apart the moment they must produce
the actions that generate it.

Capture convention: states[i] is the hidden state BEFORE consuming
observation i, actions[i] the greedy decode AFTER consuming it. states[0]
is therefore the episode-start hidden state (phase 0), and applying one
full period to states[T-1] must return to states[0].
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .maze import MazeTask
from .policy import GRU, PolicyParams, greedy_action, policy_logits, recurrent_step
from .rollout import NotConverged, Trajectory, episodes_of


class Empty(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass
class DriveSpec:
    obs_cycle: np.ndarray        # (T, obs_dim)
    target_actions: np.ndarray   # (T,)
    source_task: int             # task seed

    def __post_init__(self):
        self.obs_cycle = np.asarray(self.obs_cycle, dtype=np.float64)
        self.target_actions = np.asarray(self.target_actions, dtype=np.int64)
        if len(self.obs_cycle) != len(self.target_actions):
            raise LengthMismatch(
                f"{len(self.obs_cycle)} observations vs {len(self.target_actions)} actions")

    @property
    def period(self) -> int:
        return len(self.target_actions)


@dataclass
class LimitCycle:
    period: int
    states: np.ndarray         # (T, H) pre-update states, phase 0 first
    actions: np.ndarray        # (T,)
    observations: np.ndarray   # (T, obs_dim) the drive
    closure_error: float
    centroid: np.ndarray       # (H,)
    consistent: bool


@dataclass
class NotClosed:
    delta: float


@dataclass
class Inconsistent:
    mismatches: np.ndarray     # positions where decoded != target
    cycle: LimitCycle          # the ghost orbit, consistent=False


def minimal_period(tokens) -> int:
    """Smallest p dividing len(tokens) with tokens[i] == tokens[i mod p]."""
    n = len(tokens)
    for p in range(1, n):
        if n % p == 0 and all(tokens[i] == tokens[i % p] for i in range(n)):
            return p
    return n


def extract_drive(traj: Trajectory, min_repeats: int = 3) -> DriveSpec:
    """Drive = the final complete episode's observation/action slices,
    reduced to the minimal period of the combined (obs, action) sequence."""
    eps = episodes_of(traj)
    if len(eps) < min_repeats:
        raise NotConverged(f"only {len(eps)} complete episodes, need {min_repeats}")
    tail = eps[-min_repeats:]
    ref = tail[-1]
    for e in tail[:-1]:
        if e.event != ref.event or not np.array_equal(e.actions, ref.actions):
            raise NotConverged("last episodes do not repeat identically")
    obs = traj.observations[ref.start:ref.end]
    acts = traj.actions[ref.start:ref.end]
    tokens = [(obs[i].tobytes(), int(acts[i])) for i in range(len(acts))]
    p = minimal_period(tokens)
    return DriveSpec(obs_cycle=obs[:p].copy(), target_actions=acts[:p].copy(),
                     source_task=traj.task.seed)


def pkd_entrain(params: PolicyParams, drive: DriveSpec, h0: np.ndarray,
                warmup: int) -> np.ndarray:
    """Apply the drive cyclically for exactly `warmup` steps."""
    h = np.array(h0, dtype=np.float64)
    T = drive.period
    for k in range(warmup):
        h = recurrent_step(params, h, drive.obs_cycle[k % T])
    return h


def capture_and_check(params: PolicyParams, drive: DriveSpec, h: np.ndarray,
                      eps_closure: float = 1e-4):
    """Roll one period from h; returns a LimitCycle, or NotClosed /
    Inconsistent (the latter embedding the ghost orbit)."""
    T = drive.period
    states = np.empty((T, params.hidden_dim))
    actions = np.empty(T, dtype=np.int64)
    cur = np.array(h, dtype=np.float64)
    for i in range(T):
        states[i] = cur
        cur = recurrent_step(params, cur, drive.obs_cycle[i])
        actions[i] = greedy_action(policy_logits(params, cur))
    delta = float(np.linalg.norm(cur - states[0]))
    if delta > eps_closure:
        return NotClosed(delta=delta)
    consistent = bool(np.array_equal(actions, drive.target_actions))
    cycle = LimitCycle(period=T, states=states, actions=actions,
                       observations=drive.obs_cycle.copy(), closure_error=delta,
                       centroid=states.mean(axis=0), consistent=consistent)
    if not consistent:
        return Inconsistent(mismatches=np.nonzero(actions != drive.target_actions)[0],
                            cycle=cycle)
    return cycle


def cycle_centroid(cycle: LimitCycle) -> np.ndarray:
    if len(cycle.states) == 0:
        raise Empty("cycle has no states")
    return cycle.states.mean(axis=0)


def ghost_readout_params(params: PolicyParams, seed: int = 0) -> PolicyParams:
    """Same recurrent dynamics, freshly random readout: entrainment survives,
    decoded actions do not."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(41,)))
    theta = params.theta.copy()
    a, hd = params.n_actions, params.hidden_dim
    scale = float(params.W_out.std()) or 1.0
    w_new = scale * rng.standard_normal((a, hd))
    b_new = scale * rng.standard_normal(a)
    theta[-(a * hd + a):-a] = w_new.ravel()
    theta[-a:] = b_new
    return PolicyParams(arch=params.arch, hidden_dim=hd, theta=theta,
                        input_dim=params.input_dim, n_actions=a)


# ---------------------------------------------------------------------------
# batched probe machinery


def _phase_terms(params: PolicyParams, obs_cycle: np.ndarray):
    """Per-phase constant input contributions, so the entrainment loop is
    pure (N,H)x(H,H) work."""
    if params.arch == GRU:
        cz = obs_cycle @ params.W_z.T + params.b_z
        cr = obs_cycle @ params.W_r.T + params.b_r
        cc = obs_cycle @ params.W_c.T + params.b_c
        return cz, cr, cc
    cin = obs_cycle @ params.W_in.T + params.b_v
    return (cin,)


def _entrain_batch(params: PolicyParams, drive: DriveSpec, H0: np.ndarray,
                   steps: int) -> np.ndarray:
    T = drive.period
    terms = _phase_terms(params, drive.obs_cycle)
    h = np.array(H0, dtype=np.float64)
    if params.arch == GRU:
        cz, cr, cc = terms
        uz, ur, uc = params.U_z.T, params.U_r.T, params.U_c.T
        for k in range(steps):
            i = k % T
            z = 1.0 / (1.0 + np.exp(-(h @ uz + cz[i])))
            r = 1.0 / (1.0 + np.exp(-(h @ ur + cr[i])))
            cand = np.tanh((r * h) @ uc + cc[i])
            h = (1.0 - z) * h + z * cand
    else:
        cin, = terms
        w = params.W_rec_v.T
        for k in range(steps):
            h = np.tanh(h @ w + cin[k % T])
    return h


@dataclass
class AcfResult:
    library: list              # unique consistent cycles, probe order
    counts: list               # probes merged into each library entry
    n_probes: int
    n_closed: int
    n_consistent: int
    warmup_used: int
    ghosts: list = field(default_factory=list)

    @property
    def fraction_closed(self) -> float:
        return self.n_closed / self.n_probes if self.n_probes else 0.0

    @property
    def fraction_consistent(self) -> float:
        return self.n_consistent / self.n_probes if self.n_probes else 0.0


def _match_cycle(states: np.ndarray, reps: list, tol: float) -> int | None:
    """Index of the first representative whose orbit matches (min over cyclic
    shifts of the max pointwise distance below tol), else None."""
    T = len(states)
    for idx, rep in enumerate(reps):
        if len(rep) != T:
            continue
        best = np.inf
        for s in range(T):
            d = float(np.max(np.linalg.norm(np.roll(rep, -s, axis=0) - states, axis=1)))
            best = min(best, d)
            if best < tol:
                break
        if best < tol:
            return idx
    return None


def acf_sample(params: PolicyParams, drive: DriveSpec, n: int,
               warmup: int = 1000, eps_closure: float = 1e-4, seed: int = 0,
               keep_ghosts: bool = False, dedup_tol: float = 1e-3) -> AcfResult:
    """Probe the driven dynamics from n unit-Gaussian hidden states.

    Warmup is rounded up to whole drive periods so every capture starts at
    phase 0; the capture itself is one further period. Results are bitwise
    reproducible for a given seed.
    """
    T = drive.period
    hd = params.hidden_dim
    warm = T * math.ceil(warmup / T) if warmup > 0 else 0
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(31,)))
    if n == 0:
        return AcfResult([], [], 0, 0, 0, warm)
    H0 = rng.standard_normal((n, hd))
    h = _entrain_batch(params, drive, H0, warm)

    # one-period capture, batched
    states = np.empty((T, n, hd))
    terms = _phase_terms(params, drive.obs_cycle)
    if params.arch == GRU:
        cz, cr, cc = terms
        uz, ur, uc = params.U_z.T, params.U_r.T, params.U_c.T
    post = np.empty((T, n, hd))
    for i in range(T):
        states[i] = h
        if params.arch == GRU:
            z = 1.0 / (1.0 + np.exp(-(h @ uz + cz[i])))
            r = 1.0 / (1.0 + np.exp(-(h @ ur + cr[i])))
            cand = np.tanh((r * h) @ uc + cc[i])
            h = (1.0 - z) * h + z * cand
        else:
            h = np.tanh(h @ params.W_rec_v.T + terms[0][i])
        post[i] = h
    closure = np.linalg.norm(h - states[0], axis=1)
    logits = post @ params.W_out.T + params.b_out
    actions = np.argmax(logits, axis=2)          # (T, n)
    closed = closure <= eps_closure
    consistent = closed & np.all(actions == drive.target_actions[:, None], axis=0)

    library, counts, ghosts = [], [], []
    reps = []
    ghost_reps = []
    for j in range(n):
        if not closed[j]:
            continue
        st = np.ascontiguousarray(states[:, j])
        if consistent[j]:
            m = _match_cycle(st, reps, dedup_tol)
            if m is None:
                cyc = LimitCycle(period=T, states=st, actions=actions[:, j].copy(),
                                 observations=drive.obs_cycle.copy(),
                                 closure_error=float(closure[j]),
                                 centroid=st.mean(axis=0), consistent=True)
                reps.append(st)
                library.append(cyc)
                counts.append(1)
            else:
                counts[m] += 1
        elif keep_ghosts:
            m = _match_cycle(st, ghost_reps, dedup_tol)
            if m is None:
                ghost_reps.append(st)
                ghosts.append(LimitCycle(period=T, states=st,
                                         actions=actions[:, j].copy(),
                                         observations=drive.obs_cycle.copy(),
                                         closure_error=float(closure[j]),
                                         centroid=st.mean(axis=0), consistent=False))
    return AcfResult(library=library, counts=counts, n_probes=n,
                     n_closed=int(closed.sum()), n_consistent=int(consistent.sum()),
                     warmup_used=warm, ghosts=ghosts)


# ---------------------------------------------------------------------------
# serialization


def cycle_to_dict(cycle: LimitCycle) -> dict:
    return {
        "period": cycle.period,
        "states": cycle.states.tolist(),
        "actions": cycle.actions.tolist(),
        "observations": cycle.observations.tolist(),
        "closure_error": cycle.closure_error,
        "centroid": cycle.centroid.tolist(),
        "consistent": cycle.consistent,
    }


def cycle_from_dict(d: dict) -> LimitCycle:
    return LimitCycle(period=int(d["period"]),
                      states=np.array(d["states"], dtype=np.float64),
                      actions=np.array(d["actions"], dtype=np.int64),
                      observations=np.array(d["observations"], dtype=np.float64),
                      closure_error=float(d["closure_error"]),
                      centroid=np.array(d["centroid"], dtype=np.float64),
                      consistent=bool(d["consistent"]))


def drive_to_dict(drive: DriveSpec) -> dict:
    return {"obs_cycle": drive.obs_cycle.tolist(),
            "target_actions": drive.target_actions.tolist(),
            "source_task": drive.source_task}


def drive_from_dict(d: dict) -> DriveSpec:
    return DriveSpec(obs_cycle=np.array(d["obs_cycle"], dtype=np.float64),
                     target_actions=np.array(d["target_actions"], dtype=np.int64),
                     source_task=int(d["source_task"]))


def save_cycle_library(dirpath: str, results: dict) -> None:
    """results: task seed -> AcfResult. Writes one JSON per cycle plus an
    index file with per-task statistics."""
    os.makedirs(dirpath, exist_ok=True)
    index = {"tasks": []}
    for seed in sorted(results):
        res = results[seed]
        entry = {"task_seed": seed, "n_probes": res.n_probes,
                 "n_closed": res.n_closed, "n_consistent": res.n_consistent,
                 "warmup_used": res.warmup_used, "cycles": []}
        for k, (cyc, cnt) in enumerate(zip(res.library, res.counts)):
            name = f"cycle_{seed}_{k}.json"
            with open(os.path.join(dirpath, name), "w") as f:
                json.dump(cycle_to_dict(cyc), f, sort_keys=True)
            entry["cycles"].append({"file": name, "count": cnt,
                                    "period": cyc.period,
                                    "closure_error": cyc.closure_error})
        index["tasks"].append(entry)
    with open(os.path.join(dirpath, "index.json"), "w") as f:
        json.dump(index, f, sort_keys=True, indent=1)


def load_cycle_library(dirpath: str) -> list:
    """Flat list of (task_seed, LimitCycle, count) in index order."""
    with open(os.path.join(dirpath, "index.json")) as f:
        index = json.load(f)
    out = []
    for entry in index["tasks"]:
        for c in entry["cycles"]:
            with open(os.path.join(dirpath, c["file"])) as f:
                out.append((entry["task_seed"], cycle_from_dict(json.load(f)),
                            c["count"]))
    return out
