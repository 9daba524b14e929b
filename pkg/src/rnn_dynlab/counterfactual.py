"""Canonical-space lesioning of injected hidden states.

A converged cycle state is projected into the shared canonical space,
selected coordinates are replaced with noise, and the result is
inverse-projected and injected as the initial hidden state of a fresh
trial. Comparing convergence times across the four conditions (cold
start, full injection, keep-top, remove-top) tests whether the top
canonical modes carry the navigation-relevant content rather than just
correlating with it.
"""

from dataclasses import dataclass, field

import numpy as np

from .alignment import NEURAL, CcaModel, cca_inverse, cca_project
from .es import _run_trial, policy_act_fn, run_batched_trials
from .maze import DEFAULT_TIMEOUT, MazeTask, StepEvent, generate_maze, shortest_path_len
from .policy import PolicyParams

FULL_INJECTION = "full_injection"
KEEP_TOP = "keep_top"
REMOVE_TOP = "remove_top"
COLD_START = "cold_start"
MODES = (COLD_START, FULL_INJECTION, KEEP_TOP, REMOVE_TOP)


@dataclass(frozen=True)
class InterventionSpec:
    mode: str
    cutoff_k: int = 3
    noise_std: float = 1.0    # in standardized canonical coordinates
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode {self.mode!r} not in {MODES}")
        if self.cutoff_k < 0:
            raise ValueError(f"cutoff_k {self.cutoff_k}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std {self.noise_std}")


def modified_indices(mode: str, cutoff_k: int, k_cca: int) -> np.ndarray:
    """Canonical coordinates replaced by noise under the given mode."""
    if mode == KEEP_TOP:
        return np.arange(cutoff_k, k_cca)
    if mode == REMOVE_TOP:
        return np.arange(0, cutoff_k)
    if mode in (FULL_INJECTION, COLD_START):
        return np.arange(0)
    raise ValueError(f"mode {mode!r}")


def intervene(model: CcaModel, h_star, spec: InterventionSpec) -> np.ndarray:
    """Project, lesion, inverse-project.

    Cold start ignores h_star entirely and returns the zero state. The
    other modes pass through the rank-limited canonical reconstruction,
    so even full injection returns inverse(project(h_star)) rather than
    h_star itself.
    """
    h_star = np.asarray(h_star, dtype=np.float64)
    if spec.mode == COLD_START:
        return np.zeros_like(h_star)
    z = cca_project(model, NEURAL, h_star)
    if spec.cutoff_k > z.size:
        raise ValueError(f"cutoff_k {spec.cutoff_k} > k_cca {z.size}")
    idx = modified_indices(spec.mode, spec.cutoff_k, z.size)
    if idx.size:
        rng = np.random.default_rng(spec.seed)
        z = z.copy()
        z[idx] = spec.noise_std * rng.standard_normal(idx.size)
    return cca_inverse(model, NEURAL, z)


# ---------------------------------------------------------------------------
# convergence measurement

@dataclass
class ConvergenceResult:
    t_conv: int               # cumulative steps through the confirming
                              # episode; equals the budget when censored
    converged: bool
    episodes_to_optimal: int  # completed episodes before the first
                              # confirmed-optimal one; -1 when censored
    task_ref: int = -1


def _confirmed_optimal(lengths, events, spl: int, budget: int):
    """First pair of consecutive optimal goal episodes; censored -> budget."""
    goal = int(StepEvent.GOAL_REACHED)
    cum = 0
    for i in range(len(lengths) - 1):
        cum += lengths[i]
        ok = (lengths[i] == spl and events[i] == goal
              and lengths[i + 1] == spl and events[i + 1] == goal)
        if ok:
            return cum + lengths[i + 1], True, i
    return budget, False, -1


def convergence_time(params: PolicyParams, task: MazeTask, h_init,
                     trial_budget: int = 1000, timeout: int = DEFAULT_TIMEOUT,
                     act_fn=None, task_ref: int = -1) -> ConvergenceResult:
    """Steps until the policy completes two consecutive shortest-path
    episodes, counting through the confirming one. act_fn substitutes
    the policy closure (oracle policies in tests)."""
    spl = shortest_path_len(task)
    fn = act_fn if act_fn is not None else policy_act_fn(params)
    res = _run_trial(task, fn, trial_budget=trial_budget, timeout=timeout,
                     h0=np.asarray(h_init, dtype=np.float64),
                     hidden_dim=params.hidden_dim)
    ev_codes = [int(e) for e in res.episode_events]
    t_conv, converged, idx = _confirmed_optimal(res.episode_lengths, ev_codes,
                                                spl, trial_budget)
    return ConvergenceResult(t_conv=t_conv, converged=converged,
                             episodes_to_optimal=idx, task_ref=task_ref)


# ---------------------------------------------------------------------------
# the four-condition suite

@dataclass
class SkippedTask:
    task_ref: int
    reason: str


@dataclass
class SuiteResult:
    results: dict             # mode -> list[ConvergenceResult]
    medians: dict             # mode -> float
    skipped: list = field(default_factory=list)
    cutoff_k: int = 3

    def t_conv(self, mode: str) -> np.ndarray:
        return np.array([r.t_conv for r in self.results[mode]], dtype=np.int64)


def _batched_convergence(params, tasks, h0_rows, trial_budget, timeout, refs):
    """One condition over all tasks in a single lockstep run."""
    m = len(tasks)
    h0 = np.zeros((1, params.hidden_dim, m))
    for j, row in enumerate(h0_rows):
        h0[0, :, j] = row
    res = run_batched_trials(params.theta[None, :], params.arch,
                             params.hidden_dim, tasks,
                             trial_budget=trial_budget, timeout=timeout,
                             h0=h0, record_events=True)
    ev = res.events[:, 0, :]
    out = []
    for j, task in enumerate(tasks):
        nz = np.nonzero(ev[:, j])[0]
        lengths, codes, prev = [], [], -1
        for t in nz:
            lengths.append(int(t - prev))
            codes.append(int(ev[t, j]))
            prev = t
        spl = shortest_path_len(task)
        t_conv, conv, idx = _confirmed_optimal(lengths, codes, spl, trial_budget)
        out.append(ConvergenceResult(t_conv=t_conv, converged=conv,
                                     episodes_to_optimal=idx, task_ref=refs[j]))
    return out


def counterfactual_suite(params: PolicyParams, model: CcaModel,
                         cycles_by_task: dict, task_seeds,
                         cutoff_k: int = 3, noise_std: float = 1.0,
                         trial_budget: int = 1000,
                         timeout: int = DEFAULT_TIMEOUT,
                         seed: int = 0) -> SuiteResult:
    """Run all four conditions per task; paired noise draws per task.

    cycles_by_task maps task seed -> validated cycle whose states[0] is
    the injected h_star. Tasks without a cycle are recorded as skipped,
    not errors.
    """
    tasks, h_stars, refs, skipped = [], [], [], []
    for ts in task_seeds:
        cyc = cycles_by_task.get(ts)
        if cyc is None:
            skipped.append(SkippedTask(task_ref=ts, reason="no validated cycle"))
            continue
        tasks.append(generate_maze(ts))
        h_stars.append(np.asarray(cyc.states[0], dtype=np.float64))
        refs.append(ts)
    results = {}
    for mode in MODES:
        rows = []
        for j, h_star in enumerate(h_stars):
            spec = InterventionSpec(
                mode=mode, cutoff_k=cutoff_k, noise_std=noise_std,
                seed=int(np.random.SeedSequence(entropy=seed, spawn_key=(23, j))
                         .generate_state(1)[0]))
            rows.append(intervene(model, h_star, spec))
        results[mode] = _batched_convergence(params, tasks, rows, trial_budget,
                                             timeout, refs) if tasks else []
    medians = {m: float(np.median([r.t_conv for r in results[m]]))
               if results[m] else float("nan") for m in MODES}
    return SuiteResult(results=results, medians=medians, skipped=skipped,
                       cutoff_k=cutoff_k)
