"""Dataset assembly and the reproduction chain.

The alignment dataset pairs one validated limit cycle per maze: the
neural row is the centroid of the hidden states over one period of the
policy's converged episode loop, the behavior row is the flattened
potential field of the physical cells visited during that period. A
batched event scan filters out mazes where the greedy policy never
locks into a repeating goal loop before any scalar state capture is
spent on them.

`run_repro` chains every stage (train, held-out eval, divergence rates,
dataset, entrainment library, alignment + control, field sweep,
counterfactual injections) into one output directory with a manifest of
artifact checksums. All artifacts are pure functions of the config, so
re-running a config reproduces every file byte for byte; wall-clock
timings live only in the manifest.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import alignment as al
from . import bpf as bp
from . import cycles as cy
from .counterfactual import counterfactual_suite
from .config import (ExperimentConfig, RunManifest, config_hash, save_config,
                     write_manifest)
from .es import run_batched_trials, train
from .maze import (DEFAULT_TIMEOUT, EnvConfig, MazeTask, StepEvent,
                   generate_maze, shortest_path_len)
from .policy import PolicyParams, load_checkpoint, param_count, save_checkpoint
from .rollout import ftli_histogram, rollout
from .svgplot import HISTOGRAM, SPECTRUM, PlotStyle, emit_plot

GOAL = int(StepEvent.GOAL_REACHED)


# ---------------------------------------------------------------------------
# converged-cycle dataset

@dataclass
class CycleSample:
    """One period of the converged episode loop on one maze."""
    task_seed: int
    t0: int                  # step index where the captured loop starts
    period: int
    states: np.ndarray       # (T, H) pre-update hidden states, phase 0 first
    observations: np.ndarray  # (T, obs_dim)
    cells: np.ndarray        # (T, 2) maze cells visited
    actions: np.ndarray      # (T,)
    closure: float           # |h(t0+T) - h(t0)|
    centroid: np.ndarray     # (H,)


def _column_episodes(ev: np.ndarray) -> list:
    """(code, start, end) triples of complete episodes in one event column."""
    out = []
    start = 0
    for t in np.nonzero(ev)[0]:
        out.append((int(ev[t]), start, int(t) + 1))
        start = int(t) + 1
    return out


def _column_convergence(ev: np.ndarray, act: np.ndarray,
                        min_repeats: int = 3):
    """(t0, period) after min_repeats identical goal episodes, else None."""
    eps = _column_episodes(ev)
    for i in range(len(eps) - min_repeats + 1):
        code, s0, e0 = eps[i]
        if code != GOAL:
            continue
        ref = act[s0:e0]
        ok = True
        for code2, s2, e2 in eps[i + 1:i + min_repeats]:
            if code2 != GOAL or e2 - s2 != e0 - s0 or not np.array_equal(act[s2:e2], ref):
                ok = False
                break
        if ok:
            return eps[i + min_repeats - 1][2], e0 - s0
    return None


def prefilter_converged(params: PolicyParams, tasks: list, budget: int,
                        timeout: int = DEFAULT_TIMEOUT,
                        min_repeats: int = 3) -> list:
    """Batched greedy scan; per task (t0, period) or None."""
    res = run_batched_trials(params.theta[None, :], params.arch,
                             params.hidden_dim, tasks, trial_budget=budget,
                             timeout=timeout, record_events=True,
                             record_actions=True)
    out = []
    for j in range(len(tasks)):
        out.append(_column_convergence(res.events[:, 0, j],
                                       res.actions[:, 0, j], min_repeats))
    return out


def capture_sample(params: PolicyParams, task: MazeTask, t0: int, period: int,
                   timeout: int = DEFAULT_TIMEOUT,
                   closure_tol: float = 1e-3,
                   max_rounds: int = 150) -> CycleSample | None:
    """Resume at the loop boundary and roll whole periods until the
    memory closes on itself, then capture that window.

    At a goal reset the environment returns to the start cell with the
    memory carried over, so the joint state at every loop boundary is
    (start, h); resuming a rollout with h0 = h reproduces the loop
    exactly. Returns None if the behavior unlocks mid-settle or the
    memory never closes within max_rounds (quasiperiodic drift rather
    than a limit cycle)."""
    if t0 < 1:
        return None
    pre = rollout(params, task, t0, timeout=timeout)
    if int(pre.events[t0 - 1]) != GOAL:
        return None
    h = pre.hidden[t0 - 1].copy()
    ref_actions = None
    base = t0
    for _ in range(max_rounds):
        w = rollout(params, task, period, timeout=timeout, h0=h)
        # exactly one episode per window, ending in a goal hit
        if int(w.events[period - 1]) != GOAL or np.count_nonzero(w.events[:period - 1]):
            return None
        if ref_actions is None:
            ref_actions = w.actions.copy()
        elif not np.array_equal(w.actions, ref_actions):
            return None
        h_next = w.hidden[period - 1].copy()
        closure = float(np.linalg.norm(h_next - h))
        if closure <= closure_tol:
            # states[i] is the memory before observation i of the loop
            states = np.vstack([h[None, :], w.hidden[:period - 1]])
            return CycleSample(task_seed=task.seed, t0=base, period=period,
                               states=states,
                               observations=w.observations.copy(),
                               cells=w.positions.copy(),
                               actions=w.actions.copy(),
                               closure=closure, centroid=states.mean(axis=0))
        h = h_next
        base += period
    return None


def sample_to_cycle(s: CycleSample) -> cy.LimitCycle:
    return cy.LimitCycle(period=s.period, states=s.states, actions=s.actions,
                         observations=s.observations, closure_error=s.closure,
                         centroid=s.centroid, consistent=True)


@dataclass
class AlignmentDataset:
    samples: list
    neural: np.ndarray            # (n, H) cycle centroids
    fields: np.ndarray            # (n, grid_h*grid_w) flattened potentials
    grid_trajectories: list       # per sample, (T, 2) grid points
    bpf_config: bp.BpfConfig
    n_scanned: int


def collect_dataset(params: PolicyParams, env: EnvConfig, n_pairs: int,
                    bpf_cfg: bp.BpfConfig | None = None, seed: int = 0,
                    budget: int = 1500, chunk: int = 256,
                    closure_tol: float = 1e-3,
                    max_scanned: int | None = None) -> AlignmentDataset:
    """Scan procedurally generated mazes until n_pairs converged-cycle
    samples are collected (or max_scanned mazes were tried)."""
    bpf_cfg = bpf_cfg or bp.BpfConfig()
    if max_scanned is None:
        max_scanned = max(25 * n_pairs, 200)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(51,)))
    samples = []
    scanned = 0
    while len(samples) < n_pairs and scanned < max_scanned:
        k = min(chunk, max_scanned - scanned)
        seeds = rng.integers(1, 2 ** 62, size=k)
        tasks = [generate_maze(int(s), env.width, env.height, env.wall_prob)
                 for s in seeds]
        scanned += k
        hits = prefilter_converged(params, tasks, budget, env.timeout)
        for task, hit in zip(tasks, hits):
            if hit is None or len(samples) >= n_pairs:
                continue
            s = capture_sample(params, task, hit[0], hit[1], env.timeout,
                               closure_tol=closure_tol)
            if s is not None:
                samples.append(s)
    grid_trajs = [bp.cells_to_grid_points(s.cells) for s in samples]
    fields = [bp.build_bpf(g, bpf_cfg).values.ravel() for g in grid_trajs]
    hd = params.hidden_dim
    neural = (np.stack([s.centroid for s in samples])
              if samples else np.zeros((0, hd)))
    fmat = (np.stack(fields)
            if fields else np.zeros((0, bpf_cfg.grid_h * bpf_cfg.grid_w)))
    return AlignmentDataset(samples=samples, neural=neural, fields=fmat,
                            grid_trajectories=grid_trajs, bpf_config=bpf_cfg,
                            n_scanned=scanned)


def control_centroids(params: PolicyParams, samples: list, seed: int = 0,
                      margin: float = 0.1) -> np.ndarray:
    """Matched control rows: centroids of action-constrained random
    states built from each sample's own action sequence."""
    rows = np.zeros((len(samples), params.hidden_dim))
    for i, s in enumerate(samples):
        sd = int(np.random.SeedSequence(entropy=seed, spawn_key=(61, i)).generate_state(1)[0])
        states = al.pseudo_manifold(s.actions, params.W_out, params.b_out,
                                    dim=params.hidden_dim, margin=margin,
                                    seed=sd)
        rows[i] = states.mean(axis=0)
    return rows


# ---------------------------------------------------------------------------
# evaluation stages

def final_episode_optimal(events: np.ndarray, spl: int) -> bool:
    """Last complete episode reached the goal along a shortest path."""
    nz = np.nonzero(events)[0]
    if len(nz) == 0:
        return False
    t_star = int(nz[-1])
    prev = int(nz[-2]) if len(nz) > 1 else -1
    return int(events[t_star]) == GOAL and t_star - prev == spl


def heldout_eval(params: PolicyParams, env: EnvConfig, n_tasks: int = 100,
                 seed_base: int = 1_000_000, trial_budget: int = 1000,
                 baseline_std: float = 0.1, baseline_seed: int = 0) -> dict:
    """Greedy evaluation on fixed held-out mazes plus an untrained
    random-parameter baseline of the same architecture."""
    tasks = [generate_maze(seed_base + i, env.width, env.height, env.wall_prob)
             for i in range(n_tasks)]
    spl = [shortest_path_len(t) for t in tasks]

    def stats(p: PolicyParams) -> tuple:
        res = run_batched_trials(p.theta[None, :], p.arch, p.hidden_dim,
                                 tasks, trial_budget=trial_budget,
                                 timeout=env.timeout, record_events=True)
        opt = sum(final_episode_optimal(res.events[:, 0, j], spl[j])
                  for j in range(n_tasks))
        return opt / n_tasks, float(res.reached[0].mean())

    rng = np.random.default_rng(np.random.SeedSequence(entropy=baseline_seed,
                                                       spawn_key=(77,)))
    base = PolicyParams(params.arch, params.hidden_dim,
                        baseline_std * rng.standard_normal(len(params.theta)))
    opt_frac, succ = stats(params)
    b_opt, b_succ = stats(base)
    return {"n_tasks": n_tasks, "optimal_final_fraction": opt_frac,
            "success_rate": succ, "baseline_optimal_final_fraction": b_opt,
            "baseline_success_rate": b_succ}


def random_baseline_params(params: PolicyParams, std: float = 1.0,
                           seed: int = 0) -> PolicyParams:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(71,)))
    dim = param_count(params.arch, params.hidden_dim)
    return PolicyParams(params.arch, params.hidden_dim,
                        std * rng.standard_normal(dim))


@dataclass
class AlignmentAnalysis:
    result: al.ControlResult
    rsa_r: float
    rsa_null: np.ndarray
    k_x: int
    k_y: int
    k_cca: int


def alignment_analysis(dataset: AlignmentDataset, control_rows: np.ndarray,
                       k_cca: int = 10, k_x: int = 50, k_y: int = 50,
                       ridge: float = 1e-6, n_shuffles: int = 200,
                       seed: int = 0) -> AlignmentAnalysis:
    """Control experiment plus distance-matrix comparison, with ranks
    clamped so small datasets stay fittable."""
    n = dataset.neural.shape[0]
    k_x = max(1, min(k_x, n - 1, dataset.neural.shape[1]))
    k_y = max(1, min(k_y, n - 1, dataset.fields.shape[1]))
    k_cca = max(1, min(k_cca, k_x, k_y))
    res = al.control_experiment(dataset.neural, dataset.fields, control_rows,
                                k_cca=k_cca, k_x=k_x, k_y=k_y, ridge=ridge)
    # RSA compares geometry in the shared canonical space, where the two
    # modalities live on a common scale; raw rows mix incomparable units.
    z_x, z_y = res.trained_variates
    d_n = al.distance_matrix(z_x)
    d_b = al.distance_matrix(z_y)
    r = al.rsa_pearson(d_n, d_b)
    null = al.rsa_shuffled_null(d_n, d_b, n_shuffles=n_shuffles, seed=seed)
    return AlignmentAnalysis(result=res, rsa_r=r, rsa_null=null,
                             k_x=k_x, k_y=k_y, k_cca=k_cca)


def make_cca_downstream(neural: np.ndarray, k_cca: int, k_x: int, k_y: int,
                        ridge: float):
    """Sweep evaluator: fit the neural rows against re-embedded fields."""
    def downstream(fields: np.ndarray, tag: str) -> np.ndarray:
        model = al.cca_fit(neural, fields, k_cca=k_cca, k_x=k_x, k_y=k_y,
                           ridge=ridge)
        return model.rho
    return downstream


def build_acf_library(params: PolicyParams, env: EnvConfig, n_tasks: int,
                      n_probes: int = 128, warmup: int = 1000,
                      eps_closure: float = 1e-4, dedup_tol: float = 1e-3,
                      min_repeats: int = 3, seed: int = 0,
                      budget: int = 1500,
                      max_scanned: int | None = None) -> dict:
    """Entrainment libraries for n_tasks converged mazes: task seed ->
    AcfResult. Tasks that never converge are skipped."""
    if max_scanned is None:
        max_scanned = max(25 * n_tasks, 100)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(55,)))
    out = {}
    scanned = 0
    chunk = max(2 * n_tasks, 16)
    while len(out) < n_tasks and scanned < max_scanned:
        k = min(chunk, max_scanned - scanned)
        seeds = rng.integers(1, 2 ** 62, size=k)
        tasks = [generate_maze(int(s), env.width, env.height, env.wall_prob)
                 for s in seeds]
        scanned += k
        hits = prefilter_converged(params, tasks, budget, env.timeout,
                                   min_repeats)
        for task, hit in zip(tasks, hits):
            if hit is None or len(out) >= n_tasks:
                continue
            traj = rollout(params, task, hit[0] + hit[1], timeout=env.timeout)
            try:
                drive = cy.extract_drive(traj, min_repeats=min_repeats)
            except cy.NotConverged:
                continue
            out[task.seed] = cy.acf_sample(params, drive, n=n_probes,
                                           warmup=warmup,
                                           eps_closure=eps_closure,
                                           seed=seed, dedup_tol=dedup_tol)
    return out


# ---------------------------------------------------------------------------
# artifact emission

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_cell(v) for v in row) + "\n")


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# stages and their artifact writers
#
# Each compute stage is a pure function of (config, upstream results); each
# writer emits that stage's files and returns their names. `run_repro` and
# the CLI subcommands share these, so a subcommand's output is byte for byte
# what the full chain would put in the same directory.

def train_stage(cfg: ExperimentConfig) -> tuple:
    """(params, log rows); loads the configured checkpoint instead of
    training when one is set."""
    if cfg.checkpoint_path:
        return load_checkpoint(cfg.checkpoint_path), []
    return train(cfg.es, cfg.env, arch=cfg.policy.arch,
                 hidden_dim=cfg.policy.hidden_dim,
                 init_std=cfg.policy.init_std)


def write_train(out: str, params: PolicyParams, log: list) -> list:
    save_checkpoint(os.path.join(out, "checkpoint.bin"), params)
    write_csv(os.path.join(out, "train_log.csv"),
              ["generation", "best_L", "mean_L", "success_rate"],
              [[r["generation"], r["best_L"], r["mean_L"], r["success_rate"]]
               for r in log])
    return ["checkpoint.bin", "train_log.csv"]


def heldout_stage(cfg: ExperimentConfig, params: PolicyParams) -> dict:
    return heldout_eval(params, cfg.env, trial_budget=cfg.es.trial_budget,
                        baseline_std=cfg.policy.init_std,
                        baseline_seed=cfg.seed)


def write_heldout(out: str, ev: dict) -> list:
    write_json(os.path.join(out, "heldout.json"), ev)
    return ["heldout.json"]


def ftli_pair(cfg: ExperimentConfig, params: PolicyParams) -> tuple:
    """Divergence-rate summaries for the policy and for a size-matched
    random-parameter baseline."""
    f = cfg.ftli
    trained = ftli_histogram(params, f.n_tasks, K=f.window, eps=f.eps,
                             seed=cfg.seed, env=cfg.env,
                             timeout=cfg.env.timeout)
    rand = ftli_histogram(random_baseline_params(params, seed=cfg.seed),
                          f.n_tasks, K=f.window, eps=f.eps, seed=cfg.seed,
                          env=cfg.env, timeout=cfg.env.timeout)
    return trained, rand


def write_ftli(out: str, trained, rand) -> list:
    write_csv(os.path.join(out, "ftli.csv"), ["task_seed", "lambda"],
              list(zip(trained.task_seeds, trained.lambdas)))
    write_csv(os.path.join(out, "ftli_random.csv"), ["task_seed", "lambda"],
              list(zip(rand.task_seeds, rand.lambdas)))
    with open(os.path.join(out, "ftli.svg"), "w", encoding="utf-8") as f:
        f.write(emit_plot(HISTOGRAM,
                          {"trained": trained.lambdas, "random": rand.lambdas},
                          PlotStyle(title="finite-time divergence rates",
                                    x_label="lambda", y_label="count")))
    return ["ftli.csv", "ftli_random.csv", "ftli.svg"]


def dataset_stage(cfg: ExperimentConfig, params: PolicyParams) -> AlignmentDataset:
    return collect_dataset(params, cfg.env, cfg.cca.n_pairs, bpf_cfg=cfg.bpf,
                           seed=cfg.seed)


def write_cycles_csv(out: str, ds: AlignmentDataset) -> list:
    write_csv(os.path.join(out, "cycles.csv"),
              ["task_seed", "t0", "period", "closure"],
              [[s.task_seed, s.t0, s.period, s.closure] for s in ds.samples])
    return ["cycles.csv"]


def acf_stage(cfg: ExperimentConfig, params: PolicyParams) -> dict:
    return build_acf_library(
        params, cfg.env, cfg.acf.library_tasks,
        n_probes=cfg.acf.library_probes, warmup=cfg.acf.warmup,
        eps_closure=cfg.acf.eps_closure, dedup_tol=cfg.acf.dedup_tol,
        min_repeats=cfg.acf.min_repeats, seed=cfg.seed)


def write_acf_summary(out: str, acf: dict) -> list:
    write_csv(os.path.join(out, "acf_summary.csv"),
              ["task_seed", "n_cycles", "n_probes", "fraction_consistent",
               "median_closure"],
              [[ts, len(r.library), r.n_probes, r.fraction_consistent,
                float(np.median([c.closure_error for c in r.library]))
                if r.library else -1.0]
               for ts, r in sorted(acf.items())])
    return ["acf_summary.csv"]


def alignment_stage(cfg: ExperimentConfig, params: PolicyParams,
                    ds: AlignmentDataset) -> AlignmentAnalysis | None:
    """None when fewer than 3 pairs were found (nothing to fit)."""
    if ds.neural.shape[0] < 3:
        return None
    ctrl = control_centroids(params, ds.samples, seed=cfg.seed)
    return alignment_analysis(ds, ctrl, k_cca=cfg.cca.k_cca,
                              k_x=cfg.cca.k_x, k_y=cfg.cca.k_y,
                              ridge=cfg.cca.ridge,
                              n_shuffles=cfg.cca.n_shuffles, seed=cfg.seed)


def write_alignment(out: str, ana: AlignmentAnalysis | None,
                    n_pairs: int) -> list:
    spectra_rows = []
    rsa_obj = {"n_pairs": n_pairs, "skipped": True}
    data = {}
    if ana is not None:
        spectra_rows = [[i + 1, tr, ctl] for i, (tr, ctl) in
                        enumerate(zip(ana.result.trained_rho,
                                      ana.result.control_rho))]
        rsa_obj = {"n_pairs": n_pairs, "skipped": False,
                   "pearson_r": ana.rsa_r,
                   "null_median": float(np.median(ana.rsa_null)),
                   "null_p99": float(np.percentile(ana.rsa_null, 99))}
        data = {"trained": ana.result.trained_rho,
                "control": ana.result.control_rho}
    write_csv(os.path.join(out, "cca_spectra.csv"),
              ["mode", "trained_rho", "control_rho"], spectra_rows)
    write_json(os.path.join(out, "rsa.json"), rsa_obj)
    with open(os.path.join(out, "cca_spectrum.svg"), "w", encoding="utf-8") as f:
        f.write(emit_plot(SPECTRUM, data,
                          PlotStyle(title="canonical correlation spectrum",
                                    x_label="mode", y_label="rho")))
    return ["cca_spectra.csv", "rsa.json", "cca_spectrum.svg"]


def sweep_stage(cfg: ExperimentConfig, ds: AlignmentDataset,
                ana: AlignmentAnalysis) -> list:
    down = make_cca_downstream(ds.neural, ana.k_cca, ana.k_x, ana.k_y,
                               cfg.cca.ridge)
    return bp.bpf_sweep(ds.grid_trajectories, down, base_cfg=ds.bpf_config)


def write_sweep(out: str, cells: list, k_show: int) -> list:
    rows = [[c.radius_scale, c.metric] + list(c.spectrum) for c in cells]
    write_csv(os.path.join(out, "bpf_sweep.csv"),
              ["radius_scale", "metric"] +
              [f"rho_{i + 1}" for i in range(k_show)], rows)
    return ["bpf_sweep.csv"]


def counterfactual_stage(cfg: ExperimentConfig, params: PolicyParams,
                         ds: AlignmentDataset,
                         ana: AlignmentAnalysis | None):
    if ana is None:
        return None
    cf = cfg.counterfactual
    subset = ds.samples[:cf.n_tasks]
    cycles_by_task = {s.task_seed: sample_to_cycle(s) for s in subset}
    cutoff = min(cf.cutoff_k, ana.k_cca)
    return counterfactual_suite(
        params, ana.result.trained, cycles_by_task,
        [s.task_seed for s in subset], cutoff_k=cutoff,
        noise_std=cf.noise_std, trial_budget=cf.trial_budget,
        timeout=cfg.env.timeout, seed=cfg.seed)


def write_counterfactual(out: str, suite) -> list:
    cf_rows = []
    medians = {}
    if suite is not None:
        for mode, rs in sorted(suite.results.items()):
            for r in rs:
                cf_rows.append([r.task_ref, mode, r.t_conv, r.converged,
                                r.episodes_to_optimal])
        medians = {m: (None if np.isnan(v) else float(v))
                   for m, v in suite.medians.items()}
    write_csv(os.path.join(out, "counterfactual.csv"),
              ["task_seed", "mode", "t_conv", "converged",
               "episodes_to_optimal"], cf_rows)
    write_json(os.path.join(out, "counterfactual.json"), medians)
    return ["counterfactual.csv", "counterfactual.json"]


# ---------------------------------------------------------------------------
# full chain

def run_repro(cfg: ExperimentConfig, progress_cb=None) -> tuple:
    """Regenerate every artifact for one config. Returns (manifest,
    results dict); the manifest is also written to out_dir."""
    t_all = time.time()
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    man = RunManifest(config_hash=config_hash(cfg), tool_version=_tool_version())
    results = {}

    def emit(names):
        for rel in names:
            man.add_artifact(out, rel)

    def timed(stage: str, fn):
        if progress_cb:
            progress_cb(stage)
        t0 = time.time()
        r = fn()
        man.timings[stage] = round(time.time() - t0, 3)
        return r

    save_config(os.path.join(out, "config.json"), cfg)
    emit(["config.json"])

    params, log = timed("train", lambda: train_stage(cfg))
    emit(write_train(out, params, log))
    results["params"] = params

    ev = timed("heldout", lambda: heldout_stage(cfg, params))
    emit(write_heldout(out, ev))
    results["heldout"] = ev

    ftli_t, ftli_r = timed("ftli", lambda: ftli_pair(cfg, params))
    emit(write_ftli(out, ftli_t, ftli_r))
    results["ftli"] = {"trained_median": ftli_t.median,
                       "random_median": ftli_r.median}

    ds = timed("dataset", lambda: dataset_stage(cfg, params))
    emit(write_cycles_csv(out, ds))
    results["dataset"] = ds

    acf = timed("acf", lambda: acf_stage(cfg, params))
    emit(write_acf_summary(out, acf))
    results["acf"] = acf

    ana = timed("alignment", lambda: alignment_stage(cfg, params, ds))
    emit(write_alignment(out, ana, ds.neural.shape[0]))
    results["alignment"] = ana

    if ana is not None:
        cells = timed("sweep", lambda: sweep_stage(cfg, ds, ana))
        results["sweep"] = cells
        emit(write_sweep(out, cells, ana.k_cca))
    else:
        emit(write_sweep(out, [], 0))

    suite = timed("counterfactual",
                  lambda: counterfactual_stage(cfg, params, ds, ana))
    emit(write_counterfactual(out, suite))
    results["counterfactual"] = suite

    man.timings["total"] = round(time.time() - t_all, 3)
    write_manifest(os.path.join(out, "manifest.json"), man)
    return man, results


def _tool_version() -> str:
    from . import __version__
    return __version__
