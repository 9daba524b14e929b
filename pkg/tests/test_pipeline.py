import json
import os

import numpy as np
import pytest

from rnn_dynlab.alignment import distance_matrix, rsa_pearson
from rnn_dynlab.bpf import BpfConfig
from rnn_dynlab.config import (AcfSection, CcaSection, CounterfactualSection,
                               EsConfig, ExperimentConfig, FtliSection,
                               PolicySection, config_hash, load_manifest,
                               verify_manifest)
from rnn_dynlab.maze import RIGHT, EnvConfig, StepEvent, generate_maze
from rnn_dynlab.pipeline import (AlignmentDataset, alignment_analysis,
                                 build_acf_library, capture_sample,
                                 collect_dataset, control_centroids,
                                 final_episode_optimal, heldout_eval,
                                 make_cca_downstream, prefilter_converged,
                                 random_baseline_params, run_repro,
                                 sample_to_cycle, write_csv, write_json,
                                 _column_convergence, _column_episodes)
from rnn_dynlab.policy import (GRU, PolicyParams, param_count, recurrent_step,
                               save_checkpoint, zero_params)

GOAL = int(StepEvent.GOAL_REACHED)
TIME = int(StepEvent.TIMEOUT)


def rightward_policy(hidden_dim=12, obs_scale=0.08, seed=5) -> PolicyParams:
    """Contractive core whose greedy decode is RIGHT in every state.

    All-zero gates sit at 1/2 so the memory halves each step toward a
    drive-dependent orbit; the output bias pins the action, so episode
    behavior is a pure function of the maze."""
    p = zero_params(GRU, hidden_dim)
    rng = np.random.default_rng(seed)
    p.W_c[:] = obs_scale * rng.standard_normal(p.W_c.shape)
    # readout rows independent (control sampling needs that) but far too
    # small to flip the argmax away from the bias
    p.W_out[:] = 0.01 * rng.standard_normal(p.W_out.shape)
    p.b_out[RIGHT] = 5.0
    return p


def east_ray_len(task) -> int:
    """Steps of the pure-RIGHT walk to the goal, or 0 if it never hits."""
    r0, c0 = task.start
    rg, cg = task.goal
    if rg != r0 or cg <= c0:
        return 0
    for c in range(c0 + 1, cg + 1):
        if not task.is_free(r0, c):
            return 0
    return cg - c0


def east_task(min_len=2, start_seed=1):
    for s in range(start_seed, start_seed + 20000):
        t = generate_maze(s)
        if east_ray_len(t) >= min_len:
            return t
    raise AssertionError("no east-solvable maze in seed range")


# ---------------------------------------------------------------------------
# episode scanning

def test_column_episodes_oracle():
    ev = np.array([0, 0, GOAL, 0, TIME, GOAL], dtype=np.uint8)
    assert _column_episodes(ev) == [(GOAL, 0, 3), (TIME, 3, 5), (GOAL, 5, 6)]
    # trailing incomplete episode is dropped, empty column yields nothing
    assert _column_episodes(np.zeros(4, dtype=np.uint8)) == []


def test_column_convergence_basic():
    ev = np.zeros(9, dtype=np.uint8)
    ev[[2, 5, 8]] = GOAL
    act = np.array([1, 2, 3] * 3)
    assert _column_convergence(ev, act, min_repeats=3) == (9, 3)


def test_column_convergence_rejects():
    # identical episodes but the wrong terminal code
    ev = np.zeros(9, dtype=np.uint8)
    ev[[2, 5, 8]] = TIME
    act = np.array([1, 2, 3] * 3)
    assert _column_convergence(ev, act, 3) is None
    # same period, different action content
    ev[[2, 5, 8]] = GOAL
    act2 = np.array([1, 2, 3, 1, 2, 0, 1, 2, 3])
    assert _column_convergence(ev, act2, 3) is None
    # only two repeats available
    ev3 = np.zeros(6, dtype=np.uint8)
    ev3[[2, 5]] = GOAL
    assert _column_convergence(ev3, np.array([1, 2, 3] * 2), 3) is None


def test_column_convergence_after_junk_and_earliest():
    # timeout prefix, then four identical goal episodes: the scan reports
    # the end of the EARLIEST qualifying repeat window
    ev = np.zeros(4 + 8, dtype=np.uint8)
    ev[3] = TIME
    ev[[5, 7, 9, 11]] = GOAL
    act = np.concatenate([[9, 9, 9, 9], [1, 2] * 4])
    assert _column_convergence(ev, act, min_repeats=3) == (10, 2)


# ---------------------------------------------------------------------------
# cycle capture on a real policy

def test_prefilter_and_capture_east_walk():
    p = rightward_policy()
    t = east_task(min_len=3)
    T = east_ray_len(t)
    hits = prefilter_converged(p, [t], budget=900)
    assert hits[0] is not None
    t0, period = hits[0]
    assert period == T
    assert t0 == 3 * T  # converged from the very first episode

    s = capture_sample(p, t, t0, period, closure_tol=1e-6)
    assert s is not None
    assert s.period == T
    assert s.closure <= 1e-6
    assert np.all(s.actions == RIGHT)
    # cells are the pre-move positions of one loop: start, then eastward
    r0, c0 = t.start
    expect = np.array([[r0, c0 + i] for i in range(T)])
    assert np.array_equal(s.cells, expect)
    assert s.states.shape == (T, p.hidden_dim)
    assert np.allclose(s.centroid, s.states.mean(axis=0))


def test_capture_closure_is_the_loop_defect():
    """closure equals |advance(states[-1], obs[-1]) - states[0]| exactly."""
    p = rightward_policy()
    t = east_task(min_len=2)
    hits = prefilter_converged(p, [t], budget=900)
    s = capture_sample(p, t, hits[0][0], hits[0][1], closure_tol=1e-3)
    assert s is not None
    h_wrap = recurrent_step(p, s.states[-1], s.observations[-1])
    assert np.isclose(np.linalg.norm(h_wrap - s.states[0]), s.closure,
                      rtol=0, atol=1e-12)


def test_capture_rejects_broken_windows():
    p = rightward_policy()
    t = east_task(min_len=2)
    T = east_ray_len(t)
    # t0 not on an episode boundary: the pre-roll does not end in a goal
    assert capture_sample(p, t, 3 * T + 1, T) is None
    # wrong period: the window sees a mid-window goal event
    assert capture_sample(p, t, 3 * T, T + 1) is None
    assert capture_sample(p, t, 0, T) is None


def test_sample_to_cycle_fields():
    p = rightward_policy()
    t = east_task(min_len=2)
    hits = prefilter_converged(p, [t], budget=900)
    s = capture_sample(p, t, hits[0][0], hits[0][1])
    c = sample_to_cycle(s)
    assert c.period == s.period
    assert c.consistent
    assert c.closure_error == s.closure
    assert np.array_equal(c.actions, s.actions)
    assert np.allclose(c.centroid, s.centroid)


# ---------------------------------------------------------------------------
# dataset assembly

def test_collect_dataset_deterministic():
    p = rightward_policy()
    env = EnvConfig()
    a = collect_dataset(p, env, n_pairs=3, seed=11, max_scanned=1024)
    b = collect_dataset(p, env, n_pairs=3, seed=11, max_scanned=1024)
    assert len(a.samples) == 3
    assert a.n_scanned == b.n_scanned
    assert [s.task_seed for s in a.samples] == [s.task_seed for s in b.samples]
    assert np.array_equal(a.neural, b.neural)
    assert np.array_equal(a.fields, b.fields)
    # every field row is a potential surface peaking at alpha on the path
    assert a.fields.shape == (3, a.bpf_config.grid_h * a.bpf_config.grid_w)
    assert np.allclose(a.fields.max(axis=1), a.bpf_config.alpha)
    c = collect_dataset(p, env, n_pairs=3, seed=12, max_scanned=1024)
    assert [s.task_seed for s in c.samples] != [s.task_seed for s in a.samples]


def test_collect_dataset_honors_scan_cap():
    p = rightward_policy()
    ds = collect_dataset(p, EnvConfig(), n_pairs=500, seed=0, max_scanned=64)
    assert ds.n_scanned == 64
    assert len(ds.samples) < 500
    assert ds.neural.shape[0] == len(ds.samples)


def test_control_centroids_shape_and_determinism():
    p = rightward_policy()
    ds = collect_dataset(p, EnvConfig(), n_pairs=2, seed=11, max_scanned=1024)
    r1 = control_centroids(p, ds.samples, seed=4)
    r2 = control_centroids(p, ds.samples, seed=4)
    r3 = control_centroids(p, ds.samples, seed=5)
    assert r1.shape == (2, p.hidden_dim)
    assert np.array_equal(r1, r2)
    assert not np.array_equal(r1, r3)
    assert np.all(np.isfinite(r1))


# ---------------------------------------------------------------------------
# held-out evaluation

def test_final_episode_optimal_oracle():
    ev = np.zeros(20, dtype=np.uint8)
    assert not final_episode_optimal(ev, 5)
    ev[4] = GOAL  # single episode of length 5
    assert final_episode_optimal(ev, 5)
    assert not final_episode_optimal(ev, 4)
    ev[9] = GOAL  # second episode, also length 5
    assert final_episode_optimal(ev, 5)
    ev[12] = TIME  # trailing timeout episode spoils it
    assert not final_episode_optimal(ev, 3)


def test_heldout_eval_matches_ray_oracle():
    """The pure-RIGHT policy solves exactly the east-ray mazes, and its
    east path is automatically a shortest path."""
    p = rightward_policy()
    env = EnvConfig()
    n = 40
    expect = sum(east_ray_len(generate_maze(1_000_000 + i)) > 0
                 for i in range(n)) / n
    ev = heldout_eval(p, env, n_tasks=n, trial_budget=500)
    assert ev["n_tasks"] == n
    assert ev["optimal_final_fraction"] == pytest.approx(expect)
    assert ev["success_rate"] == pytest.approx(expect)
    for k in ("baseline_optimal_final_fraction", "baseline_success_rate"):
        assert 0.0 <= ev[k] <= 1.0
    assert heldout_eval(p, env, n_tasks=n, trial_budget=500) == ev


def test_random_baseline_params():
    p = rightward_policy()
    a = random_baseline_params(p, std=1.0, seed=0)
    b = random_baseline_params(p, std=1.0, seed=0)
    c = random_baseline_params(p, std=1.0, seed=1)
    assert a.arch == p.arch and a.hidden_dim == p.hidden_dim
    assert len(a.theta) == param_count(p.arch, p.hidden_dim)
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)
    assert 0.9 < a.theta.std() < 1.1


# ---------------------------------------------------------------------------
# alignment analysis on synthetic rows

def synthetic_dataset(n=120, latent=4, hd=6, fd=9, noise=0.01, seed=3):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, latent))
    neural = z @ rng.standard_normal((latent, hd)) + noise * rng.standard_normal((n, hd))
    fields = z @ rng.standard_normal((latent, fd)) + noise * rng.standard_normal((n, fd))
    ds = AlignmentDataset(samples=[], neural=neural, fields=fields,
                          grid_trajectories=[], bpf_config=BpfConfig(),
                          n_scanned=n)
    return ds, rng.standard_normal((n, hd))


def test_alignment_analysis_recovers_shared_latent():
    ds, ctrl = synthetic_dataset()
    ana = alignment_analysis(ds, ctrl, k_cca=4, k_x=6, k_y=6, n_shuffles=50)
    assert ana.k_cca == 4
    assert np.all(ana.result.trained_rho[:4] > 0.9)
    assert ana.result.trained_rho[0] - ana.result.control_rho[0] > 0.2
    # canonical geometries of the two sides nearly coincide
    assert ana.rsa_r > 0.9
    assert ana.rsa_r > float(np.percentile(ana.rsa_null, 99)) + 0.3


def test_alignment_analysis_clamps_ranks():
    ds, ctrl = synthetic_dataset(n=5)
    ana = alignment_analysis(ds, ctrl, k_cca=10, k_x=50, k_y=50, n_shuffles=8)
    assert ana.k_x == 4 and ana.k_y == 4 and ana.k_cca == 4
    assert len(ana.result.trained_rho) == 4


def test_make_cca_downstream_perfect_copy():
    rng = np.random.default_rng(0)
    neural = rng.standard_normal((60, 5))
    down = make_cca_downstream(neural, k_cca=3, k_x=5, k_y=5, ridge=1e-8)
    rho = down(neural.copy(), "self")
    assert rho.shape == (3,)
    assert np.all(rho > 0.999)
    rho2 = down(rng.standard_normal((60, 5)), "junk")
    assert rho2[0] < 1.0 and np.all(rho2 >= 0.0)


# ---------------------------------------------------------------------------
# entrainment library

def test_build_acf_library_east_policy():
    p = rightward_policy()
    lib = build_acf_library(p, EnvConfig(), n_tasks=2, n_probes=6, warmup=64,
                            seed=7, budget=900, max_scanned=512)
    assert len(lib) == 2
    for seed_, res in lib.items():
        assert res.n_probes == 6
        assert len(res.library) >= 1
        for c in res.library:
            assert c.closure_error <= 1e-4
            assert c.consistent
            assert np.all(c.actions == RIGHT)
        # the contractive core funnels every probe into one loop
        assert res.fraction_consistent == 1.0
    lib2 = build_acf_library(p, EnvConfig(), n_tasks=2, n_probes=6, warmup=64,
                             seed=7, budget=900, max_scanned=512)
    assert sorted(lib2) == sorted(lib)


# ---------------------------------------------------------------------------
# artifact writers

def test_write_csv_formats(tmp_path):
    path = str(tmp_path / "t.csv")
    write_csv(path, ["a", "b", "c", "d"],
              [[1, True, 0.123456789012, "x"], [2, False, 1e-10, "y"]])
    text = open(path).read()
    assert text == "a,b,c,d\n1,1,0.123456789,x\n2,0,1e-10,y\n"


def test_write_json_canonical(tmp_path):
    path = str(tmp_path / "t.json")
    write_json(path, {"b": 1, "a": [1.5, None]})
    text = open(path).read()
    assert text == '{\n  "a": [\n    1.5,\n    null\n  ],\n  "b": 1\n}\n'


# ---------------------------------------------------------------------------
# full chain

def tiny_config(tmp_path, out_name, ckpt, seed=0, n_pairs=4) -> ExperimentConfig:
    return ExperimentConfig(
        seed=seed, out_dir=str(tmp_path / out_name), checkpoint_path=ckpt,
        env=EnvConfig(),
        policy=PolicySection(arch=GRU, hidden_dim=12),
        es=EsConfig(population_size=4, generations=1, trial_budget=400),
        ftli=FtliSection(n_tasks=2, window=60),
        acf=AcfSection(warmup=200, library_tasks=2, library_probes=6),
        cca=CcaSection(n_pairs=n_pairs, n_shuffles=10),
        counterfactual=CounterfactualSection(n_tasks=3, trial_budget=400))


EXPECTED_ARTIFACTS = {
    "config.json", "checkpoint.bin", "train_log.csv", "heldout.json",
    "ftli.csv", "ftli_random.csv", "ftli.svg", "cycles.csv",
    "acf_summary.csv", "cca_spectra.csv", "rsa.json", "cca_spectrum.svg",
    "bpf_sweep.csv", "counterfactual.csv", "counterfactual.json",
}


def test_run_repro_byte_identical(tmp_path):
    """Re-running one config reproduces every artifact checksum."""
    ckpt = str(tmp_path / "ck.bin")
    save_checkpoint(ckpt, rightward_policy())
    cfg = tiny_config(tmp_path, "run", ckpt)
    man1, res1 = run_repro(cfg)
    arts1 = dict(man1.artifacts)
    man2, res2 = run_repro(cfg)
    assert arts1 == dict(man2.artifacts)
    assert set(arts1) == EXPECTED_ARTIFACTS
    out = cfg.out_dir
    disk = load_manifest(os.path.join(out, "manifest.json"))
    assert verify_manifest(disk, out) == []
    assert disk.artifacts == arts1
    assert disk.config_hash == config_hash(cfg)
    # stage content sanity: enough cycles were found to run the alignment
    assert res1["dataset"].neural.shape[0] >= 3
    assert res1["alignment"] is not None
    assert res1["counterfactual"] is not None
    rsa = json.load(open(os.path.join(out, "rsa.json")))
    assert rsa["skipped"] is False


def test_run_repro_degenerate_dataset_skips_alignment(tmp_path):
    """With n_pairs < 3 the alignment stages emit header-only artifacts."""
    ckpt = str(tmp_path / "ck.bin")
    save_checkpoint(ckpt, rightward_policy())
    cfg = tiny_config(tmp_path, "deg", ckpt, n_pairs=2)
    man, res = run_repro(cfg)
    assert res["alignment"] is None
    assert res["counterfactual"] is None
    out = cfg.out_dir
    rsa = json.load(open(os.path.join(out, "rsa.json")))
    assert rsa["skipped"] is True
    assert open(os.path.join(out, "cca_spectra.csv")).read() == \
        "mode,trained_rho,control_rho\n"
    assert set(man.artifacts) == EXPECTED_ARTIFACTS
