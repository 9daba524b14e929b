"""Command-line surface.

Every subcommand reads a JSON experiment config, emits CSV/JSON/SVG
artifacts into an output directory, and writes a manifest.json with a
checksum per artifact. Runtime failures exit 1 with a one-line error
JSON on stderr; usage problems exit 2 with the argparse message.

Heavy imports happen inside the command functions so the --threads cap
(or RNN_DYNLAB_THREADS) can pin the BLAS pool before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _thread_cap(argv) -> None:
    cap = os.environ.get("RNN_DYNLAB_THREADS")
    if "--threads" in argv:
        i = argv.index("--threads")
        if i + 1 < len(argv):
            cap = argv[i + 1]
    if cap:
        n = int(cap)
        if n < 1:
            raise ValueError(f"thread cap must be >= 1, got {n}")
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def _load_config(args):
    """Config plus resolved output dir; env/flag seed overrides applied."""
    from .config import load_config, validate_paths
    cfg = load_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    validate_paths(cfg, base)
    if cfg.checkpoint_path and not os.path.isabs(cfg.checkpoint_path):
        cfg.checkpoint_path = os.path.join(base, cfg.checkpoint_path)
    env_seed = os.environ.get("RNN_DYNLAB_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    out = getattr(args, "out", None) or cfg.out_dir
    cfg.out_dir = out
    os.makedirs(out, exist_ok=True)
    return cfg, out


def _policy(cfg):
    from .policy import load_checkpoint
    if not cfg.checkpoint_path:
        raise ValueError("this command needs a trained policy: set "
                         "checkpoint_path in the config (run train first)")
    return load_checkpoint(cfg.checkpoint_path)


def _finish(cfg, out: str, names: list, t0: float) -> None:
    from . import __version__
    from .config import RunManifest, config_hash, write_manifest
    man = RunManifest(config_hash=config_hash(cfg), tool_version=__version__)
    for n in names:
        man.add_artifact(out, n)
    man.timings["total"] = round(time.time() - t0, 3)
    write_manifest(os.path.join(out, "manifest.json"), man)


def _say(out: str, names: list) -> None:
    print(json.dumps({"out_dir": out, "artifacts": sorted(names)}))


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_mazes(args) -> int:
    import numpy as np
    from .maze import generate_maze, shortest_path_len
    from .pipeline import write_csv
    t0 = time.time()
    cfg, out = _load_config(args)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                       spawn_key=(31,)))
    rows = []
    for i, s in enumerate(rng.integers(1, 2 ** 62, size=args.count)):
        t = generate_maze(int(s), cfg.env.width, cfg.env.height,
                          cfg.env.wall_prob)
        cells = "".join(str(int(v)) for v in t.grid.ravel())
        rows.append([i, t.seed, t.width, t.height, cfg.env.wall_prob,
                     t.start[0], t.start[1], t.goal[0], t.goal[1],
                     shortest_path_len(t), cells])
    write_csv(os.path.join(out, "mazes.csv"),
              ["index", "task_seed", "width", "height", "wall_prob",
               "start_row", "start_col", "goal_row", "goal_col",
               "shortest_path_len", "cells"], rows)
    _finish(cfg, out, ["mazes.csv"], t0)
    _say(out, ["mazes.csv"])
    return 0


def cmd_train(args) -> int:
    from . import pipeline as pl
    t0 = time.time()
    cfg, out = _load_config(args)
    params, log = pl.train_stage(cfg)
    names = pl.write_train(out, params, log)
    ev = pl.heldout_stage(cfg, params)
    names += pl.write_heldout(out, ev)
    _finish(cfg, out, names, t0)
    _say(out, names)
    return 0


def cmd_rollout(args) -> int:
    from .maze import generate_maze
    from .pipeline import write_csv
    from .rollout import rollout
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    task = generate_maze(args.task_seed, cfg.env.width, cfg.env.height,
                         cfg.env.wall_prob)
    traj = rollout(params, task, args.steps, timeout=cfg.env.timeout)
    rows = [[t, traj.positions[t, 0], traj.positions[t, 1], traj.actions[t],
             int(traj.events[t]), traj.steps_in_episode[t],
             traj.episode_index[t]] for t in range(len(traj))]
    write_csv(os.path.join(out, "trajectory.csv"),
              ["t", "row", "col", "action", "event", "steps_in_episode",
               "episode_index"], rows)
    _finish(cfg, out, ["trajectory.csv"], t0)
    _say(out, ["trajectory.csv"])
    return 0


def cmd_ftli(args) -> int:
    from . import pipeline as pl
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    trained, rand = pl.ftli_pair(cfg, params)
    names = pl.write_ftli(out, trained, rand)
    _finish(cfg, out, names, t0)
    _say(out, names)
    return 0


def cmd_perturb(args) -> int:
    import numpy as np
    from .maze import generate_maze
    from .pipeline import write_csv
    from .rollout import perturb_and_recover
    from .svgplot import RECOVERY, PlotStyle, emit_plot
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    task = generate_maze(args.task_seed, cfg.env.width, cfg.env.height,
                         cfg.env.wall_prob)
    rep = perturb_and_recover(params, task, seed=cfg.seed,
                              timeout=cfg.env.timeout)
    rows = []
    for c in rep.curves:
        for step, d in enumerate(c.distances):
            rows.append([c.eps, c.variant, step, d])
    write_csv(os.path.join(out, "recovery.csv"),
              ["eps", "variant", "step", "distance"], rows)
    by_eps = {}
    for c in rep.curves:
        by_eps.setdefault(c.eps, []).append(c.distances)
    series = {f"eps={e:g}": np.mean(np.stack(ds), axis=0)
              for e, ds in sorted(by_eps.items())}
    with open(os.path.join(out, "recovery.svg"), "w", encoding="utf-8") as f:
        f.write(emit_plot(RECOVERY, series,
                          PlotStyle(title="recovery after memory kicks",
                                    x_label="step",
                                    y_label="distance to cycle")))
    names = ["recovery.csv", "recovery.svg"]
    _finish(cfg, out, names, t0)
    _say(out, names)
    return 0


def cmd_extract_cycles(args) -> int:
    from . import pipeline as pl
    from .cycles import save_cycle_library
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    acf = pl.acf_stage(cfg, params)
    names = pl.write_acf_summary(out, acf)
    save_cycle_library(os.path.join(out, "cycle_library"), acf)
    _finish(cfg, out, names, t0)
    _say(out, names + ["cycle_library/"])
    return 0


def _captured_cycle(cfg, params, task_seed: int):
    from .maze import generate_maze
    from .pipeline import capture_sample, prefilter_converged, sample_to_cycle
    task = generate_maze(task_seed, cfg.env.width, cfg.env.height,
                         cfg.env.wall_prob)
    hit = prefilter_converged(params, [task], budget=1500,
                              timeout=cfg.env.timeout,
                              min_repeats=cfg.acf.min_repeats)[0]
    if hit is None:
        raise RuntimeError(f"policy does not converge on task {task_seed}")
    s = capture_sample(params, task, hit[0], hit[1], timeout=cfg.env.timeout)
    if s is None:
        raise RuntimeError(f"no closed cycle captured on task {task_seed}")
    return s, sample_to_cycle(s)


def cmd_spectrum(args) -> int:
    from .pipeline import write_csv, write_json
    from .stability import (DISCRETE_MAP, VECTOR_FIELD, cycle_spectrum,
                            stroboscopic_check)
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    _, cycle = _captured_cycle(cfg, params, args.task_seed)
    rows = []
    for mode in (VECTOR_FIELD, DISCRETE_MAP):
        for rec in cycle_spectrum(params, cycle, mode=mode):
            rows.append([mode, rec.step_index, rec.spectral_radius,
                         rec.max_real])
    write_csv(os.path.join(out, "spectra.csv"),
              ["mode", "step_index", "spectral_radius", "max_real"], rows)
    est = stroboscopic_check(params, cycle.observations, seed=cfg.seed)
    write_json(os.path.join(out, "contraction.json"),
               {"task_seed": args.task_seed, "period": est.period,
                "product_bound": est.product_bound,
                "fixed_point_residual": est.fixed_point_residual,
                "per_step_lipschitz": [float(v)
                                       for v in est.per_step_lipschitz]})
    names = ["spectra.csv", "contraction.json"]
    _finish(cfg, out, names, t0)
    _say(out, names)
    return 0


def cmd_bpf(args) -> int:
    import numpy as np
    from .bpf import build_bpf, cells_to_grid_points, save_field_csv
    from .pipeline import write_json
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    s, _ = _captured_cycle(cfg, params, args.task_seed)
    fld = build_bpf(cells_to_grid_points(s.cells), cfg.bpf)
    save_field_csv(os.path.join(out, "field.csv"), fld)
    peak = np.unravel_index(int(np.argmax(fld.values)), fld.values.shape)
    write_json(os.path.join(out, "bpf.json"),
               {"task_seed": args.task_seed, "period": s.period,
                "grid_h": cfg.bpf.grid_h, "grid_w": cfg.bpf.grid_w,
                "peak_value": float(fld.values.max()),
                "peak_row": int(peak[0]), "peak_col": int(peak[1])})
    names = ["field.csv", "bpf.json"]
    _finish(cfg, out, names, t0)
    _say(out, names)
    return 0


def _dataset_and_analysis(cfg, params):
    from . import pipeline as pl
    ds = pl.dataset_stage(cfg, params)
    return ds, pl.alignment_stage(cfg, params, ds)


def cmd_cca(args) -> int:
    from . import pipeline as pl
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    ds, ana = _dataset_and_analysis(cfg, params)
    names = pl.write_cycles_csv(out, ds)
    names += pl.write_alignment(out, ana, ds.neural.shape[0])
    _finish(cfg, out, names, t0)
    _say(out, names)
    return 0


def cmd_control(args) -> int:
    import numpy as np
    from . import pipeline as pl
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    ds, ana = _dataset_and_analysis(cfg, params)
    if ana is None:
        raise RuntimeError(f"only {ds.neural.shape[0]} converged cycles "
                           "found; the control fit needs at least 3")
    rows = [[i + 1, tr, ctl, tr - ctl] for i, (tr, ctl) in
            enumerate(zip(ana.result.trained_rho, ana.result.control_rho))]
    pl.write_csv(os.path.join(out, "control.csv"),
                 ["mode", "trained_rho", "control_rho", "gap"], rows)
    gaps = ana.result.trained_rho - ana.result.control_rho
    pl.write_json(os.path.join(out, "control.json"),
                  {"n_pairs": ds.neural.shape[0], "k_cca": ana.k_cca,
                   "median_trained_rho": float(np.median(ana.result.trained_rho)),
                   "median_control_rho": float(np.median(ana.result.control_rho)),
                   "min_gap": float(gaps.min()),
                   "median_gap": float(np.median(gaps))})
    names = ["control.csv", "control.json"]
    _finish(cfg, out, names, t0)
    _say(out, names)
    return 0


def cmd_sweep(args) -> int:
    from . import pipeline as pl
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    ds, ana = _dataset_and_analysis(cfg, params)
    if ana is None:
        raise RuntimeError(f"only {ds.neural.shape[0]} converged cycles "
                           "found; the sweep needs at least 3")
    cells = pl.sweep_stage(cfg, ds, ana)
    names = pl.write_sweep(out, cells, ana.k_cca)
    _finish(cfg, out, names, t0)
    _say(out, names)
    return 0


def cmd_counterfactual(args) -> int:
    from . import pipeline as pl
    t0 = time.time()
    cfg, out = _load_config(args)
    params = _policy(cfg)
    ds, ana = _dataset_and_analysis(cfg, params)
    if ana is None:
        raise RuntimeError(f"only {ds.neural.shape[0]} converged cycles "
                           "found; injection needs a fitted canonical space")
    suite = pl.counterfactual_stage(cfg, params, ds, ana)
    names = pl.write_counterfactual(out, suite)
    _finish(cfg, out, names, t0)
    _say(out, names)
    return 0


def cmd_repro(args) -> int:
    from .pipeline import run_repro
    cfg, out = _load_config(args)
    man, results = run_repro(cfg, progress_cb=lambda s: print(
        f"stage: {s}", file=sys.stderr, flush=True))
    summary = {"out_dir": out, "artifacts": len(man.artifacts),
               "config_hash": man.config_hash,
               "heldout": results["heldout"], "ftli": results["ftli"]}
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# plot

_KIND_ALIASES = {"hist": "histogram"}


def _read_numeric_columns(path: str):
    """(header, {name: float array}) for the columns that parse fully."""
    import numpy as np
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    body = [ln.split(",") for ln in lines[1:]]
    cols = {}
    for j, name in enumerate(header):
        vals = []
        for r in body:
            if j >= len(r):
                break
            try:
                vals.append(float(r[j]))
            except ValueError:
                break
        else:
            if vals:
                cols[name] = np.array(vals)
    return header, cols


def cmd_plot(args) -> int:
    import numpy as np
    from .svgplot import KINDS, PlotStyle, emit_plot
    kind = _KIND_ALIASES.get(args.kind, args.kind)
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {args.kind!r}; "
                         f"expected one of {sorted(KINDS)} (or 'hist')")
    header, cols = _read_numeric_columns(getattr(args, "in"))
    if args.columns:
        missing = [c for c in args.columns.split(",") if c not in cols]
        if missing:
            raise ValueError(f"no numeric column named {missing[0]!r}")
        use = {c: cols[c] for c in args.columns.split(",")}
    else:
        # drop the leading key column when other numeric columns exist
        use = dict(cols)
        if len(use) >= 2 and header[0] in use:
            del use[header[0]]
    if not use:
        raise ValueError("no numeric data columns to plot")
    if kind == "scatter":
        names = list(use)
        if len(names) < 2:
            raise ValueError("scatter needs two numeric columns (x, y)")
        data = {names[1]: np.column_stack([use[names[0]], use[names[1]]])}
    else:
        data = use
    style = PlotStyle(title=args.title or os.path.basename(getattr(args, "in")),
                      x_label=args.x_label, y_label=args.y_label,
                      bins=args.bins)
    svg = emit_plot(kind, data, style)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(svg)
    print(json.dumps({"out": args.out, "kind": kind, "series": sorted(data)}))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rnn-dynlab",
        description="Train recurrent maze policies with evolution "
                    "strategies and analyze the trained dynamics.")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="experiment config JSON")
    common.add_argument("--out", default=None,
                        help="output directory (default: config out_dir)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--threads", type=int, default=None,
                        help="cap the BLAS thread pool")

    def add(name, fn, help_, parents=(common,)):
        sp = sub.add_parser(name, parents=list(parents), help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-mazes", cmd_gen_mazes, "sample mazes to mazes.csv")
    sp.add_argument("--count", type=int, default=20)

    add("train", cmd_train,
        "train the policy (or load the configured checkpoint) and "
        "evaluate it on held-out mazes")

    sp = add("rollout", cmd_rollout, "closed-loop greedy rollout on one maze")
    sp.add_argument("--task-seed", type=int, required=True)
    sp.add_argument("--steps", type=int, default=1000)

    add("ftli", cmd_ftli,
        "finite-time divergence rates, trained vs random parameters")

    sp = add("perturb", cmd_perturb,
             "kick the converged memory and track recovery")
    sp.add_argument("--task-seed", type=int, required=True)

    add("extract-cycles", cmd_extract_cycles,
        "probe converged tasks and save the deduplicated cycle library")

    sp = add("spectrum", cmd_spectrum,
             "Jacobian spectra along a converged cycle plus the "
             "stroboscopic contraction estimate")
    sp.add_argument("--task-seed", type=int, required=True)

    sp = add("bpf", cmd_bpf, "behavioral potential field of a converged loop")
    sp.add_argument("--task-seed", type=int, required=True)

    add("cca", cmd_cca,
        "collect the cycle dataset and fit the canonical alignment")
    add("control", cmd_control,
        "trained-vs-control canonical spectra with per-mode gaps")
    add("sweep", cmd_sweep,
        "field-parameter sweep of the alignment spectrum")
    add("counterfactual", cmd_counterfactual,
        "canonical-space injection suite over the cycle dataset")
    add("repro", cmd_repro, "regenerate every artifact for one config")

    sp = sub.add_parser("plot", help="render a CSV to an SVG plot")
    sp.set_defaults(func=cmd_plot)
    sp.add_argument("--kind", required=True,
                    help="histogram|hist|scatter|spectrum|recovery")
    sp.add_argument("--in", required=True, help="input CSV")
    sp.add_argument("--out", required=True, help="output SVG")
    sp.add_argument("--columns", default=None,
                    help="comma-separated columns to plot "
                         "(default: all numeric, minus a leading key column)")
    sp.add_argument("--title", default=None)
    sp.add_argument("--x-label", default="x")
    sp.add_argument("--y-label", default="y")
    sp.add_argument("--bins", type=int, default=30)
    sp.add_argument("--threads", type=int, default=None,
                    help="cap the BLAS thread pool")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        _thread_cap(argv)
    except ValueError as e:
        print(json.dumps({"error": "UsageError", "message": str(e)}),
              file=sys.stderr)
        return 2
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 1
    except Exception as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
