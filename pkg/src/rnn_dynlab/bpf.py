"""Behavioral potential fields: fixed-size scalar embeddings of trajectories.

A variable-length path through the maze becomes a dense H x W intensity
grid: every trajectory point radiates a linearly decaying local field and
the global field keeps the pointwise maximum. Max fusion (rather than
summation) keeps the ridge of the path visible without saturating where
the agent lingers. Flattened L2 distance between two fields then acts as
a cheap transport-cost proxy between the underlying paths.
"""

from dataclasses import dataclass, field
import json

import numpy as np

L1 = "L1"
L2 = "L2"
L3 = "L3"
_METRICS = (L1, L2, L3)


class EmptyTrajectory(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BpfConfig:
    grid_h: int = 21
    grid_w: int = 21
    alpha: float = 1.0   # intensity at the trajectory point itself
    beta: float = 0.1    # intensity at the edge of the effective radius
    r_eff: float = 6.0   # grid cells
    metric: str = L2     # norm for the point-to-pixel decay distance

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError(f"grid {self.grid_h}x{self.grid_w}")
        if not (self.alpha > self.beta >= 0.0):
            raise ValueError(f"need alpha > beta >= 0, got {self.alpha}, {self.beta}")
        if self.r_eff <= 0.0:
            raise ValueError(f"r_eff {self.r_eff}")
        if self.metric not in _METRICS:
            raise ValueError(f"metric {self.metric!r} not in {_METRICS}")


@dataclass
class BehavioralField:
    values: np.ndarray   # (grid_h, grid_w), in [0, alpha]
    config: BpfConfig = field(default_factory=BpfConfig)


def cells_to_grid_points(cells) -> np.ndarray:
    """Maze cell (i, j) lands on grid node (2i, 2j).

    Doubling gives the 10x10 maze sub-cell resolution on the default
    21x21 grid; transitions between adjacent cells pass through the odd
    intermediate nodes only via the decay field, never exactly.
    """
    pts = np.asarray(cells, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (L, 2) cell array, got {pts.shape}")
    return 2.0 * pts


def _decay_distance(cfg: BpfConfig, point) -> np.ndarray:
    rows = np.arange(cfg.grid_h, dtype=np.float64)[:, None]
    cols = np.arange(cfg.grid_w, dtype=np.float64)[None, :]
    dr = np.abs(rows - point[0])
    dc = np.abs(cols - point[1])
    if cfg.metric == L1:
        return dr + dc
    if cfg.metric == L2:
        return np.sqrt(dr ** 2 + dc ** 2)
    return (dr ** 3 + dc ** 3) ** (1.0 / 3.0)


def build_bpf(traj_points, cfg: BpfConfig | None = None) -> BehavioralField:
    """Max-fused linear radiance field over the trajectory points.

    traj_points: (L, 2) array-like of grid coordinates (row, col). Use
    cells_to_grid_points to lift maze cells onto the grid first.
    """
    if cfg is None:
        cfg = BpfConfig()
    pts = np.atleast_2d(np.asarray(traj_points, dtype=np.float64))
    if pts.size == 0:
        raise EmptyTrajectory("no trajectory points")
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (L, 2) points, got {pts.shape}")
    F = np.zeros((cfg.grid_h, cfg.grid_w))
    for p in pts:
        D = _decay_distance(cfg, p)
        local = (cfg.alpha - cfg.beta) * (cfg.r_eff - D) / cfg.r_eff + cfg.beta
        local = np.where(D < cfg.r_eff, local, 0.0)
        np.maximum(F, local, out=F)
    return BehavioralField(values=F, config=cfg)


def bpf_distance(a: BehavioralField, b: BehavioralField) -> float:
    """Flattened L2 distance; requires matching construction configs."""
    if a.config != b.config:
        raise ConfigMismatch(f"{a.config} vs {b.config}")
    return float(np.linalg.norm(a.values.ravel() - b.values.ravel()))


# ---------------------------------------------------------------------------
# synthetic validation scenarios

def _line(r0, c0, r1, c1, n=40) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    return np.stack([r0 + (r1 - r0) * t, c0 + (c1 - c0) * t], axis=1)


def _detour(depth: float, n=40) -> np.ndarray:
    # shared endpoints (16, 2) -> (16, 18); bump of the given depth upward
    t = np.linspace(0.0, 1.0, n)
    rows = 16.0 - depth * np.sin(np.pi * t)
    cols = 2.0 + 16.0 * t
    return np.stack([rows, cols], axis=1)


@dataclass
class ScenarioReport:
    non_overlap: tuple        # (d12, d13)
    overlap: tuple            # (d12, d13)
    non_overlap_ordered: bool
    overlap_ordered: bool


def app_h_scenarios(cfg: BpfConfig | None = None) -> ScenarioReport:
    """Two sanity scenarios for the field metric.

    Parallel separated paths: the nearer neighbour must come out closer.
    Shared-endpoint detours: a shallow bump must beat a deep one. The
    orderings are the contract; absolute distances depend on alpha, beta
    and r_eff and are reported for inspection only.
    """
    if cfg is None:
        cfg = BpfConfig()
    t1 = _line(4.0, 2.0, 4.0, 18.0)
    t2 = _line(8.0, 2.0, 8.0, 18.0)
    t3 = _line(16.0, 2.0, 16.0, 18.0)
    f1, f2, f3 = (build_bpf(t, cfg) for t in (t1, t2, t3))
    d12 = bpf_distance(f1, f2)
    d13 = bpf_distance(f1, f3)

    o1 = _detour(0.0)
    o2 = _detour(3.0)
    o3 = _detour(9.0)
    g1, g2, g3 = (build_bpf(t, cfg) for t in (o1, o2, o3))
    e12 = bpf_distance(g1, g2)
    e13 = bpf_distance(g1, g3)
    return ScenarioReport(non_overlap=(d12, d13), overlap=(e12, e13),
                          non_overlap_ordered=bool(d12 < d13),
                          overlap_ordered=bool(e12 < e13))


# ---------------------------------------------------------------------------
# hyperparameter sweep

RADIUS_SCALES = (0.5, 0.75, 1.0, 1.5)


@dataclass
class SweepCell:
    radius_scale: float
    metric: str
    spectrum: np.ndarray


def bpf_sweep(trajectories, downstream, base_cfg: BpfConfig | None = None,
              radius_scales=RADIUS_SCALES, metrics=_METRICS) -> list:
    """Re-embed the trajectory dataset under each (radius scale, metric)
    cell and hand the stacked flattened fields to the downstream
    evaluator, which returns a correlation spectrum per cell.

    downstream: callable (fields: (N, grid_h*grid_w), cell_tag: str) -> 1d
    spectrum. Returns a list of SweepCell, scales-major.
    """
    if base_cfg is None:
        base_cfg = BpfConfig()
    out = []
    for scale in radius_scales:
        for metric in metrics:
            cfg = BpfConfig(grid_h=base_cfg.grid_h, grid_w=base_cfg.grid_w,
                            alpha=base_cfg.alpha, beta=base_cfg.beta,
                            r_eff=base_cfg.r_eff * scale, metric=metric)
            rows = [build_bpf(t, cfg).values.ravel() for t in trajectories]
            tag = f"{scale:g}x_{metric}"
            spec = np.asarray(downstream(np.stack(rows, axis=0), tag),
                              dtype=np.float64)
            out.append(SweepCell(radius_scale=scale, metric=metric,
                                 spectrum=spec))
    return out


# ---------------------------------------------------------------------------
# serialization

def save_field_csv(path, fld: BehavioralField) -> None:
    np.savetxt(path, fld.values, delimiter=",", fmt="%.9g")


def load_field_csv(path, cfg: BpfConfig | None = None) -> BehavioralField:
    vals = np.loadtxt(path, delimiter=",", ndmin=2)
    return BehavioralField(values=vals, config=cfg or BpfConfig())


def save_field_f32(path, fld: BehavioralField) -> None:
    """Packed little-endian f32 values with a JSON sidecar header."""
    fld.values.astype("<f4").tofile(path)
    hdr = {"grid_h": fld.config.grid_h, "grid_w": fld.config.grid_w,
           "alpha": fld.config.alpha, "beta": fld.config.beta,
           "r_eff": fld.config.r_eff, "metric": fld.config.metric,
           "dtype": "<f4"}
    with open(str(path) + ".json", "w") as fh:
        json.dump(hdr, fh, sort_keys=True)
        fh.write("\n")


def load_field_f32(path) -> BehavioralField:
    with open(str(path) + ".json") as fh:
        hdr = json.load(fh)
    cfg = BpfConfig(grid_h=hdr["grid_h"], grid_w=hdr["grid_w"],
                    alpha=hdr["alpha"], beta=hdr["beta"],
                    r_eff=hdr["r_eff"], metric=hdr["metric"])
    vals = np.fromfile(path, dtype="<f4").astype(np.float64)
    return BehavioralField(values=vals.reshape(cfg.grid_h, cfg.grid_w),
                           config=cfg)
