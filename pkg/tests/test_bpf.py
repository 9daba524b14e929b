import numpy as np
import pytest

from rnn_dynlab import bpf
from rnn_dynlab.bpf import (BehavioralField, BpfConfig, ConfigMismatch,
                            EmptyTrajectory, app_h_scenarios, bpf_distance,
                            bpf_sweep, build_bpf, cells_to_grid_points)


def oracle_field(points, cfg):
    # scalar reimplementation of the construction, pixel by pixel
    F = np.zeros((cfg.grid_h, cfg.grid_w))
    for r in range(cfg.grid_h):
        for c in range(cfg.grid_w):
            best = 0.0
            for (pr, pc) in points:
                dr, dc = abs(r - pr), abs(c - pc)
                if cfg.metric == "L1":
                    d = dr + dc
                elif cfg.metric == "L2":
                    d = np.hypot(dr, dc)
                else:
                    d = (dr ** 3 + dc ** 3) ** (1.0 / 3.0)
                if d < cfg.r_eff:
                    v = (cfg.alpha - cfg.beta) * (cfg.r_eff - d) / cfg.r_eff + cfg.beta
                    best = max(best, v)
            F[r, c] = best
    return F


def random_traj(rng, n=12, h=21, w=21):
    return np.stack([rng.uniform(0, h - 1, n), rng.uniform(0, w - 1, n)], axis=1)


# ---------------------------------------------------------------------------
# construction

def test_single_point_peak_equals_alpha():
    cfg = BpfConfig(alpha=0.7, beta=0.2)
    fld = build_bpf([(10.0, 10.0)], cfg)
    assert fld.values[10, 10] == pytest.approx(0.7, abs=0)


def test_zero_beyond_effective_radius():
    cfg = BpfConfig(r_eff=3.0)
    fld = build_bpf([(10.0, 10.0)], cfg)
    rows, cols = np.indices(fld.values.shape)
    far = np.hypot(rows - 10.0, cols - 10.0) >= 3.0
    assert np.all(fld.values[far] == 0.0)
    assert np.all(fld.values[~far] > 0.0)


def test_coincident_points_idempotent():
    one = build_bpf([(5.0, 7.0)])
    two = build_bpf([(5.0, 7.0), (5.0, 7.0)])
    np.testing.assert_array_equal(one.values, two.values)


@pytest.mark.parametrize("metric", ["L1", "L2", "L3"])
def test_matches_scalar_oracle(metric):
    rng = np.random.default_rng(3)
    cfg = BpfConfig(alpha=1.0, beta=0.1, r_eff=5.5, metric=metric)
    for _ in range(5):
        pts = random_traj(rng, n=8)
        fld = build_bpf(pts, cfg)
        np.testing.assert_allclose(fld.values, oracle_field(pts, cfg),
                                   rtol=0, atol=1e-12)


def test_values_within_range():
    rng = np.random.default_rng(11)
    cfg = BpfConfig(alpha=2.0, beta=0.5, r_eff=4.0)
    for _ in range(10):
        fld = build_bpf(random_traj(rng), cfg)
        assert fld.values.min() >= 0.0
        assert fld.values.max() <= 2.0 + 1e-12


def test_point_order_permutation_invariant():
    rng = np.random.default_rng(5)
    for _ in range(10):
        pts = random_traj(rng, n=10)
        perm = rng.permutation(len(pts))
        a = build_bpf(pts)
        b = build_bpf(pts[perm])
        np.testing.assert_array_equal(a.values, b.values)


def test_adding_point_never_decreases_field():
    rng = np.random.default_rng(7)
    for _ in range(10):
        pts = random_traj(rng, n=9)
        base = build_bpf(pts[:-1])
        grown = build_bpf(pts)
        assert np.all(grown.values >= base.values)


def test_empty_trajectory_rejected():
    with pytest.raises(EmptyTrajectory):
        build_bpf(np.zeros((0, 2)))


def test_bad_shape_rejected():
    with pytest.raises(ValueError):
        build_bpf(np.zeros((4, 3)))


def test_config_validation():
    with pytest.raises(ValueError):
        BpfConfig(alpha=0.1, beta=0.1)
    with pytest.raises(ValueError):
        BpfConfig(beta=-0.01)
    with pytest.raises(ValueError):
        BpfConfig(r_eff=0.0)
    with pytest.raises(ValueError):
        BpfConfig(metric="L4")


def test_cells_to_grid_points_doubles():
    pts = cells_to_grid_points([(0, 0), (3, 4), (9, 9)])
    np.testing.assert_array_equal(pts, [[0, 0], [6, 8], [18, 18]])


def test_metric_changes_decay_shape():
    # on the diagonal the L1 ball is strictly smaller than the L2 ball
    cfg1 = BpfConfig(metric="L1", r_eff=4.0)
    cfg2 = BpfConfig(metric="L2", r_eff=4.0)
    f1 = build_bpf([(10.0, 10.0)], cfg1)
    f2 = build_bpf([(10.0, 10.0)], cfg2)
    assert f1.values[12, 12] == 0.0          # L1 distance 4 >= r_eff
    assert f2.values[12, 12] > 0.0           # L2 distance 2.83 < r_eff
    assert f1.values[10, 13] == f2.values[10, 13]  # axis-aligned: same


# ---------------------------------------------------------------------------
# distance

def test_distance_identical_zero():
    fld = build_bpf([(4.0, 4.0), (4.0, 6.0)])
    assert bpf_distance(fld, fld) == 0.0


def test_distance_symmetric_exact():
    rng = np.random.default_rng(13)
    a = build_bpf(random_traj(rng))
    b = build_bpf(random_traj(rng))
    assert bpf_distance(a, b) == bpf_distance(b, a)


def test_distance_matches_norm_oracle():
    rng = np.random.default_rng(17)
    a = build_bpf(random_traj(rng))
    b = build_bpf(random_traj(rng))
    want = float(np.sqrt(((a.values - b.values) ** 2).sum()))
    assert bpf_distance(a, b) == pytest.approx(want, rel=1e-15)


def test_distance_config_mismatch():
    a = build_bpf([(4.0, 4.0)], BpfConfig(r_eff=5.0))
    b = build_bpf([(4.0, 4.0)], BpfConfig(r_eff=6.0))
    with pytest.raises(ConfigMismatch):
        bpf_distance(a, b)


def test_triangle_inequality():
    rng = np.random.default_rng(19)
    for _ in range(100):
        a, b, c = (build_bpf(random_traj(rng, n=6)) for _ in range(3))
        dab = bpf_distance(a, b)
        dbc = bpf_distance(b, c)
        dac = bpf_distance(a, c)
        assert dac <= dab + dbc + 1e-9


# ---------------------------------------------------------------------------
# scenarios

def test_scenario_orderings_hold():
    rep = app_h_scenarios()
    assert rep.non_overlap_ordered
    assert rep.overlap_ordered
    d12, d13 = rep.non_overlap
    assert 0.0 < d12 < d13
    e12, e13 = rep.overlap
    assert 0.0 < e12 < e13


def test_scenario_identical_trajectories_zero():
    t = np.stack([np.full(20, 4.0), np.linspace(2.0, 18.0, 20)], axis=1)
    f = build_bpf(t)
    g = build_bpf(t.copy())
    assert bpf_distance(f, g) == 0.0


# ---------------------------------------------------------------------------
# sweep

def test_sweep_emits_twelve_cells():
    rng = np.random.default_rng(23)
    trajs = [random_traj(rng, n=5) for _ in range(4)]
    seen = []

    def downstream(fields, tag):
        seen.append(tag)
        assert fields.shape == (4, 21 * 21)
        return fields.mean(axis=1)[:3]

    cells = bpf_sweep(trajs, downstream)
    assert len(cells) == 12
    assert len(seen) == 12
    tags = {(c.radius_scale, c.metric) for c in cells}
    assert len(tags) == 12


def test_sweep_baseline_cell_matches_standalone():
    rng = np.random.default_rng(29)
    trajs = [random_traj(rng, n=5) for _ in range(3)]

    def downstream(fields, tag):
        return fields.sum(axis=1)

    cells = bpf_sweep(trajs, downstream)
    base = [c for c in cells if c.radius_scale == 1.0 and c.metric == "L2"]
    assert len(base) == 1
    standalone = np.array([build_bpf(t).values.sum() for t in trajs])
    np.testing.assert_array_equal(base[0].spectrum, standalone)


# ---------------------------------------------------------------------------
# serialization

def test_csv_round_trip(tmp_path):
    fld = build_bpf([(3.0, 3.0), (5.0, 9.0)])
    p = tmp_path / "f.csv"
    bpf.save_field_csv(p, fld)
    back = bpf.load_field_csv(p, fld.config)
    np.testing.assert_allclose(back.values, fld.values, atol=1e-8)
    assert back.config == fld.config


def test_f32_round_trip(tmp_path):
    cfg = BpfConfig(alpha=1.5, beta=0.2, r_eff=4.5, metric="L3")
    fld = build_bpf([(7.0, 2.0)], cfg)
    p = tmp_path / "f.bin"
    bpf.save_field_f32(p, fld)
    back = bpf.load_field_f32(p)
    assert back.config == cfg
    np.testing.assert_allclose(back.values, fld.values, atol=1e-6)
