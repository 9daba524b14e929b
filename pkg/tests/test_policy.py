import numpy as np
import pytest

from rnn_dynlab.policy import (GRU, VANILLA, DimensionMismatch, LengthMismatch,
                               PolicyParams, flatten_params, greedy_action,
                               init_params, load_checkpoint, param_count,
                               policy_logits, recurrent_step, rnn_vector_field,
                               sample_action, save_checkpoint, softmax,
                               unflatten_params, zero_params)
from helpers import naive_gru_step, naive_vanilla_step


def test_param_count_hand_sums():
    # GRU 27 -> 64 -> 4: 3*64*27 + 3*64*64 + 3*64 + 4*64 + 4
    assert param_count(GRU, 64) == 5184 + 12288 + 192 + 256 + 4
    assert param_count(VANILLA, 64) == 1728 + 4096 + 64 + 256 + 4
    assert param_count(GRU, 5, input_dim=7, n_actions=3) == 3*5*7 + 3*25 + 15 + 15 + 3


def test_gru_layout_matches_documentation():
    h, i, a = 4, 3, 2
    n = param_count(GRU, h, i, a)
    p = PolicyParams(arch=GRU, hidden_dim=h, theta=np.arange(n, dtype=float),
                     input_dim=i, n_actions=a)
    off = 0
    blocks = [("W_z", (h, i)), ("W_r", (h, i)), ("W_c", (h, i)),
              ("U_z", (h, h)), ("U_r", (h, h)), ("U_c", (h, h)),
              ("b_z", (h,)), ("b_r", (h,)), ("b_c", (h,)),
              ("W_out", (a, h)), ("b_out", (a,))]
    for name, shape in blocks:
        k = int(np.prod(shape))
        np.testing.assert_array_equal(getattr(p, name),
                                      np.arange(off, off + k, dtype=float).reshape(shape))
        off += k
    assert off == n


def test_vanilla_layout_matches_documentation():
    h, i, a = 4, 3, 2
    n = param_count(VANILLA, h, i, a)
    p = PolicyParams(arch=VANILLA, hidden_dim=h, theta=np.arange(n, dtype=float),
                     input_dim=i, n_actions=a)
    off = 0
    for name, shape in [("W_in", (h, i)), ("W_rec_v", (h, h)), ("b_v", (h,)),
                        ("W_out", (a, h)), ("b_out", (a,))]:
        k = int(np.prod(shape))
        np.testing.assert_array_equal(getattr(p, name),
                                      np.arange(off, off + k, dtype=float).reshape(shape))
        off += k
    assert off == n


def test_views_share_theta_memory():
    p = init_params(GRU, 8, input_dim=5, n_actions=3, seed=1)
    p.theta[3 * 8 * 5 + 2] += 1.0
    assert p.U_z.flat[2] == p.theta[3 * 8 * 5 + 2]


def test_zero_gru_halves_hidden_exactly():
    p = zero_params(GRU, 16, input_dim=6)
    rng = np.random.default_rng(0)
    h = rng.standard_normal(16)
    o = rng.standard_normal(6)
    assert np.array_equal(recurrent_step(p, h, o), 0.5 * h)


def test_gru_step_matches_naive():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = init_params(GRU, 12, input_dim=9, n_actions=4, std=0.8,
                        seed=int(rng.integers(1 << 30)))
        h = rng.standard_normal(12)
        o = rng.standard_normal(9)
        np.testing.assert_allclose(recurrent_step(p, h, o),
                                   naive_gru_step(p, h, o), rtol=0, atol=1e-14)


def test_vanilla_step_matches_naive():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = init_params(VANILLA, 12, input_dim=9, n_actions=4, std=0.8,
                        seed=int(rng.integers(1 << 30)))
        h = rng.standard_normal(12)
        o = rng.standard_normal(9)
        np.testing.assert_allclose(recurrent_step(p, h, o),
                                   naive_vanilla_step(p, h, o), rtol=0, atol=1e-14)


def test_recurrent_step_dimension_checks():
    p = zero_params(GRU, 8, input_dim=5)
    with pytest.raises(DimensionMismatch):
        recurrent_step(p, np.zeros(7), np.zeros(5))
    with pytest.raises(DimensionMismatch):
        recurrent_step(p, np.zeros(8), np.zeros(4))


def test_logits_and_greedy():
    theta = np.zeros(param_count(GRU, 8, 5, 4))
    base = 3 * 8 * 5 + 3 * 64 + 3 * 8   # start of W_out
    theta[base + 2 * 8] = 5.0           # W_out[2, 0]
    p = PolicyParams(arch=GRU, hidden_dim=8, theta=theta, input_dim=5, n_actions=4)
    h = np.zeros(8)
    h[0] = 1.0
    assert np.array_equal(policy_logits(p, h), [0, 0, 5.0, 0])
    assert greedy_action(policy_logits(p, h)) == 2


def test_greedy_tie_break_lowest_index():
    assert greedy_action(np.array([1.0, 1.0, 0.5, 1.0])) == 0
    assert greedy_action(np.zeros(4)) == 0


def test_softmax_uniform_and_normalized():
    assert np.allclose(softmax(np.zeros(4)), 0.25)
    rng = np.random.default_rng(4)
    for _ in range(50):
        s = softmax(rng.standard_normal(4) * 10)
        assert abs(s.sum() - 1.0) < 1e-12
        assert np.all(s >= 0)


def test_softmax_overflow_safe():
    s = softmax(np.array([1000.0, 0.0, -1000.0, 500.0]))
    assert np.isfinite(s).all() and abs(s.sum() - 1.0) < 1e-12


def test_sample_action_distribution():
    # readout chosen so softmax(logits) = (0.7, 0.1, 0.1, 0.1)
    theta = np.zeros(param_count(GRU, 4, 3, 4))
    theta[-4:] = np.log([0.7, 0.1, 0.1, 0.1])
    p = PolicyParams(arch=GRU, hidden_dim=4, theta=theta, input_dim=3, n_actions=4)
    rng = np.random.default_rng(5)
    h = np.zeros(4)
    draws = [sample_action(p, h, rng) for _ in range(4000)]
    freq = np.bincount(draws, minlength=4) / 4000
    assert abs(freq[0] - 0.7) < 0.05


def test_flatten_unflatten_round_trip_exact():
    for arch in (GRU, VANILLA):
        p = init_params(arch, 16, seed=9)
        v = flatten_params(p)
        q = unflatten_params(arch, 16, v)
        assert np.array_equal(q.theta, p.theta)
        assert v is not p.theta  # a copy, not an alias
        with pytest.raises(LengthMismatch):
            unflatten_params(arch, 16, v[:-1])


def test_rnn_vector_field_formula():
    p = init_params(VANILLA, 10, seed=11)
    h = np.random.default_rng(1).standard_normal(10)
    np.testing.assert_allclose(rnn_vector_field(p, h),
                               np.tanh(p.W_rec @ h + p.b) - h, atol=0)


def test_gru_w_rec_alias():
    p = init_params(GRU, 8, seed=12)
    assert p.W_rec is p.U_c
    assert p.b is p.b_c


def test_checkpoint_round_trip(tmp_path):
    p = init_params(GRU, 16, seed=13)
    f = tmp_path / "ck.bin"
    save_checkpoint(str(f), p)
    q = load_checkpoint(str(f))
    assert q.arch == p.arch and q.hidden_dim == p.hidden_dim
    assert np.array_equal(q.theta, p.theta)
    save_checkpoint(str(tmp_path / "ck2.bin"), q)
    assert (tmp_path / "ck.bin").read_bytes() == (tmp_path / "ck2.bin").read_bytes()


def test_checkpoint_rejects_truncated(tmp_path):
    p = init_params(VANILLA, 8, seed=14)
    f = tmp_path / "ck.bin"
    save_checkpoint(str(f), p)
    data = f.read_bytes()
    (tmp_path / "bad.bin").write_bytes(data[:-8])
    with pytest.raises(LengthMismatch):
        load_checkpoint(str(tmp_path / "bad.bin"))
