"""Recurrent policy: GRU (default) or vanilla RNN state update plus a linear
action readout, stored as one flat parameter vector for black-box search.

Flat layout (layout_version 1), all blocks row-major:
  GRU:     W_z (H,I) | W_r (H,I) | W_c (H,I) | U_z (H,H) | U_r (H,H) | U_c (H,H)
           | b_z (H) | b_r (H) | b_c (H) | W_out (A,H) | b_out (A)
  vanilla: W_in (H,I) | W_rec (H,H) | b (H) | W_out (A,H) | b_out (A)

Gate convention: z = sigma(W_z o + U_z h + b_z), r likewise,
candidate = tanh(W_c o + U_c (r*h) + b_c), h' = (1-z)*h + z*candidate.
With all parameters zero this halves h exactly (z=0.5, candidate=0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .maze import N_ACTIONS, OBS_DIM

GRU = "gru"
VANILLA = "vanilla"

LAYOUT_VERSION = 1


class DimensionMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


def param_count(arch: str, hidden_dim: int, input_dim: int = OBS_DIM,
                n_actions: int = N_ACTIONS) -> int:
    h, i, a = hidden_dim, input_dim, n_actions
    if arch == GRU:
        return 3 * h * i + 3 * h * h + 3 * h + a * h + a
    if arch == VANILLA:
        return h * i + h * h + h + a * h + a
    raise ValueError(f"unknown arch {arch!r}")


@dataclass
class PolicyParams:
    """Flat parameter vector theta plus structured views into it.

    The views share memory with theta, so flatten/unflatten is a plain
    copy of the vector and always consistent with the matrices.
    """

    arch: str
    hidden_dim: int
    theta: np.ndarray
    input_dim: int = OBS_DIM
    n_actions: int = N_ACTIONS
    _views: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        expect = param_count(self.arch, self.hidden_dim, self.input_dim, self.n_actions)
        if self.theta.shape != (expect,):
            raise LengthMismatch(
                f"theta length {self.theta.shape} != {expect} for {self.arch}"
                f"({self.input_dim}->{self.hidden_dim}->{self.n_actions})")
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        h, i, a = self.hidden_dim, self.input_dim, self.n_actions
        off = 0

        def take(shape):
            nonlocal off
            n = int(np.prod(shape))
            v = self.theta[off:off + n].reshape(shape)
            off += n
            return v

        if self.arch == GRU:
            self._views = {
                "W_z": take((h, i)), "W_r": take((h, i)), "W_c": take((h, i)),
                "U_z": take((h, h)), "U_r": take((h, h)), "U_c": take((h, h)),
                "b_z": take((h,)), "b_r": take((h,)), "b_c": take((h,)),
                "W_out": take((a, h)), "b_out": take((a,)),
            }
        elif self.arch == VANILLA:
            self._views = {
                "W_in": take((h, i)), "W_rec_v": take((h, h)), "b_v": take((h,)),
                "W_out": take((a, h)), "b_out": take((a,)),
            }
        else:
            raise ValueError(f"unknown arch {self.arch!r}")
        assert off == expect

    def __getattr__(self, name):
        views = object.__getattribute__(self, "_views")
        if name in views:
            return views[name]
        raise AttributeError(name)

    # recurrent weights/bias in the sense of the autonomous vector field
    # tanh(W_rec h + b) - h: the candidate-gate recurrence for a GRU.
    @property
    def W_rec(self) -> np.ndarray:
        return self._views["U_c"] if self.arch == GRU else self._views["W_rec_v"]

    @property
    def b(self) -> np.ndarray:
        return self._views["b_c"] if self.arch == GRU else self._views["b_v"]


def init_params(arch: str = GRU, hidden_dim: int = 64, input_dim: int = OBS_DIM,
                n_actions: int = N_ACTIONS, std: float = 0.1, seed: int = 0) -> PolicyParams:
    """Zero-mean Gaussian init, std 0.1 by default."""
    rng = np.random.default_rng(seed)
    theta = std * rng.standard_normal(param_count(arch, hidden_dim, input_dim, n_actions))
    return PolicyParams(arch=arch, hidden_dim=hidden_dim, theta=theta,
                        input_dim=input_dim, n_actions=n_actions)


def zero_params(arch: str = GRU, hidden_dim: int = 64, input_dim: int = OBS_DIM,
                n_actions: int = N_ACTIONS) -> PolicyParams:
    theta = np.zeros(param_count(arch, hidden_dim, input_dim, n_actions))
    return PolicyParams(arch=arch, hidden_dim=hidden_dim, theta=theta,
                        input_dim=input_dim, n_actions=n_actions)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def recurrent_step(params: PolicyParams, h: np.ndarray, o: np.ndarray) -> np.ndarray:
    """One hidden-state update h' = f_theta(h, o)."""
    if h.shape != (params.hidden_dim,):
        raise DimensionMismatch(f"h shape {h.shape} != ({params.hidden_dim},)")
    if o.shape != (params.input_dim,):
        raise DimensionMismatch(f"o shape {o.shape} != ({params.input_dim},)")
    if params.arch == GRU:
        z = _sigmoid(params.W_z @ o + params.U_z @ h + params.b_z)
        r = _sigmoid(params.W_r @ o + params.U_r @ h + params.b_r)
        cand = np.tanh(params.W_c @ o + params.U_c @ (r * h) + params.b_c)
        return (1.0 - z) * h + z * cand
    return np.tanh(params.W_rec_v @ h + params.W_in @ o + params.b_v)


def policy_logits(params: PolicyParams, h: np.ndarray) -> np.ndarray:
    if h.shape != (params.hidden_dim,):
        raise DimensionMismatch(f"h shape {h.shape} != ({params.hidden_dim},)")
    return params.W_out @ h + params.b_out


def greedy_action(logits: np.ndarray) -> int:
    # argmax with lowest-index tie-break (numpy argmax semantics)
    return int(np.argmax(logits))


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - np.max(logits))
    return e / e.sum()


def sample_action(params: PolicyParams, h: np.ndarray, rng: np.random.Generator) -> int:
    """Stochastic softmax readout; analysis code uses greedy_action instead."""
    p = softmax(policy_logits(params, h))
    return int(rng.choice(params.n_actions, p=p))


def flatten_params(params: PolicyParams) -> np.ndarray:
    return params.theta.copy()


def unflatten_params(arch: str, hidden_dim: int, vector: np.ndarray,
                     input_dim: int = OBS_DIM, n_actions: int = N_ACTIONS) -> PolicyParams:
    vector = np.asarray(vector, dtype=np.float64)
    expect = param_count(arch, hidden_dim, input_dim, n_actions)
    if vector.shape != (expect,):
        raise LengthMismatch(f"vector length {vector.shape} != ({expect},)")
    return PolicyParams(arch=arch, hidden_dim=hidden_dim, theta=vector.copy(),
                        input_dim=input_dim, n_actions=n_actions)


def rnn_vector_field(params: PolicyParams, h: np.ndarray) -> np.ndarray:
    """Autonomous recurrent vector field F(h) = tanh(W_rec h + b) - h.

    Input term dropped on purpose: this is the field whose linearization is
    analyzed along orbits. Arch-agnostic via the W_rec/b views.
    """
    return np.tanh(params.W_rec @ h + params.b) - h


def save_checkpoint(path, params: PolicyParams) -> None:
    """JSON header line + little-endian f64 theta bytes."""
    header = {
        "arch": params.arch,
        "hidden_dim": params.hidden_dim,
        "input_dim": params.input_dim,
        "n_actions": params.n_actions,
        "n_params": int(params.theta.size),
        "layout_version": LAYOUT_VERSION,
        "dtype": "<f8",
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(params.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> PolicyParams:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("layout_version") != LAYOUT_VERSION:
            raise ValueError(f"unsupported layout_version {header.get('layout_version')}")
        theta = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    if theta.size != header["n_params"]:
        raise LengthMismatch(f"checkpoint holds {theta.size} params, header says {header['n_params']}")
    return PolicyParams(arch=header["arch"], hidden_dim=header["hidden_dim"],
                        theta=theta, input_dim=header["input_dim"],
                        n_actions=header["n_actions"])
