"""Local linearization and contraction checks along captured orbits.

Two complementary stability views are computed along a cycle: the
continuous-time vector field F(h) = tanh(W_rec h + b) - h with criterion
max Re(eig(J_F)) < 0, and the actual discrete update map conditioned on the
step's observation with criterion spectral_radius(J) < 1. The second is the
normative one for discrete dynamics; the first is reported for comparison.

The stroboscopic map S composes one full period of update maps; an empirical
Lipschitz bound < 1 plus a small fixed-point residual witnesses a unique
attracting T-periodic orbit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cycles import LimitCycle
from .policy import PolicyParams, recurrent_step

VECTOR_FIELD = "vector_field"
DISCRETE_MAP = "discrete_map"

_TINY = 1e-300


class EigenStalled(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# eigenvalues: Householder Hessenberg reduction, then explicit shifted QR in
# complex arithmetic with Wilkinson shifts and bottom-up deflation. Fine for
# the dims used here (<= 128); not a LAPACK replacement.


def _hessenberg(A: np.ndarray) -> np.ndarray:
    H = np.array(A, dtype=np.float64)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1:, k]
        nx = np.linalg.norm(x)
        if nx <= _TINY:
            continue
        v = x.copy()
        v[0] += np.copysign(nx, x[0]) if x[0] != 0 else nx
        nv = np.linalg.norm(v)
        if nv <= _TINY:
            continue
        v /= nv
        H[k + 1:, k:] -= 2.0 * np.outer(v, v @ H[k + 1:, k:])
        H[:, k + 1:] -= 2.0 * np.outer(H[:, k + 1:] @ v, v)
    return H


def _eig2(a, b, c, d):
    # 2x2 block [[a, b], [c, d]]
    half = 0.5 * (a + d)
    disc = np.emath.sqrt((0.5 * (a - d)) ** 2 + b * c)
    return half + disc, half - disc


def _qr_step(H: np.ndarray, mu: complex) -> None:
    """One explicit shifted QR sweep, in place, on a complex Hessenberg
    block: H <- RQ + mu I where QR = H - mu I (Givens)."""
    k = H.shape[0]
    H.flat[:: k + 1] -= mu
    rots = []
    for i in range(k - 1):
        a, b = H[i, i], H[i + 1, i]
        r = np.hypot(abs(a), abs(b))
        if r <= _TINY:
            c, s = 1.0 + 0j, 0.0 + 0j
        else:
            c, s = a / r, b / r
        rots.append((c, s))
        top = np.conj(c) * H[i, i:] + np.conj(s) * H[i + 1, i:]
        H[i + 1, i:] = -s * H[i, i:] + c * H[i + 1, i:]
        H[i, i:] = top
    for i, (c, s) in enumerate(rots):
        lo = min(i + 2, k)
        col = H[:lo, i] * c + H[:lo, i + 1] * s
        H[:lo, i + 1] = H[:lo, i] * (-np.conj(s)) + H[:lo, i + 1] * np.conj(c)
        H[:lo, i] = col
    H.flat[:: k + 1] += mu


def eigenvalues(A: np.ndarray, tol: float = 1e-13,
                max_iter_per_eig: int = 60) -> np.ndarray:
    """All eigenvalues of a real square matrix, as complex numbers."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"square matrix required, got {A.shape}")
    n = A.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.complex128)
    if n == 1:
        return A.astype(np.complex128).ravel()
    H = _hessenberg(A).astype(np.complex128)
    eigs = []
    m = n - 1
    stalled = 0
    budget = max_iter_per_eig * n
    while m >= 0:
        if m == 0:
            eigs.append(H[0, 0])
            break
        sub = abs(H[m, m - 1])
        if sub <= tol * (abs(H[m - 1, m - 1]) + abs(H[m, m])) + _TINY:
            eigs.append(H[m, m])
            m -= 1
            stalled = 0
            continue
        lo = 0
        for k in range(m - 1, 0, -1):
            if abs(H[k, k - 1]) <= tol * (abs(H[k - 1, k - 1]) + abs(H[k, k])) + _TINY:
                lo = k
                break
        if m - lo == 1:
            l1, l2 = _eig2(H[lo, lo], H[lo, m], H[m, lo], H[m, m])
            eigs.extend([l1, l2])
            m = lo - 1
            stalled = 0
            continue
        a, b = H[m - 1, m - 1], H[m - 1, m]
        c, d = H[m, m - 1], H[m, m]
        l1, l2 = _eig2(a, b, c, d)
        mu = l1 if abs(l1 - d) <= abs(l2 - d) else l2
        if stalled and stalled % 12 == 0:
            mu = d + abs(H[m, m - 1])  # exceptional shift to break cycling
        _qr_step(H[lo:m + 1, lo:m + 1], mu)
        stalled += 1
        budget -= 1
        if budget <= 0:
            raise EigenStalled(f"no deflation after {max_iter_per_eig * n} sweeps")
    return np.array(eigs, dtype=np.complex128)


# ---------------------------------------------------------------------------
# Jacobians


def jacobian_vector_field(params: PolicyParams, h: np.ndarray) -> np.ndarray:
    """Closed form for F(h) = tanh(W_rec h + b) - h:
    diag(1 - tanh^2(W_rec h + b)) W_rec - I."""
    W = params.W_rec
    z = np.tanh(W @ np.asarray(h, dtype=np.float64) + params.b)
    return (1.0 - z * z)[:, None] * W - np.eye(params.hidden_dim)


def jacobian_discrete_map(params: PolicyParams | None, h: np.ndarray,
                          o: np.ndarray | None, step: float = 1e-6,
                          fn=None) -> np.ndarray:
    """Central-difference Jacobian of h -> recurrent_step(params, h, o).
    fn(h) substitutes the map when given (calibration hook)."""
    if fn is None:
        def fn(hh):
            return recurrent_step(params, hh, o)
    h = np.asarray(h, dtype=np.float64)
    n = h.size
    J = np.empty((n, n))
    for i in range(n):
        hp = h.copy()
        hm = h.copy()
        hp[i] += step
        hm[i] -= step
        J[:, i] = (fn(hp) - fn(hm)) / (2 * step)
    return J


@dataclass
class SpectrumRecord:
    step_index: int
    eigenvalues: np.ndarray   # complex
    max_real: float
    spectral_radius: float


def _record(i: int, ev: np.ndarray) -> SpectrumRecord:
    return SpectrumRecord(step_index=i, eigenvalues=ev,
                          max_real=float(ev.real.max()),
                          spectral_radius=float(np.abs(ev).max()))


def cycle_spectrum(params: PolicyParams, cycle: LimitCycle,
                   mode: str = DISCRETE_MAP) -> list[SpectrumRecord]:
    """One SpectrumRecord per cycle step. vector_field mode linearizes the
    input-free field F (criterion max_real < 0); discrete_map mode linearizes
    the actual update conditioned on the step's observation (criterion
    spectral_radius < 1)."""
    records = []
    for i in range(cycle.period):
        if mode == VECTOR_FIELD:
            J = jacobian_vector_field(params, cycle.states[i])
        elif mode == DISCRETE_MAP:
            J = jacobian_discrete_map(params, cycle.states[i],
                                      cycle.observations[i])
        else:
            raise ValueError(f"unknown mode {mode!r}")
        records.append(_record(i, eigenvalues(J)))
    return records


# ---------------------------------------------------------------------------
# stroboscopic contraction


@dataclass
class ContractionEstimate:
    period: int
    per_step_lipschitz: np.ndarray
    product_bound: float
    fixed_point_residual: float


def stroboscopic_check(params: PolicyParams | None, obs_cycle,
                       probes: int = 64, probe_radius: float = 1e-3,
                       seed: int = 0, warmup_periods: int = 200,
                       step_fn=None, h0: np.ndarray | None = None) -> ContractionEstimate:
    """Empirical Lipschitz estimate of the one-period stroboscopic map.

    Random probe pairs at probe_radius around the entrained orbit are pushed
    through each step map; the per-step max separation ratio estimates that
    step's local Lipschitz constant, and their product bounds the full map S.
    Pair separations are renormalized after each step so the estimate stays
    well conditioned under strong contraction. step_fn(h, t) overrides the
    policy update (calibration hook); h0 overrides the cold start.
    """
    if probes < 1:
        raise ValueError(f"probes must be >= 1, got {probes}")
    T = len(obs_cycle)
    if step_fn is None:
        def step_fn(h, t):
            return recurrent_step(params, h, obs_cycle[t])
    if h0 is None:
        h0 = np.zeros(params.hidden_dim)
    h_star = np.asarray(h0, dtype=np.float64)
    for k in range(warmup_periods * T):
        h_star = step_fn(h_star, k % T)
    s_h = h_star
    for t in range(T):
        s_h = step_fn(s_h, t)
    residual = float(np.linalg.norm(s_h - h_star))

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(37,)))
    dim = h_star.size
    u = rng.standard_normal((probes, dim))
    v = rng.standard_normal((probes, dim))
    x = h_star + probe_radius * u / np.linalg.norm(u, axis=1, keepdims=True)
    y = h_star + probe_radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    lips = np.empty(T)
    for t in range(T):
        fx = np.array([step_fn(x[i], t) for i in range(probes)])
        fy = np.array([step_fn(y[i], t) for i in range(probes)])
        before = np.linalg.norm(x - y, axis=1)
        after = np.linalg.norm(fx - fy, axis=1)
        lips[t] = float((after / before).max())
        d = fx - fy
        nd = np.linalg.norm(d, axis=1, keepdims=True)
        nd[nd == 0] = 1.0
        x = fx
        y = fx - d * (probe_radius / nd)
    return ContractionEstimate(period=T, per_step_lipschitz=lips,
                               product_bound=float(np.prod(lips)),
                               fixed_point_residual=residual)
