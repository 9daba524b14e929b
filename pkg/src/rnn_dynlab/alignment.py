"""Linear alignment between neural cycle geometry and behavior fields.

Both datasets are compressed with PCA, standardized, and related through
regularized canonical correlation analysis. The canonical spectrum says
how many shared linear modes the two geometries have; distance-matrix
correlation (RSA) checks the same correspondence without fitting any
map. An action-constrained random control produces matched fake neural
states that trigger identical actions through the readout, isolating
what part of the alignment is explained by action coding alone.
"""

from dataclasses import dataclass
import warnings

import numpy as np

NEURAL = "neural"
BEHAVIOR = "behavior"


class RankDeficient(UserWarning):
    pass


class SingularCovariance(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class DegenerateVariance(ValueError):
    pass


class InfeasibleConstraint(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# PCA

@dataclass
class PcaModel:
    mean: np.ndarray                # (d,)
    components: np.ndarray          # (k, d) orthonormal rows
    explained_variance: np.ndarray  # (k,) non-increasing
    k: int
    truncated: bool = False


def pca_fit(X, k: int) -> PcaModel:
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if not (n > k >= 1):
        raise ValueError(f"need n > k >= 1, got n={n}, k={k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    rank = int((s > s[0] * max(n, d) * np.finfo(np.float64).eps).sum()) if s.size else 0
    truncated = rank < k
    if truncated:
        warnings.warn(RankDeficient(f"rank {rank} < k {k}, truncating"))
        k = max(rank, 1)
    return PcaModel(mean=mean, components=Vt[:k].copy(),
                    explained_variance=(s[:k] ** 2) / (n - 1),
                    k=k, truncated=truncated)


def pca_transform(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.mean.shape[0]:
        raise DimensionMismatch(f"{X.shape[-1]} != {model.mean.shape[0]}")
    return (X - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[-1] != model.k:
        raise DimensionMismatch(f"{Z.shape[-1]} != k {model.k}")
    return Z @ model.components + model.mean


# ---------------------------------------------------------------------------
# regularized CCA

@dataclass
class CcaModel:
    x_pca: PcaModel
    y_pca: PcaModel
    x_scale: np.ndarray   # per retained PCA dim std
    y_scale: np.ndarray
    U: np.ndarray         # (k_x, k_cca) canonical weights on standardized scores
    V: np.ndarray         # (k_y, k_cca)
    rho: np.ndarray       # (k_cca,) non-increasing, in [0, 1]
    U_pinv: np.ndarray    # (k_cca, k_x)
    V_pinv: np.ndarray
    ridge: float


def _standardize(scores):
    scale = scores.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return scores / scale, scale


def _inv_sqrt(S, ridge_abs: float):
    w, Q = np.linalg.eigh(S)
    if ridge_abs == 0.0 and w.min() <= S.shape[0] * np.finfo(np.float64).eps * max(w.max(), 0.0):
        raise SingularCovariance(f"min eigenvalue {w.min():.3e} with ridge 0")
    return Q @ np.diag(1.0 / np.sqrt(w + ridge_abs)) @ Q.T


def _fit_scores(Xs, Ys, k_cca: int, ridge: float):
    """CCA core on standardized score matrices; returns U, V, rho."""
    n = Xs.shape[0]
    Sxx = (Xs.T @ Xs) / (n - 1)
    Syy = (Ys.T @ Ys) / (n - 1)
    Sxy = (Xs.T @ Ys) / (n - 1)
    rx = ridge * float(np.mean(np.diag(Sxx)))
    ry = ridge * float(np.mean(np.diag(Syy)))
    Wx = _inv_sqrt(Sxx, rx)
    Wy = _inv_sqrt(Syy, ry)
    A, s, Bt = np.linalg.svd(Wx @ Sxy @ Wy)
    k = min(k_cca, s.size)
    U = Wx @ A[:, :k]
    V = Wy @ Bt[:k].T
    # unit-variance variates by construction, then empirical correlations
    # as the reported spectrum so the variates and rho agree exactly
    for i in range(k):
        zu = Xs @ U[:, i]
        zv = Ys @ V[:, i]
        su = zu.std(ddof=1)
        sv = zv.std(ddof=1)
        if su > 0:
            U[:, i] /= su
        if sv > 0:
            V[:, i] /= sv
    Zx = Xs @ U
    Zy = Ys @ V
    rho = np.empty(k)
    for i in range(k):
        if Zx[:, i].std() == 0.0 or Zy[:, i].std() == 0.0:
            rho[i] = 0.0
            continue
        c = float(np.corrcoef(Zx[:, i], Zy[:, i])[0, 1])
        if c < 0:
            V[:, i] = -V[:, i]
            c = -c
        rho[i] = min(c, 1.0)
    order = np.argsort(-rho, kind="stable")
    return U[:, order], V[:, order], rho[order]


def cca_fit(X, Y, k_cca: int = 10, k_x: int = 50, k_y: int = 50,
            ridge: float = 1e-6) -> CcaModel:
    """PCA both sides, standardize, then whitened-SVD canonical analysis.

    ridge is relative to the mean covariance diagonal; finite samples
    need it even though the idealized objective has none.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"paired rows required, {X.shape[0]} != {Y.shape[0]}")
    k_x = min(k_x, X.shape[1])
    k_y = min(k_y, Y.shape[1])
    if X.shape[0] <= max(k_x, k_y):
        raise ValueError(f"need n > max(k_x, k_y), got n={X.shape[0]}")
    xp = pca_fit(X, k_x)
    yp = pca_fit(Y, k_y)
    Xs, xscale = _standardize(pca_transform(xp, X))
    Ys, yscale = _standardize(pca_transform(yp, Y))
    U, V, rho = _fit_scores(Xs, Ys, k_cca, ridge)
    return CcaModel(x_pca=xp, y_pca=yp, x_scale=xscale, y_scale=yscale,
                    U=U, V=V, rho=rho,
                    U_pinv=np.linalg.pinv(U), V_pinv=np.linalg.pinv(V),
                    ridge=ridge)


def _side(model: CcaModel, side: str):
    if side == NEURAL:
        return model.x_pca, model.x_scale, model.U, model.U_pinv
    if side == BEHAVIOR:
        return model.y_pca, model.y_scale, model.V, model.V_pinv
    raise ValueError(f"side {side!r}")


def cca_project(model: CcaModel, side: str, rows) -> np.ndarray:
    """Center, PCA-project, rescale, apply canonical weights."""
    pca, scale, W, _ = _side(model, side)
    rows = np.asarray(rows, dtype=np.float64)
    squeeze = rows.ndim == 1
    scores = pca_transform(pca, np.atleast_2d(rows)) / scale
    z = scores @ W
    return z[0] if squeeze else z


def cca_inverse(model: CcaModel, side: str, z) -> np.ndarray:
    """Pseudo-inverse path back through scaling, PCA and the mean."""
    pca, scale, W, W_pinv = _side(model, side)
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 1
    z2 = np.atleast_2d(z)
    if z2.shape[1] != W.shape[1]:
        raise DimensionMismatch(f"{z2.shape[1]} != k_cca {W.shape[1]}")
    rows = pca_inverse(pca, (z2 @ W_pinv) * scale)
    return rows[0] if squeeze else rows


def permutation_null(X, Y, k_cca: int = 10, k_x: int = 50, k_y: int = 50,
                     ridge: float = 1e-6, n_shuffles: int = 200,
                     seed: int = 0) -> np.ndarray:
    """Spectra under row-pairing destruction: (n_shuffles, k_cca).

    PCA and standardization are pairing-independent, so they are done
    once and only the cross-covariance pairing is reshuffled.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    xp = pca_fit(X, min(k_x, X.shape[1]))
    yp = pca_fit(Y, min(k_y, Y.shape[1]))
    Xs, _ = _standardize(pca_transform(xp, X))
    Ys, _ = _standardize(pca_transform(yp, Y))
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_shuffles):
        perm = rng.permutation(Ys.shape[0])
        _, _, rho = _fit_scores(Xs, Ys[perm], k_cca, ridge)
        out.append(rho)
    return np.stack(out, axis=0)


# ---------------------------------------------------------------------------
# distance-matrix comparison

@dataclass
class DistanceMatrix:
    n: int
    d: np.ndarray    # (n, n) symmetric, zero diagonal, non-negative

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64)
        if self.d.shape != (self.n, self.n):
            raise DimensionMismatch(f"{self.d.shape} != ({self.n}, {self.n})")
        if not np.array_equal(self.d, self.d.T) or np.any(np.diag(self.d) != 0.0):
            raise ValueError("need exact symmetry and zero diagonal")
        if self.d.min() < 0.0:
            raise ValueError("negative distances")


def distance_matrix(rows) -> DistanceMatrix:
    """Pairwise Euclidean distances between row vectors."""
    rows = np.asarray(rows, dtype=np.float64)
    sq = (rows ** 2).sum(axis=1)
    g = sq[:, None] + sq[None, :] - 2.0 * (rows @ rows.T)
    np.maximum(g, 0.0, out=g)
    d = np.sqrt(g)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(n=rows.shape[0], d=d)


def rsa_pearson(a: DistanceMatrix, b: DistanceMatrix) -> float:
    """Pearson correlation over the strict upper triangles."""
    if a.n != b.n:
        raise DimensionMismatch(f"{a.n} != {b.n}")
    if a.n < 3:
        raise ValueError(f"need n >= 3, got {a.n}")
    iu = np.triu_indices(a.n, k=1)
    x = a.d[iu]
    y = b.d[iu]
    if x.std() == 0.0 or y.std() == 0.0:
        raise DegenerateVariance("constant distance matrix")
    return float(np.corrcoef(x, y)[0, 1])


def rsa_shuffled_null(a: DistanceMatrix, b: DistanceMatrix,
                      n_shuffles: int = 200, seed: int = 0) -> np.ndarray:
    """R values after randomly relabeling one matrix's items."""
    rng = np.random.default_rng(seed)
    out = np.empty(n_shuffles)
    for i in range(n_shuffles):
        perm = rng.permutation(b.n)
        out[i] = rsa_pearson(a, DistanceMatrix(n=b.n, d=b.d[perm][:, perm]))
    return out


# ---------------------------------------------------------------------------
# action-constrained random control

def pseudo_manifold(target_actions, W_out, b_out, dim: int,
                    margin: float = 0.1, seed: int = 0) -> np.ndarray:
    """Random states forced to trigger the given actions via the readout.

    Each draw is orthogonalized against the non-target readout rows so
    their logits collapse to the bias, then pushed along the part of the
    target row orthogonal to them until the target logit clears every
    other logit by the margin. The result mimics behavior exactly while
    carrying no recurrent structure.
    """
    W_out = np.asarray(W_out, dtype=np.float64)
    b_out = np.asarray(b_out, dtype=np.float64)
    n_actions = W_out.shape[0]
    if n_actions < 2:
        raise ValueError(f"need >= 2 actions, got {n_actions}")
    if dim < n_actions or W_out.shape[1] != dim:
        raise ValueError(f"dim {dim} vs readout {W_out.shape}")
    targets = np.asarray(target_actions, dtype=np.int64)
    rng = np.random.default_rng(seed)
    out = np.empty((targets.size, dim))
    for t, a in enumerate(targets):
        v0 = rng.standard_normal(dim)
        w_t = W_out[a]
        others = np.delete(W_out, a, axis=0)
        q, _ = np.linalg.qr(others.T)   # orthonormal basis of other rows
        v = v0 - q @ (q.T @ v0)
        w_perp = w_t - q @ (q.T @ w_t)
        npd = np.linalg.norm(w_perp)
        if npd < 1e-9 * max(np.linalg.norm(w_t), 1.0):
            raise InfeasibleConstraint(
                f"target readout row {a} lies in the span of the others")
        b_t = b_out[a]
        b_other_max = float(np.delete(b_out, a).max())
        budget = 2.0 * np.linalg.norm(v0)
        s = 1.0
        for _ in range(40):
            need = (b_other_max + margin - b_t - float(w_t @ (s * v))) / npd
            cand = s * v + max(need, 0.0) * (w_perp / npd)
            if np.linalg.norm(cand) <= budget:
                break
            s *= 0.5
        else:
            raise InfeasibleConstraint(f"norm budget exhausted at step {t}")
        logits = W_out @ cand + b_out
        if int(np.argmax(logits)) != int(a):
            raise InfeasibleConstraint(f"constraint failed at step {t}")
        out[t] = cand
    return out


# ---------------------------------------------------------------------------
# trained-vs-control comparison

@dataclass
class ControlResult:
    trained: CcaModel
    control: CcaModel
    trained_rho: np.ndarray
    control_rho: np.ndarray
    trained_variates: tuple   # (Zx, Zy) on the shared fit data
    control_variates: tuple


def control_experiment(neural_rows, field_rows, control_rows,
                       k_cca: int = 10, k_x: int = 50, k_y: int = 50,
                       ridge: float = 1e-6) -> ControlResult:
    """Fit the same pipeline on trained states and on matched controls.

    Both fits share the behavior side so any spectral gap is due to the
    neural data alone.
    """
    trained = cca_fit(neural_rows, field_rows, k_cca, k_x, k_y, ridge)
    control = cca_fit(control_rows, field_rows, k_cca, k_x, k_y, ridge)
    tz = (cca_project(trained, NEURAL, neural_rows),
          cca_project(trained, BEHAVIOR, field_rows))
    cz = (cca_project(control, NEURAL, control_rows),
          cca_project(control, BEHAVIOR, field_rows))
    return ControlResult(trained=trained, control=control,
                         trained_rho=trained.rho, control_rho=control.rho,
                         trained_variates=tz, control_variates=cz)
