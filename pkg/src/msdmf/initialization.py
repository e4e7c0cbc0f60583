"""Automatic starting values: segment the series, fit static matrix-factor
models per segment, cluster segments into provisional regimes, and assemble
initial parameters with nearest-Kronecker-product VAR coefficients.

The per-segment estimator is the spectral (projection/PCA) matrix-factor
estimator; only initialization quality is at stake, and it is consistent
under the same factor structure as the heavier likelihood-based fits.
"""

from __future__ import annotations

from dataclasses import dataclass
import warnings

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.cluster.vq import kmeans2
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import squareform

from .linalg import symmetrize, unvec, vec_batch
from .model import Dims, ModelParams, RegimeParams, validate

__all__ = [
    "SegmentFit",
    "InitResult",
    "segment_series",
    "fit_segment",
    "space_distance",
    "cluster_segments",
    "kron_approx",
    "build_init",
]

MIN_SEGMENT = 30        # preferred segment length
MIN_SEGMENT_HARD = 10   # shorter series fall back to 2M segments of >= this


@dataclass(frozen=True)
class SegmentFit:
    interval: tuple[int, int]   # [lo, hi) half-open, 0-based
    R_seg: np.ndarray           # p x k1, R^T R / p = I
    C_seg: np.ndarray           # q x k2, C^T C / q = I
    F_seg: np.ndarray           # (len, k1, k2) factor estimates
    mu: np.ndarray              # mean of vec(F)
    Sigma: np.ndarray           # covariance of vec(F)


@dataclass(frozen=True)
class InitResult:
    params0: ModelParams
    s0: np.ndarray              # (n,) provisional 0-based labels
    segment_labels: np.ndarray  # (a,) cluster per segment


def default_segments(n: int, M: int) -> int:
    return max(min(10, n // MIN_SEGMENT), 2 * M)


def segment_series(n: int, M: int, a_target: int | None = None) -> list[tuple[int, int]]:
    """Split [0, n) into contiguous intervals with lengths differing by <= 1.

    Segments of at least 30 observations are preferred; when the series is
    too short for 2M such segments, the count drops to 2M with shorter
    segments (at least 10 observations each) so moderate sample sizes can
    still be initialized.
    """
    if a_target is None:
        a_target = default_segments(n, M)
    a = int(np.clip(a_target, 2 * M, max(n // MIN_SEGMENT, 2 * M)))
    if n < MIN_SEGMENT * a:
        a = 2 * M
    if n < MIN_SEGMENT_HARD * a:
        raise ValueError(
            f"series too short for initialization: n={n} "
            f"(need at least {MIN_SEGMENT_HARD * 2 * M} observations for M={M})")
    base, extra = divmod(n, a)
    intervals = []
    lo = 0
    for i in range(a):
        hi = lo + base + (1 if i < extra else 0)
        intervals.append((lo, hi))
        lo = hi
    return intervals


def _spectral_loading(S: np.ndarray, k: int, scale: float) -> np.ndarray:
    w, U = np.linalg.eigh(symmetrize(S))
    order = np.argsort(w)[::-1]
    w, U = w[order], U[:, order]
    if k < len(w) and abs(w[k - 1] - w[k]) < 1e-12:
        warnings.warn("eigenvalue gap at the factor cut is numerically zero; "
                      "factor order may be unstable", RuntimeWarning)
    return np.sqrt(scale) * U[:, :k]


def fit_segment(Yseg: np.ndarray, k1: int, k2: int) -> SegmentFit:
    """Static spectral fit on one segment.

    Loadings are the scaled top eigenvectors of the row/column covariance
    sums, factors are the projections ``R^T Y C / (pq)``.
    """
    Yseg = np.asarray(Yseg, dtype=float)
    m, p, q = Yseg.shape
    if m < max(k1, k2) + 2:
        raise ValueError(f"segment of length {m} too short for k1={k1}, k2={k2}")
    S_row = np.einsum("tpq,tzq->pz", Yseg, Yseg)
    S_col = np.einsum("tpq,tpz->qz", Yseg, Yseg)
    R = _spectral_loading(S_row, k1, p)
    C = _spectral_loading(S_col, k2, q)
    F = np.einsum("pa,tpq,qb->tab", R, Yseg, C) / (p * q)
    fvec = vec_batch(F)
    mu = fvec.mean(axis=0)
    Sigma = np.cov(fvec, rowvar=False, ddof=1).reshape(fvec.shape[1], fvec.shape[1])
    return SegmentFit(interval=(0, m), R_seg=R, C_seg=C, F_seg=F, mu=mu,
                      Sigma=symmetrize(Sigma))


def space_distance(Q1: np.ndarray, Q2: np.ndarray) -> float:
    """Projection-based distance between column spaces, in [0, 1].

    ``sqrt(1 - tr(P1 P2) / max(rank1, rank2))`` with ``P_i`` the column-space
    projection matrices; 0 iff equal spaces, 1 iff orthogonal spaces.
    """
    Q1 = np.asarray(Q1, dtype=float)
    Q2 = np.asarray(Q2, dtype=float)
    r1 = np.linalg.matrix_rank(Q1)
    r2 = np.linalg.matrix_rank(Q2)
    if r1 < Q1.shape[1] or r2 < Q2.shape[1]:
        raise ValueError("space_distance requires full column rank inputs")
    P1 = Q1 @ np.linalg.solve(Q1.T @ Q1, Q1.T)
    P2 = Q2 @ np.linalg.solve(Q2.T @ Q2, Q2.T)
    val = 1.0 - np.einsum("ij,ji->", P1, P2) / max(r1, r2)
    return float(np.sqrt(max(val, 0.0)))


def _hier_labels(D: np.ndarray, M: int) -> np.ndarray:
    Z = linkage(squareform(D, checks=False), method="average")
    return fcluster(Z, t=M, criterion="maxclust") - 1


def _align(ref: np.ndarray, other: np.ndarray, M: int) -> np.ndarray:
    """Relabel ``other`` to maximize co-occurrence with ``ref``."""
    cooc = np.zeros((M, M))
    for a, b in zip(ref, other):
        cooc[a, b] += 1
    rows, cols = linear_sum_assignment(-cooc)
    mapping = np.empty(M, dtype=int)
    mapping[cols] = rows
    return mapping[other]


def cluster_segments(fits: list[SegmentFit], M: int, seed: int = 0) -> np.ndarray:
    """Cluster segments by loading-space distances and factor moments.

    Average-linkage hierarchical clusterings on the R- and C-space distance
    matrices plus k-means on the standardized (mu, vech(Sigma)) features are
    combined by 2-of-3 majority vote after Hungarian label alignment;
    segments with no majority keep the R-based label.
    """
    a = len(fits)
    if M == 1:
        return np.zeros(a, dtype=int)
    if a < 2 * M:
        raise ValueError(f"need at least {2 * M} segments to form {M} clusters, got {a}")
    D_R = np.zeros((a, a))
    D_C = np.zeros((a, a))
    for i in range(a):
        for j in range(i + 1, a):
            D_R[i, j] = D_R[j, i] = space_distance(fits[i].R_seg, fits[j].R_seg)
            D_C[i, j] = D_C[j, i] = space_distance(fits[i].C_seg, fits[j].C_seg)
    lab_r = _hier_labels(D_R, M)
    lab_c = _hier_labels(D_C, M)

    iu = np.triu_indices(fits[0].Sigma.shape[0])
    feats = np.array([np.concatenate([f.mu, f.Sigma[iu]]) for f in fits])
    std = feats.std(axis=0)
    std[std == 0] = 1.0
    feats = (feats - feats.mean(axis=0)) / std
    _, lab_f = kmeans2(feats, M, minit="++", seed=seed)

    for name, lab in (("R", lab_r), ("C", lab_c), ("factor", lab_f)):
        if len(np.unique(lab)) < M:
            raise ValueError(f"{name}-based clustering produced an empty cluster")

    lab_c = _align(lab_r, lab_c, M)
    lab_f = _align(lab_r, lab_f, M)
    out = np.empty(a, dtype=int)
    for l in range(a):
        votes = [lab_r[l], lab_c[l], lab_f[l]]
        counts = np.bincount(votes, minlength=M)
        if counts.max() >= 2:
            out[l] = int(np.argmax(counts))
        else:
            out[l] = lab_r[l]
    return out


def kron_approx(Psi: np.ndarray, k1: int, k2: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest Kronecker product: minimize ||Psi - Gamma (x) Phi||_F.

    Rank-1 SVD of the blockwise rearrangement; scale fixed by
    ``||Phi||_F = ||Gamma||_F`` and sign by ``Phi[0, 0] >= 0``.
    """
    r = k1 * k2
    Psi = np.asarray(Psi, dtype=float)
    if Psi.shape != (r, r):
        raise ValueError(f"Psi must be {r}x{r} for k1={k1}, k2={k2}")
    T = Psi.reshape((k1, k2, k1, k2), order="F")
    K = np.reshape(np.transpose(T, (1, 3, 0, 2)), (k2 * k2, k1 * k1), order="F")
    U, s, Vt = np.linalg.svd(K, full_matrices=False)
    scale = np.sqrt(s[0])
    Gamma = unvec(scale * U[:, 0], k2, k2)
    Phi = unvec(scale * Vt[0], k1, k1)
    if Phi[0, 0] < 0:
        Phi, Gamma = -Phi, -Gamma
    return Phi, Gamma


def build_init(Y: np.ndarray, dims: Dims, a_target: int | None = None,
               seed: int = 0) -> InitResult:
    """Assemble starting parameters for the EM iteration."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    d = dims if dims.n == n else Dims(dims.p, dims.q, dims.k1, dims.k2, dims.M, n)
    intervals = segment_series(n, d.M, a_target)
    fits = [fit_segment(Y[lo:hi], d.k1, d.k2) for lo, hi in intervals]
    labels = cluster_segments(fits, d.M, seed=seed)

    s0 = np.empty(n, dtype=int)
    for (lo, hi), lab in zip(intervals, labels):
        s0[lo:hi] = lab

    loadings = []
    for k in range(d.M):
        sel = s0 == k
        if not np.any(sel):
            raise ValueError(f"provisional regime {k} received no observations")
        Ysub = Y[sel]
        S_row = np.einsum("tpq,tzq->pz", Ysub, Ysub)
        S_col = np.einsum("tpq,tpz->qz", Ysub, Ysub)
        loadings.append((_spectral_loading(S_row, d.k1, d.p),
                         _spectral_loading(S_col, d.k2, d.q)))

    F = np.empty((n, d.k1, d.k2))
    for t in range(n):
        R, C = loadings[s0[t]]
        F[t] = R.T @ Y[t] @ C / (d.p * d.q)
    fvec = vec_batch(F)

    regimes = []
    resid_sq = 0.0
    resid_cnt = 0
    for k in range(d.M):
        idx = np.where(s0 == k)[0]
        idx = idx[idx >= 1]
        X = np.column_stack([np.ones(len(idx)), fvec[idx - 1]])
        coef, *_ = np.linalg.lstsq(X, fvec[idx], rcond=None)
        beta0 = coef[0]
        Psi0 = coef[1:].T
        resid = fvec[idx] - X @ coef
        resid_sq += float(np.sum(resid ** 2))
        resid_cnt += resid.size
        Phi0, Gamma0 = kron_approx(Psi0, d.k1, d.k2)
        regimes.append(RegimeParams(R=loadings[k][0], C=loadings[k][1],
                                    B=unvec(beta0, d.k1, d.k2),
                                    Phi=Phi0, Gamma=Gamma0))

    sigma_eps2 = max(resid_sq / max(resid_cnt, 1), 1e-8)
    common = np.einsum("tpa,tab,tqb->tpq",
                       np.stack([loadings[k][0] for k in s0]), F,
                       np.stack([loadings[k][1] for k in s0]))
    sigma2 = max(float(np.sum((Y - common) ** 2)) / (n * d.p * d.q), 1e-8)

    counts = np.ones((d.M, d.M))  # Laplace smoothing keeps rows positive
    for t in range(1, n):
        counts[s0[t - 1], s0[t]] += 1.0
    P0 = counts / counts.sum(axis=1, keepdims=True)

    params0 = ModelParams(dims=d, regimes=tuple(regimes), sigma2=sigma2,
                          sigma_eps2=sigma_eps2, P=P0)
    problems = validate(params0)
    if problems:
        raise RuntimeError("initialization produced invalid parameters: "
                           + "; ".join(problems))
    return InitResult(params0=params0, s0=s0, segment_labels=labels)
