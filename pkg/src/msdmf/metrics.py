"""Evaluation metrics: loading-space distances, regime Rand index, factor
R-squared, parameter MSEs, and common-component MSE.

Estimated regimes are matched to true regimes by minimal total loading-space
distance (assignment problem) because labels are arbitrary; intercept-based
ordering is applied separately when reporting parameters.  Parameter-block
MSEs resolve the rotational gauge with per-regime orthogonal Procrustes fits
of the estimated loadings onto the true ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .em import FitResult
from .initialization import space_distance
from .linalg import unvec_batch, vec_batch
from .simulate import SimOutput

__all__ = ["EvalReport", "evaluate", "rand_index"]


@dataclass(frozen=True)
class EvalReport:
    n: int
    p: int
    q: int
    dist_R: np.ndarray      # (M,) per true regime
    dist_C: np.ndarray      # (M,)
    r2_F: np.ndarray        # (M,) NaN where a regime has no observations
    rand_s: float
    mse: dict[str, float]
    mse_common: float

    def to_row(self) -> dict[str, float]:
        """Flat column -> value mapping for one CSV row."""
        row: dict[str, float] = {"n": self.n, "p": self.p, "q": self.q}
        M = len(self.dist_R)
        for k in range(M):
            row[f"dist_R_{k + 1}"] = float(self.dist_R[k])
            row[f"dist_C_{k + 1}"] = float(self.dist_C[k])
        for k in range(M):
            row[f"r2_F_{k + 1}"] = float(self.r2_F[k])
        row["rand"] = float(self.rand_s)
        for key, val in self.mse.items():
            row[f"mse_{key}"] = float(val)
        row["mse_common"] = float(self.mse_common)
        return row


def rand_index(a, b) -> float:
    """Unadjusted Rand index between two labelings of the same points."""
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"label sequences differ in length: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("rand_index needs at least two points")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ct = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(ct, (ai, bi), 1.0)

    def comb2(x):
        return float(np.sum(x * (x - 1.0) / 2.0))

    total = n * (n - 1.0) / 2.0
    s_joint = comb2(ct)
    s_a = comb2(ct.sum(axis=1))
    s_b = comb2(ct.sum(axis=0))
    return (total + 2.0 * s_joint - s_a - s_b) / total


def _procrustes(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Orthogonal H minimizing ||A H - B||_F."""
    U, _, Vt = np.linalg.svd(A.T @ B)
    return U @ Vt


def _r2_scores(truth_f: np.ndarray, est_f: np.ndarray) -> float:
    """Coordinatewise R^2 of regressing true factors on estimates, averaged."""
    X = np.column_stack([np.ones(len(est_f)), est_f])
    coef, *_ = np.linalg.lstsq(X, truth_f, rcond=None)
    resid = truth_f - X @ coef
    ss_res = np.sum(resid ** 2, axis=0)
    centered = truth_f - truth_f.mean(axis=0)
    ss_tot = np.sum(centered ** 2, axis=0)
    keep = ss_tot > 0
    if not np.any(keep):
        return np.nan
    return float(np.mean(1.0 - ss_res[keep] / ss_tot[keep]))


def evaluate(fit: FitResult, truth: SimOutput) -> EvalReport:
    """Score a fitted model against simulation ground truth."""
    tp = truth.truth
    d = tp.dims
    est = fit.theta_raw
    M = d.M

    cost = np.zeros((M, M))
    for k in range(M):
        for j in range(M):
            cost[k, j] = (space_distance(tp.regimes[k].R, est.regimes[j].R)
                          + space_distance(tp.regimes[k].C, est.regimes[j].C))
    _, assign = linear_sum_assignment(cost)   # true k -> estimated assign[k]

    dist_R = np.array([space_distance(tp.regimes[k].R, est.regimes[assign[k]].R)
                       for k in range(M)])
    dist_C = np.array([space_distance(tp.regimes[k].C, est.regimes[assign[k]].C)
                       for k in range(M)])

    truth_fvec = vec_batch(truth.F)
    r2 = np.full(M, np.nan)
    for k in range(M):
        mask = truth.s == k
        if mask.sum() > d.r + 2:
            r2[k] = _r2_scores(truth_fvec[mask], fit.f_hat[mask])

    mse: dict[str, float] = {}
    P_est = np.asarray(est.P)[np.ix_(assign, assign)]
    mse["P"] = float(np.mean((P_est - np.asarray(tp.P)) ** 2))
    mse["sigma2"] = float((est.sigma2 - tp.sigma2) ** 2)
    mse["sigma_eps2"] = float((est.sigma_eps2 - tp.sigma_eps2) ** 2)
    for k in range(M):
        te = est.regimes[assign[k]]
        tt = tp.regimes[k]
        H_r = _procrustes(te.R, tt.R)
        H_c = _procrustes(te.C, tt.C)
        mse[f"B_{k + 1}"] = float(np.mean((H_r.T @ te.B @ H_c - tt.B) ** 2))
        mse[f"Phi_{k + 1}"] = float(np.mean((H_r.T @ te.Phi @ H_r - tt.Phi) ** 2))
        mse[f"Gamma_{k + 1}"] = float(np.mean((H_c.T @ te.Gamma @ H_c - tt.Gamma) ** 2))

    F_hat = unvec_batch(fit.f_hat, d.k1, d.k2)
    n = truth.Y.shape[0]
    err = 0.0
    for t in range(n):
        re = est.regimes[fit.s_hat[t]]
        rt = tp.regimes[truth.s[t]]
        X_hat = re.R @ F_hat[t] @ re.C.T
        X_true = rt.R @ truth.F[t] @ rt.C.T
        err += float(np.sum((X_hat - X_true) ** 2))
    mse_common = err / (n * d.p * d.q)

    return EvalReport(n=n, p=d.p, q=d.q, dist_R=dist_R, dist_C=dist_C,
                      r2_F=r2, rand_s=rand_index(fit.s_hat, truth.s),
                      mse=mse, mse_common=mse_common)
