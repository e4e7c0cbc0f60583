"""Forward pass: conditional Kalman steps per regime pair, log-domain regime
filtering, and the M x M -> M collapsing step.

The correction and the per-pair predictive log-density work entirely in the
``r = k1*k2`` factor dimension (the observation covariance is never formed),
so one pass costs O(n M^2 (r^3 + pq r)).

All regime-probability arithmetic runs in log space: at ``pq = 100`` the raw
Gaussian densities underflow double precision, so posteriors are normalized
with log-sum-exp and only the normalized weights ever leave log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .linalg import kron, psd_sqrt, symmetrize, unvec, vec, vec_batch
from .model import ModelParams, stationary_dist

__all__ = [
    "FilterError",
    "FilterOutput",
    "RegimeCache",
    "predict_pair",
    "correct_pair",
    "pair_log_density",
    "hamilton_step",
    "collapse",
    "filter_pass",
]

# regimes with filtered probability below this carry prediction values forward
WEIGHT_FLOOR = 1e-300


class FilterError(RuntimeError):
    """Filter failure; message records the time index and regime pair."""


@dataclass(frozen=True)
class FilterOutput:
    """Per-time collapsed moments and regime weights from the forward pass.

    Time indices are 0-based. ``w_joint[t, i, k]`` is the posterior
    probability of the regime pair (s_{t-1}=i, s_t=k) given data through t,
    where t=0 pairs against the artificial initial regime; ``w_pred_joint``
    holds the corresponding one-step-ahead (prior) pair probabilities.
    """

    f_filt: np.ndarray            # (n, M, r) collapsed means
    V_filt: np.ndarray            # (n, M, r, r) collapsed covariances
    w_joint: np.ndarray           # (n, M, M) posterior pair weights
    w_pred_joint: np.ndarray      # (n, M, M) predictive pair weights
    w_filt: np.ndarray            # (n, M) marginal filtered weights
    loglik_increments: np.ndarray  # (n,) log p(y_t | Y_{t-1})
    total_loglik: float
    pi0: np.ndarray               # (M,) initial regime distribution
    f0: np.ndarray                # (M, r) initial collapsed means
    V0: np.ndarray                # (M, r, r) initial collapsed covariances

    @property
    def n(self) -> int:
        return self.f_filt.shape[0]


class RegimeCache:
    """Per-regime quantities reused across every filter/smoother step."""

    def __init__(self, params: ModelParams, Y: np.ndarray | None = None):
        d = params.dims
        self.dims = d
        self.Psi = np.stack([kron(reg.Gamma, reg.Phi) for reg in params.regimes])
        self.beta = np.stack([vec(reg.B) for reg in params.regimes])
        self.AtA = np.stack([
            kron(reg.C.T @ reg.C, reg.R.T @ reg.R) for reg in params.regimes
        ])
        self.Ah = np.stack([psd_sqrt(A) for A in self.AtA])
        self.sigma2 = float(params.sigma2)
        self.sigma_eps2 = float(params.sigma_eps2)
        if Y is not None:
            Y = np.asarray(Y, dtype=float)
            # g[t, k] = vec(R_k^T Y_t C_k) = Lambda_k^T y_t, computed without Lambda
            self.g = np.stack([
                vec_batch(np.einsum("pa,tpq,qb->tab", reg.R, Y, reg.C))
                for reg in params.regimes
            ], axis=1)
            self.yty = np.einsum("tpq,tpq->t", Y, Y)


def _predict(Psi, beta, f_prev, V_prev, sigma_eps2):
    f_pred = beta + np.einsum("...ij,...j->...i", Psi, f_prev)
    V_pred = Psi @ V_prev @ np.swapaxes(Psi, -1, -2)
    r = V_pred.shape[-1]
    V_pred = symmetrize(V_pred) + sigma_eps2 * np.eye(r)
    return f_pred, V_pred


def _correct(AtA, g, f_pred, V_pred, sigma2):
    r = V_pred.shape[-1]
    lhs = np.eye(r) + V_pred @ AtA / sigma2
    V_corr = symmetrize(np.linalg.solve(lhs, V_pred))
    resid = g - np.einsum("...ij,...j->...i", AtA, f_pred)
    f_corr = f_pred + np.einsum("...ij,...j->...i", V_corr, resid) / sigma2
    return f_corr, V_corr


def _log_density(Ah, AtA, g, yty, f_pred, V_pred, V_corr, sigma2, pq):
    dvals = np.linalg.eigvalsh(symmetrize(Ah @ V_pred @ Ah))
    ratio = 1.0 + dvals / sigma2
    if np.any(ratio <= 0.0):
        raise FilterError(
            "non-positive eigenvalue in predictive covariance "
            f"(min 1 + d/sigma2 = {ratio.min():.3e}); V_pred is not PSD"
        )
    logdet = np.log(ratio).sum(axis=-1)
    h = np.einsum("...ij,...j->...i", AtA, f_pred)
    quad_a = (yty - 2.0 * np.sum(g * f_pred, axis=-1)
              + np.sum(f_pred * h, axis=-1)) / sigma2
    u = g - h
    quad_b = np.einsum("...i,...ij,...j->...", u, V_corr, u) / (sigma2 * sigma2)
    return (-0.5 * pq * np.log(2.0 * np.pi * sigma2)
            - 0.5 * logdet - 0.5 * (quad_a - quad_b))


def predict_pair(params: ModelParams, m: int, k: int,
                 f_prev: np.ndarray, V_prev: np.ndarray):
    """One-step prediction into regime ``k`` from regime ``m``'s collapsed state."""
    cache = RegimeCache(params)
    return _predict(cache.Psi[k], cache.beta[k],
                    np.asarray(f_prev, dtype=float),
                    np.asarray(V_prev, dtype=float), cache.sigma_eps2)


def correct_pair(params: ModelParams, k: int, y: np.ndarray,
                 f_pred: np.ndarray, V_pred: np.ndarray):
    """Measurement update for regime ``k`` using only r x r solves."""
    d = params.dims
    reg = params.regimes[k]
    Yt = unvec(np.asarray(y, dtype=float).reshape(-1), d.p, d.q)
    g = vec(reg.R.T @ Yt @ reg.C)
    AtA = kron(reg.C.T @ reg.C, reg.R.T @ reg.R)
    return _correct(AtA, g, np.asarray(f_pred, dtype=float),
                    np.asarray(V_pred, dtype=float), params.sigma2)


def pair_log_density(params: ModelParams, k: int, y: np.ndarray,
                     f_pred: np.ndarray, V_pred: np.ndarray,
                     V_corr: np.ndarray) -> float:
    """Log predictive density log p(y_t | s_{t-1}=m, s_t=k, Y_{t-1})."""
    d = params.dims
    reg = params.regimes[k]
    y = np.asarray(y, dtype=float).reshape(-1)
    Yt = unvec(y, d.p, d.q)
    g = vec(reg.R.T @ Yt @ reg.C)
    AtA = kron(reg.C.T @ reg.C, reg.R.T @ reg.R)
    return float(_log_density(psd_sqrt(AtA), AtA, g, float(y @ y),
                              np.asarray(f_pred, dtype=float),
                              np.asarray(V_pred, dtype=float),
                              np.asarray(V_corr, dtype=float),
                              params.sigma2, d.p * d.q))


def hamilton_step(prev_joint: np.ndarray, P: np.ndarray,
                  log_densities: np.ndarray):
    """Log-domain regime update.

    Returns the posterior pair weights ``w_joint`` (sum exactly 1), the
    marginal weights over the current regime, and the log-likelihood
    increment ``log p(y_t | Y_{t-1})``.
    """
    prev_marg = np.asarray(prev_joint, dtype=float).sum(axis=0)
    with np.errstate(divide="ignore"):
        log_pred = np.log(np.asarray(P, dtype=float)) + np.log(prev_marg)[:, None]
    log_post = log_pred + np.asarray(log_densities, dtype=float)
    increment = float(logsumexp(log_post))
    if not np.isfinite(increment):
        raise FilterError("degenerate filter step: all regime-pair posteriors vanish")
    w_joint = np.exp(log_post - increment)
    w_joint /= w_joint.sum()
    return w_joint, w_joint.sum(axis=0), increment


def collapse(w_joint: np.ndarray, w_marg: np.ndarray,
             f_pairs: np.ndarray, V_pairs: np.ndarray,
             w_pred: np.ndarray | None = None,
             f_pred: np.ndarray | None = None,
             V_pred: np.ndarray | None = None):
    """Moment-match the M x M pair posteriors down to one Gaussian per regime.

    ``f_pairs[i, k]`` / ``V_pairs[i, k]`` are the corrected pair moments.
    Regimes whose marginal weight underflows (< 1e-300) carry forward the
    prediction-only values (mixed under the prior pair weights) instead of
    dividing by ~0.
    """
    M, r = f_pairs.shape[1], f_pairs.shape[2]
    f_coll = np.zeros((M, r))
    V_coll = np.zeros((M, r, r))
    for k in range(M):
        if w_marg[k] >= WEIGHT_FLOOR:
            wk = w_joint[:, k] / w_marg[k]
            fk, Vk = f_pairs[:, k], V_pairs[:, k]
        elif w_pred is not None:
            wp = w_pred[:, k]
            tot = wp.sum()
            wk = wp / tot if tot > 0 else np.full(M, 1.0 / M)
            fk, Vk = f_pred[:, k], V_pred[:, k]
        else:
            wk = np.full(M, 1.0 / M)
            fk, Vk = f_pairs[:, k], V_pairs[:, k]
        mean = wk @ fk
        dev = fk - mean
        V_coll[k] = symmetrize(
            np.einsum("i,iab->ab", wk, Vk)
            + np.einsum("i,ia,ib->ab", wk, dev, dev)
        )
        f_coll[k] = mean
    return f_coll, V_coll


def filter_pass(params: ModelParams, Y: np.ndarray,
                v0_mode: str = "zero") -> FilterOutput:
    """Run the forward pass over ``Y`` (shape (n, p, q)).

    Initial collapsed states are ``f = 0, V = 0`` (``v0_mode="eps"`` uses
    ``sigma_eps2 * I`` instead for ill-conditioned starts); initial joint
    regime weights place the stationary distribution of ``P`` on the
    diagonal, so the first prediction step reproduces ``pi_i p_ik``.
    """
    Y = np.asarray(Y, dtype=float)
    d = params.dims
    n, M, r = Y.shape[0], d.M, d.r
    if Y.shape[1:] != (d.p, d.q):
        raise ValueError(f"data shape {Y.shape[1:]} does not match dims ({d.p}, {d.q})")
    if v0_mode not in ("zero", "eps"):
        raise ValueError("v0_mode must be 'zero' or 'eps'")

    cache = RegimeCache(params, Y)
    pi0 = stationary_dist(params.P)
    f0 = np.zeros((M, r))
    V0 = (params.sigma_eps2 * np.broadcast_to(np.eye(r), (M, r, r)).copy()
          if v0_mode == "eps" else np.zeros((M, r, r)))

    f_filt = np.empty((n, M, r))
    V_filt = np.empty((n, M, r, r))
    w_joint = np.empty((n, M, M))
    w_pred_joint = np.empty((n, M, M))
    w_filt = np.empty((n, M))
    increments = np.empty(n)

    P = np.asarray(params.P, dtype=float)
    joint_prev = np.diag(pi0)
    f_prev, V_prev = f0, V0
    pq = d.p * d.q

    for t in range(n):
        try:
            # pair arrays are indexed [i (previous regime), k (current regime)]
            f_pred, V_pred = _predict(
                cache.Psi[None, :], cache.beta[None, :],
                f_prev[:, None], V_prev[:, None], cache.sigma_eps2,
            )
            f_corr, V_corr = _correct(
                cache.AtA[None, :], cache.g[t][None, :], f_pred, V_pred,
                cache.sigma2,
            )
            ld = _log_density(
                cache.Ah[None, :], cache.AtA[None, :], cache.g[t][None, :],
                cache.yty[t], f_pred, V_pred, V_corr, cache.sigma2, pq,
            )
            wj, wm, inc = hamilton_step(joint_prev, P, ld)
            w_pred = P * joint_prev.sum(axis=0)[:, None]
            f_coll, V_coll = collapse(wj, wm, f_corr, V_corr,
                                      w_pred=w_pred, f_pred=f_pred, V_pred=V_pred)
        except FilterError as exc:
            raise FilterError(f"t={t}: {exc}") from exc

        f_filt[t], V_filt[t] = f_coll, V_coll
        w_joint[t], w_filt[t] = wj, wm
        w_pred_joint[t] = w_pred
        increments[t] = inc
        joint_prev, f_prev, V_prev = wj, f_coll, V_coll

    return FilterOutput(
        f_filt=f_filt, V_filt=V_filt, w_joint=w_joint,
        w_pred_joint=w_pred_joint, w_filt=w_filt,
        loglik_increments=increments, total_loglik=float(np.sum(increments)),
        pi0=pi0, f0=f0, V0=V0,
    )
