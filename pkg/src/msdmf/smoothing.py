"""Backward pass: smoothed regime probabilities, pairwise regime
probabilities, and smoothed factor means/covariances.

Pair predictions are recomputed from the stored collapsed filter states
during the backward sweep instead of being kept from the forward pass, which
keeps memory at O(n M r^2).  The smoother gain uses the transposed
(standard fixed-interval) form ``V_{t|t} Psi^T V_{t+1|t}^{-1}``; with the
diagonal AR matrices used in practice the untransposed variant coincides,
and the M=1 case is checked against a dense RTS oracle in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import symmetrize
from .filtering import WEIGHT_FLOOR, FilterOutput, RegimeCache, _predict
from .model import ModelParams

__all__ = [
    "SmoothError",
    "SmoothOutput",
    "smooth_regimes_step",
    "smooth_factors_step",
    "smooth_pass",
]

MASS_TOL = 1e-6


class SmoothError(RuntimeError):
    """Smoother failure; message records the time index."""


@dataclass(frozen=True)
class SmoothOutput:
    """Smoothed moments; the terminal step copies the filtered terminal values.

    ``w_pair[t, i, k]`` is the smoothed probability of the pair
    (s_{t-1}=i, s_t=k); the t=0 entry pairs against the artificial initial
    regime, so ``w_pair`` aligns with the transition-update sums as stored.

    ``gain_mix[t, k]`` is the pair-weighted mean smoother gain into time t
    for current regime k; it carries the exact lag-one smoothed
    cross-covariance ``V_{t|n} gain_mix^T`` (for M=1 this is the classical
    fixed-interval identity).
    """

    f_smooth: np.ndarray   # (n, M, r)
    V_smooth: np.ndarray   # (n, M, r, r)
    w_smooth: np.ndarray   # (n, M)
    w_pair: np.ndarray     # (n, M, M)
    gain_mix: np.ndarray   # (n, M, r, r)

    @property
    def n(self) -> int:
        return self.f_smooth.shape[0]


def smooth_regimes_step(w_next_n: np.ndarray, w_filt_t: np.ndarray,
                        w_pred_next: np.ndarray, P: np.ndarray):
    """One backward regime step.

    Parameters are the smoothed marginal at t+1, the filtered marginal at t,
    the predictive pair weights at t+1 (whose column sums give
    ``w_{t+1|t}``), and the transition matrix.  Returns the smoothed pair
    matrix for (t, t+1) and the smoothed marginal at t.
    """
    w_pred_marg = np.asarray(w_pred_next).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_pair = (np.log(w_next_n)[None, :] + np.log(w_filt_t)[:, None]
                    + np.log(P) - np.log(w_pred_marg)[None, :])
    # regimes with zero smoothed mass contribute nothing, 0 * (0/0) included
    log_pair = np.where(w_next_n[None, :] > 0.0, log_pair, -np.inf)
    with np.errstate(over="ignore"):
        pair = np.exp(log_pair)
    if not np.all(np.isfinite(pair)):
        raise SmoothError("non-finite smoothed pair probabilities")
    total = pair.sum()
    if abs(total - 1.0) > MASS_TOL:
        raise SmoothError(f"pair probability mass {total!r} deviates from 1 beyond {MASS_TOL}")
    pair /= total
    return pair, pair.sum(axis=1)


def smooth_factors_step(params: ModelParams, f_filt_t: np.ndarray,
                        V_filt_t: np.ndarray, f_next: np.ndarray,
                        V_next: np.ndarray, w_pair_next: np.ndarray,
                        w_t: np.ndarray, cache: RegimeCache | None = None):
    """One backward factor step across all (j, k) regime pairs.

    Pair predictions into t+1 are recomputed from the collapsed filtered
    state at t; per-pair smoothed moments are then mixed into per-regime
    moments with weights ``w_pair_next[j, k] / w_t[j]``.  Regimes with
    underflowing smoothed mass keep their filtered moments.
    """
    if cache is None:
        cache = RegimeCache(params)
    M, r = f_filt_t.shape
    f_pred, V_pred = _predict(cache.Psi[None, :], cache.beta[None, :],
                              f_filt_t[:, None], V_filt_t[:, None],
                              cache.sigma_eps2)
    # gain G[j,k] = V_filt[j] Psi_k^T V_pred[j,k]^{-1}; V_pred >= sigma_eps2 I
    PsiV = cache.Psi[None, :] @ V_filt_t[:, None]
    try:
        G = np.swapaxes(np.linalg.solve(V_pred, PsiV), -1, -2)
    except np.linalg.LinAlgError as exc:
        raise SmoothError(f"singular predicted covariance: {exc}") from exc
    df = f_next[None, :] - f_pred
    f_sm_pair = f_filt_t[:, None] + np.einsum("jkab,jkb->jka", G, df)
    dV = V_next[None, :] - V_pred
    V_sm_pair = V_filt_t[:, None] + G @ dV @ np.swapaxes(G, -1, -2)

    f_out = np.empty((M, r))
    V_out = np.empty((M, r, r))
    for j in range(M):
        if w_t[j] < WEIGHT_FLOOR:
            f_out[j], V_out[j] = f_filt_t[j], V_filt_t[j]
            continue
        wk = w_pair_next[j] / w_t[j]
        mean = wk @ f_sm_pair[j]
        dev = f_sm_pair[j] - mean
        f_out[j] = mean
        V_out[j] = symmetrize(np.einsum("k,kab->ab", wk, V_sm_pair[j])
                              + np.einsum("k,ka,kb->ab", wk, dev, dev))

    # pair-weighted mean gain per current regime (column mixture)
    col = w_pair_next.sum(axis=0)
    safe = np.where(col >= WEIGHT_FLOOR, col, 1.0)
    gain_mix = np.einsum("jk,jkab->kab", w_pair_next / safe, G)
    gain_mix[col < WEIGHT_FLOOR] = 0.0
    return f_out, V_out, gain_mix


def smooth_pass(params: ModelParams, filt: FilterOutput) -> SmoothOutput:
    """Backward recursion t = n-1 .. 0 over a completed forward pass."""
    n, M = filt.w_filt.shape
    r = filt.f_filt.shape[-1]
    cache = RegimeCache(params)
    P = np.asarray(params.P, dtype=float)

    f_smooth = np.empty((n, M, r))
    V_smooth = np.empty((n, M, r, r))
    w_smooth = np.empty((n, M))
    w_pair = np.empty((n, M, M))
    gain_mix = np.zeros((n, M, r, r))

    f_smooth[n - 1] = filt.f_filt[n - 1]
    V_smooth[n - 1] = filt.V_filt[n - 1]
    w_smooth[n - 1] = filt.w_filt[n - 1]

    for t in range(n - 2, -1, -1):
        try:
            pair, w_t = smooth_regimes_step(
                w_smooth[t + 1], filt.w_filt[t], filt.w_pred_joint[t + 1], P)
            w_pair[t + 1] = pair
            w_smooth[t] = w_t
            f_smooth[t], V_smooth[t], gain_mix[t + 1] = smooth_factors_step(
                params, filt.f_filt[t], filt.V_filt[t],
                f_smooth[t + 1], V_smooth[t + 1], pair, w_t, cache=cache)
        except SmoothError as exc:
            raise SmoothError(f"t={t}: {exc}") from exc

    # pair linking the artificial initial regime to t=0
    try:
        w_pair[0], _ = smooth_regimes_step(
            w_smooth[0], filt.pi0, filt.w_pred_joint[0], P)
    except SmoothError as exc:
        raise SmoothError(f"t=-1: {exc}") from exc
    # gain into t=0 from the fixed initial state (zero when V0 = 0)
    if np.any(filt.V0):
        _, _, gain_mix[0] = smooth_factors_step(
            params, filt.f0, filt.V0, f_smooth[0], V_smooth[0],
            w_pair[0], w_pair[0].sum(axis=1), cache=cache)

    return SmoothOutput(f_smooth=f_smooth, V_smooth=V_smooth,
                        w_smooth=w_smooth, w_pair=w_pair, gain_mix=gain_mix)
