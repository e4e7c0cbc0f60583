"""Closed-form parameter updates maximizing the expected complete-data
log-likelihood.

Update ordering within a sweep: R (using the previous C), then C (using the
fresh R), then B and Phi (using the previous Gamma), then Gamma (with its
contraction matrices built from the fresh Phi), then both noise variances
from the freshly updated structural blocks, then the transition matrix.
Right-hand sides otherwise keep previous-iterate values where the update
equations mix old and new blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estep import Contractions, PosteriorMoments, contract_c, contract_cols, contract_r, contract_rows
from .linalg import SingularMatrixError, solve_spd, unvec_batch
from .model import ModelParams, RegimeParams

__all__ = [
    "MStepInput",
    "update_loadings",
    "update_dynamics",
    "update_gamma",
    "update_transition",
    "observation_noise_variance",
    "state_noise_variance",
    "sweep",
    "q_function",
]

VAR_FLOOR = 1e-12
TRANS_EPS = 1e-8


@dataclass(frozen=True)
class MStepInput:
    Y: np.ndarray
    pm: PosteriorMoments
    prev: ModelParams
    con: Contractions | None = None


class _Reduced:
    """Per-regime weighted time sums of the posterior moments."""

    def __init__(self, inp: MStepInput):
        pm = inp.pm
        d = inp.prev.dims
        w = pm.w
        self.d = d
        self.Y = np.asarray(inp.Y, dtype=float)
        self.n = self.Y.shape[0]
        self.Sw = w.sum(axis=0)                                   # (M,)
        F3 = unvec_batch(pm.f, d.k1, d.k2)
        Fs3 = unvec_batch(pm.f_star, d.k1, d.k2)
        self.Sf3 = np.einsum("tk,tkab->kab", w, F3)
        self.Sfs3 = np.einsum("tk,tkab->kab", w, Fs3)
        self.Sp2 = np.einsum("tk,tkab->kab", w, pm.p2)
        self.Sps = np.einsum("tk,tkab->kab", w, pm.p_star)
        self.Spc = np.einsum("tk,tkab->kab", w, pm.p_cross)
        self.yty = np.einsum("tpq,tpq->t", self.Y, self.Y)
        self.Sy2 = w.T @ self.yty                                 # (M,)
        self._F3 = F3
        self._w = w

    def sum_ycf(self, k: int, C: np.ndarray) -> np.ndarray:
        """sum_t w_t Y_t C F_t^T for regime k (p x k1)."""
        return np.einsum("t,tpq,ql,tal->pa", self._w[:, k], self.Y, C, self._F3[:, k])

    def sum_yrf(self, k: int, R: np.ndarray) -> np.ndarray:
        """sum_t w_t Y_t^T R F_t for regime k (q x k2)."""
        return np.einsum("t,tpq,pa,tal->ql", self._w[:, k], self.Y, R, self._F3[:, k])


def _solve_right(num: np.ndarray, den: np.ndarray, what: str, k: int) -> np.ndarray:
    """Solve X = num den^{-1} for SPD den, naming the regime on failure.

    A singular denominator with a vanishing numerator is a flat direction of
    the objective (e.g. the row-AR block when the previous column-AR block is
    exactly zero); the minimum-norm maximizer 0 is returned there.
    """
    try:
        return solve_spd(den, num.T).T
    except SingularMatrixError as exc:
        if np.max(np.abs(num)) <= 1e-10 * max(1.0, float(np.max(np.abs(den)))):
            return np.zeros_like(num)
        raise SingularMatrixError(
            f"singular {what} normal matrix for regime {k}: {exc}",
            pivot=exc.pivot, cond=exc.cond) from exc


def observation_noise_variance(inp: MStepInput, loadings,
                               red: _Reduced | None = None) -> float:
    """Expected observation-equation residual variance under given loadings."""
    red = red or _Reduced(inp)
    d = red.d
    total = 0.0
    for k, (R, C) in enumerate(loadings):
        cross = red.sum_ycf(k, C)
        total += (np.einsum("ab,ab->", R.T @ R, contract_c(red.Sp2[k], C))
                  - 2.0 * np.einsum("pa,pa->", R, cross) + red.Sy2[k])
    return max(total / (red.n * d.p * d.q), VAR_FLOOR)


def update_loadings(inp: MStepInput, red: _Reduced | None = None):
    """Loading and observation-variance update.

    R_k is solved first against contractions built from the previous C_k,
    then C_k against contractions built from the fresh R_k (one Gauss-Seidel
    sweep); sigma2 is the expected residual under the fresh pair.
    """
    red = red or _Reduced(inp)
    d = red.d
    loadings = []
    for k, reg in enumerate(inp.prev.regimes):
        if red.Sw[k] <= d.r:
            raise ValueError(
                f"regime {k}: effective sample {red.Sw[k]:.3f} <= r={d.r}; "
                "too few observations to update loadings")
        R_new = _solve_right(red.sum_ycf(k, reg.C), contract_c(red.Sp2[k], reg.C),
                             "row-loading", k)
        C_new = _solve_right(red.sum_yrf(k, R_new), contract_r(red.Sp2[k], R_new),
                             "column-loading", k)
        loadings.append((R_new, C_new))
    return loadings, observation_noise_variance(inp, loadings, red)


def update_dynamics(inp: MStepInput, red: _Reduced | None = None):
    """Intercept and row-AR update; right-hand sides use previous-iterate values."""
    red = red or _Reduced(inp)
    Bs, Phis = [], []
    for k, reg in enumerate(inp.prev.regimes):
        B_new = (red.Sf3[k] - reg.Phi @ red.Sfs3[k] @ reg.Gamma.T) / red.Sw[k]
        num = contract_cols(red.Spc[k], reg.Gamma, red.d.k1) \
            - reg.B @ reg.Gamma @ red.Sfs3[k].T
        den = contract_cols(red.Sps[k], reg.Gamma.T @ reg.Gamma, red.d.k1)
        Phi_new = _solve_right(num, den, "row-AR", k)
        Bs.append(B_new)
        Phis.append(Phi_new)
    return Bs, Phis


def update_gamma(inp: MStepInput, phi_new: list[np.ndarray] | None = None,
                 red: _Reduced | None = None):
    """Column-AR update, with contractions built from the freshly updated Phi."""
    red = red or _Reduced(inp)
    Gammas = []
    for k, reg in enumerate(inp.prev.regimes):
        Phi = reg.Phi if phi_new is None else phi_new[k]
        p1k = contract_rows(np.swapaxes(red.Spc[k], -1, -2), Phi.T, red.d.k2)
        num = p1k.T - reg.B.T @ Phi @ red.Sfs3[k]
        den = contract_rows(red.Sps[k], Phi.T @ Phi, red.d.k2)
        Gammas.append(_solve_right(num, den, "column-AR", k))
    return Gammas


def state_noise_variance(inp: MStepInput, Bs, Phis, Gammas,
                         red: _Reduced | None = None) -> float:
    """Expected state-equation residual variance under the given blocks."""
    red = red or _Reduced(inp)
    d = red.d
    total = 0.0
    for k in range(d.M):
        B, Phi, Gamma = Bs[k], Phis[k], Gammas[k]
        p2k_tr = np.trace(contract_cols(red.Sp2[k], np.eye(d.k2), d.k1))
        cross2 = contract_cols(red.Spc[k], Gamma, d.k1)
        star2 = contract_cols(red.Sps[k], Gamma.T @ Gamma, d.k1)
        total += (p2k_tr
                  - 2.0 * np.einsum("ab,ab->", red.Sf3[k], B)
                  - 2.0 * np.einsum("ab,ab->", cross2, Phi)
                  + red.Sw[k] * np.einsum("ab,ab->", B, B)
                  + 2.0 * np.einsum("ab,ab->", B @ Gamma @ red.Sfs3[k].T, Phi)
                  + np.einsum("ab,ab->", Phi @ star2, Phi))
    return max(total / (red.n * d.r), VAR_FLOOR)


def update_transition(pm: PosteriorMoments) -> np.ndarray:
    """Transition matrix from the smoothed pair probabilities.

    Entries are clipped to [1e-8, 1 - 1e-8] and rows renormalized, so a
    regime path never becomes permanently forbidden by a finite sample.
    """
    counts = pm.w_pair.sum(axis=0)
    row_sums = counts.sum(axis=1)
    for i, s in enumerate(row_sums):
        if s <= 0.0:
            raise ValueError(f"regime {i} has zero expected occupancy; cannot update P")
    P = counts / row_sums[:, None]
    P = np.clip(P, TRANS_EPS, 1.0 - TRANS_EPS)
    return P / P.sum(axis=1, keepdims=True)


def sweep(inp: MStepInput) -> ModelParams:
    """One full parameter update producing the next iterate."""
    red = _Reduced(inp)
    loadings, sigma2 = update_loadings(inp, red)
    Bs, Phis = update_dynamics(inp, red)
    Gammas = update_gamma(inp, phi_new=Phis, red=red)
    sigma_eps2 = state_noise_variance(inp, Bs, Phis, Gammas, red)
    P = update_transition(inp.pm)
    regimes = tuple(
        RegimeParams(R=loadings[k][0], C=loadings[k][1],
                     B=Bs[k], Phi=Phis[k], Gamma=Gammas[k])
        for k in range(inp.prev.dims.M)
    )
    return ModelParams(dims=inp.prev.dims, regimes=regimes,
                       sigma2=sigma2, sigma_eps2=sigma_eps2, P=P)


def q_function(params: ModelParams, Y: np.ndarray, pm: PosteriorMoments) -> float:
    """Expected complete-data log-likelihood at ``params`` (additive constants
    independent of the parameters are dropped)."""
    d = params.dims
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    w = pm.w
    F3 = unvec_batch(pm.f, d.k1, d.k2)
    yty = np.einsum("tpq,tpq->t", Y, Y)

    obs_sum = 0.0
    state_sum = 0.0
    for k, reg in enumerate(params.regimes):
        wk = w[:, k]
        Sp2 = np.einsum("t,tab->ab", wk, pm.p2[:, k])
        Sps = np.einsum("t,tab->ab", wk, pm.p_star[:, k])
        Spc = np.einsum("t,tab->ab", wk, pm.p_cross[:, k])
        Sf3 = np.einsum("t,tab->ab", wk, F3[:, k])
        Sfs3 = np.einsum("t,tab->ab", wk,
                         unvec_batch(pm.f_star[:, k], d.k1, d.k2))
        cross = np.einsum("t,tpq,ql,tal->pa", wk, Y, reg.C, F3[:, k])
        obs_sum += (np.einsum("ab,ab->", reg.R.T @ reg.R, contract_c(Sp2, reg.C))
                    - 2.0 * np.einsum("pa,pa->", reg.R, cross)
                    + wk @ yty)
        cross2 = contract_cols(Spc, reg.Gamma, d.k1)
        star2 = contract_cols(Sps, reg.Gamma.T @ reg.Gamma, d.k1)
        state_sum += (np.trace(contract_cols(Sp2, np.eye(d.k2), d.k1))
                      - 2.0 * np.einsum("ab,ab->", Sf3, reg.B)
                      - 2.0 * np.einsum("ab,ab->", cross2, reg.Phi)
                      + wk.sum() * np.einsum("ab,ab->", reg.B, reg.B)
                      + 2.0 * np.einsum("ab,ab->", reg.B @ reg.Gamma @ Sfs3.T, reg.Phi)
                      + np.einsum("ab,ab->", reg.Phi @ star2, reg.Phi))

    q1 = -0.5 * n * d.p * d.q * np.log(params.sigma2) - obs_sum / (2.0 * params.sigma2)
    q2 = -0.5 * n * d.r * np.log(params.sigma_eps2) - state_sum / (2.0 * params.sigma_eps2)
    counts = pm.w_pair.sum(axis=0)
    with np.errstate(divide="ignore"):
        logP = np.log(np.asarray(params.P, dtype=float))
    q3 = float(np.sum(np.where(counts > 0, counts * logP, 0.0)))
    return float(q1 + q2 + q3)
