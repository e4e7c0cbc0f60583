"""Posterior expectations and the Kronecker-contraction matrices feeding the
parameter updates.

The contractions are implemented as 4-axis tensor contractions over the
column-major block structure of the r x r posterior second moments, which is
algebraically identical to the selector-sum definitions (sums over unit
vectors ``e^{(j)}`` and explicit Kronecker factors) that the tests enforce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filtering import WEIGHT_FLOOR, FilterOutput
from .model import ModelParams
from .smoothing import SmoothOutput

__all__ = [
    "PosteriorMoments",
    "Contractions",
    "compute_moments",
    "contract_c",
    "contract_r",
    "contract_state",
    "compute_contractions",
]

MASS_TOL = 1e-6


@dataclass(frozen=True)
class PosteriorMoments:
    """Smoothed expectations per time and regime (see module docstring).

    ``f_star``/``p_star`` condition time t-1 moments on ``s_t = k``;
    ``p_cross`` is E[f_t f_{t-1}^T | s_t = k].  Rows whose regime weight
    underflows are zero-filled and therefore drop out of weighted sums.
    """

    w: np.ndarray        # (n, M)
    w_pair: np.ndarray   # (n, M, M) pair (t-1, t)
    f: np.ndarray        # (n, M, r)
    p2: np.ndarray       # (n, M, r, r) E[f f^T]
    f_star: np.ndarray   # (n, M, r)
    p_star: np.ndarray   # (n, M, r, r)
    p_cross: np.ndarray  # (n, M, r, r)

    @property
    def n(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class Contractions:
    """Contraction matrices built from the previous iterate's parameters."""

    Pc: np.ndarray        # (n, M, k1, k1)
    Pr: np.ndarray        # (n, M, k2, k2)
    Pk: np.ndarray        # (n, M, k1, k1)
    P2k: np.ndarray       # (n, M, k1, k1)
    Pstar2k: np.ndarray   # (n, M, k1, k1)
    P1k: np.ndarray       # (n, M, k2, k2)
    Pstar1k: np.ndarray   # (n, M, k2, k2)


def _split4(p: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """View an (..., r, r) array as (..., k2, k1, k2, k1) column-major blocks."""
    return p.reshape(p.shape[:-2] + (k2, k1, k2, k1))


def contract_cols(p: np.ndarray, W: np.ndarray, k1: int) -> np.ndarray:
    """Contract the two column axes of ``p`` against ``W`` (k2 x k2) -> k1 x k1."""
    k2 = W.shape[0]
    return np.einsum("...lamb,lm->...ab", _split4(p, k1, k2), W)


def contract_rows(p: np.ndarray, W: np.ndarray, k2: int) -> np.ndarray:
    """Contract the two row axes of ``p`` against ``W`` (k1 x k1) -> k2 x k2."""
    k1 = W.shape[0]
    return np.einsum("...lamb,ab->...lm", _split4(p, k1, k2), W)


def contract_c(p2: np.ndarray, C: np.ndarray) -> np.ndarray:
    """E[F C^T C F^T] from the vec-space second moment ``p2``."""
    p2 = np.asarray(p2)
    k2 = C.shape[1]
    k1 = p2.shape[-1] // k2
    return contract_cols(p2, C.T @ C, k1)


def contract_r(p2: np.ndarray, R: np.ndarray) -> np.ndarray:
    """E[F^T R^T R F] from the vec-space second moment ``p2``."""
    p2 = np.asarray(p2)
    k1 = R.shape[1]
    k2 = p2.shape[-1] // k1
    return contract_rows(p2, R.T @ R, k2)


def _state_contractions(p2, p_star, p_cross, Phi, Gamma, k1, k2):
    Pk = contract_cols(p2, np.eye(k2), k1)
    P2k = contract_cols(p_cross, Gamma, k1)
    Pstar2k = contract_cols(p_star, Gamma.T @ Gamma, k1)
    P1k = contract_rows(np.swapaxes(p_cross, -1, -2), Phi.T, k2)
    Pstar1k = contract_rows(p_star, Phi.T @ Phi, k2)
    return Pk, P2k, Pstar2k, P1k, Pstar1k


def contract_state(pm: PosteriorMoments, params: ModelParams, t: int, k: int):
    """The five state-equation contractions for one (t, k) cell."""
    reg = params.regimes[k]
    d = params.dims
    return _state_contractions(pm.p2[t, k], pm.p_star[t, k], pm.p_cross[t, k],
                               reg.Phi, reg.Gamma, d.k1, d.k2)


def compute_contractions(pm: PosteriorMoments, params: ModelParams) -> Contractions:
    """All seven contraction grids under ``params`` (the current iterate)."""
    d = params.dims
    n, M = pm.w.shape
    Pc = np.empty((n, M, d.k1, d.k1))
    Pr = np.empty((n, M, d.k2, d.k2))
    Pk = np.empty((n, M, d.k1, d.k1))
    P2k = np.empty((n, M, d.k1, d.k1))
    Pstar2k = np.empty((n, M, d.k1, d.k1))
    P1k = np.empty((n, M, d.k2, d.k2))
    Pstar1k = np.empty((n, M, d.k2, d.k2))
    for k, reg in enumerate(params.regimes):
        Pc[:, k] = contract_c(pm.p2[:, k], reg.C)
        Pr[:, k] = contract_r(pm.p2[:, k], reg.R)
        out = _state_contractions(pm.p2[:, k], pm.p_star[:, k], pm.p_cross[:, k],
                                  reg.Phi, reg.Gamma, d.k1, d.k2)
        Pk[:, k], P2k[:, k], Pstar2k[:, k], P1k[:, k], Pstar1k[:, k] = out
    return Contractions(Pc=Pc, Pr=Pr, Pk=Pk, P2k=P2k, Pstar2k=Pstar2k,
                        P1k=P1k, Pstar1k=Pstar1k)


def compute_moments(params: ModelParams, filt: FilterOutput,
                    smooth: SmoothOutput) -> PosteriorMoments:
    """Assemble every posterior expectation needed by the parameter updates."""
    n, M = smooth.w_smooth.shape
    r = smooth.f_smooth.shape[-1]
    w = smooth.w_smooth
    w_pair = smooth.w_pair

    col_sums = w_pair.sum(axis=1)
    gap = float(np.max(np.abs(col_sums - w)))
    if gap > MASS_TOL:
        t_bad = int(np.argmax(np.max(np.abs(col_sums - w), axis=1)))
        raise ValueError(
            f"pair/marginal weight mass mismatch {gap:.3e} at t={t_bad}"
        )

    f = smooth.f_smooth
    p2 = smooth.V_smooth + np.einsum("tka,tkb->tkab", f, f)

    prev_f = np.concatenate([filt.f0[None], f[:-1]], axis=0)
    prev_V = np.concatenate([filt.V0[None], smooth.V_smooth[:-1]], axis=0)
    prev_p2 = prev_V + np.einsum("tka,tkb->tkab", prev_f, prev_f)

    safe_w = np.where(w >= WEIGHT_FLOOR, w, 1.0)
    live = (w >= WEIGHT_FLOOR).astype(float)
    f_star = np.einsum("tik,tia->tka", w_pair, prev_f) / safe_w[..., None]
    p_star = np.einsum("tik,tiab->tkab", w_pair, prev_p2) / safe_w[..., None, None]
    f_star *= live[..., None]
    p_star *= live[..., None, None]

    # exact lag-one smoothed cross-covariance V_{t|n} G^T (pair-weighted mean
    # gain G from the smoother); the innovation is correlated with the past
    # given the full sample, so Psi V_{t-1|n} would overstate the covariance
    p_cross = (smooth.V_smooth @ np.swapaxes(smooth.gain_mix, -1, -2)
               + np.einsum("tka,tkb->tkab", f, f_star))
    p_cross *= live[..., None, None]

    return PosteriorMoments(w=w, w_pair=w_pair, f=f, p2=p2,
                            f_star=f_star, p_star=p_star, p_cross=p_cross)
