"""EM driver: iterate the filter/smoother E-step and the closed-form M-step
to convergence, then emit identified parameters, smoothed factors, decoded
regimes, and diagnostics.

Convergence is measured by the squared Frobenius parameter change, with the
loading blocks compared through their column-space projection matrices so
that rotational gauge drift inside the unidentified class does not mask
convergence.  The collapsing step makes the E-step approximate for M > 1, so
the observed log-likelihood can occasionally dip; dips beyond a relative
1e-3 stop the iteration and keep the higher-likelihood iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estep import compute_moments
from .filtering import filter_pass
from .initialization import build_init
from .model import Dims, ModelParams, normalize_identification, validate
from .mstep import MStepInput, sweep
from .smoothing import smooth_pass

__all__ = ["FitConfig", "FitResult", "fit", "observed_loglik", "param_distance"]

LOGLIK_DROP_TOL = 1e-3


@dataclass(frozen=True)
class FitConfig:
    eps: float = 1e-6
    n_max: int = 500
    init: ModelParams | None = None
    track_loglik: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")


@dataclass
class FitResult:
    theta: ModelParams          # identification-normalized
    theta_raw: ModelParams      # pre-normalization
    f_hat: np.ndarray           # (n, r) mixture smoothed factor means
    s_hat: np.ndarray           # (n,) decoded regimes, 0-based
    weights: np.ndarray         # (n, M) smoothed regime probabilities
    loglik_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    loglik_decreased: bool = False


def _projection(A: np.ndarray) -> np.ndarray:
    return A @ np.linalg.solve(A.T @ A, A.T)


def param_distance(new: ModelParams, old: ModelParams) -> float:
    """Squared Frobenius change across all blocks, loadings via projections."""
    dis = 0.0
    for rn, ro in zip(new.regimes, old.regimes):
        dis += np.sum((_projection(rn.R) - _projection(ro.R)) ** 2)
        dis += np.sum((_projection(rn.C) - _projection(ro.C)) ** 2)
        dis += np.sum((rn.B - ro.B) ** 2)
        dis += np.sum((rn.Phi - ro.Phi) ** 2)
        dis += np.sum((rn.Gamma - ro.Gamma) ** 2)
    dis += (new.sigma2 - old.sigma2) ** 2
    dis += (new.sigma_eps2 - old.sigma_eps2) ** 2
    dis += np.sum((np.asarray(new.P) - np.asarray(old.P)) ** 2)
    return float(dis)


def observed_loglik(params: ModelParams, Y: np.ndarray) -> float:
    """Observed-data log-likelihood accumulated by the forward pass."""
    return filter_pass(params, Y).total_loglik


def _estep(params: ModelParams, Y: np.ndarray):
    filt = filter_pass(params, Y)
    smooth = smooth_pass(params, filt)
    return filt, smooth


def fit(Y: np.ndarray, dims: Dims, config: FitConfig | None = None) -> FitResult:
    """Fit the model to ``Y`` (shape (n, p, q)) by EM."""
    config = config or FitConfig()
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    if Y.shape != (n, dims.p, dims.q):
        raise ValueError(f"data shape {Y.shape} does not match dims {dims}")
    if dims.n != n:
        dims = Dims(p=dims.p, q=dims.q, k1=dims.k1, k2=dims.k2, M=dims.M, n=n)

    if config.init is not None:
        params = config.init
        problems = validate(params)
        if problems:
            raise ValueError("invalid initial parameters: " + "; ".join(problems))
    else:
        params = build_init(Y, dims, seed=config.seed).params0

    trace: list[float] = []
    prev_params = params
    prev_estep = None
    converged = False
    decreased = False
    iterations = 0

    for m in range(config.n_max):
        try:
            filt, smooth = _estep(params, Y)
        except Exception as exc:
            raise RuntimeError(f"E-step failed at iteration {m}: {exc}") from exc
        ll = filt.total_loglik
        if not np.isfinite(ll):
            raise RuntimeError(f"non-finite log-likelihood at iteration {m}")
        if trace and ll < trace[-1] - LOGLIK_DROP_TOL * abs(trace[-1]):
            # collapsing-induced dip: keep the previous (higher-likelihood) iterate
            params = prev_params
            filt, smooth = prev_estep
            decreased = True
            break
        trace.append(ll)
        prev_estep = (filt, smooth)
        try:
            pm = compute_moments(params, filt, smooth)
            new_params = sweep(MStepInput(Y=Y, pm=pm, prev=params))
        except Exception as exc:
            raise RuntimeError(f"M-step failed at iteration {m}: {exc}") from exc
        dis = param_distance(new_params, params)
        iterations = m + 1
        prev_params = params
        params = new_params
        if dis <= config.eps:
            converged = True
            break

    if not decreased:
        filt, smooth = _estep(params, Y)

    f_hat = np.einsum("tk,tkr->tr", smooth.w_smooth, smooth.f_smooth)
    s_hat = np.argmax(smooth.w_smooth, axis=1)
    # label-invariant anchor choice so permuted-init fits normalize identically
    anchor = int(np.argmax([reg.B[0, 0] for reg in params.regimes]))
    theta, _ = normalize_identification(params, anchor=anchor)
    return FitResult(theta=theta, theta_raw=params, f_hat=f_hat, s_hat=s_hat,
                     weights=smooth.w_smooth, loglik_trace=trace,
                     iterations=iterations, converged=converged,
                     loglik_decreased=decreased)
