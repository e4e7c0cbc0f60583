"""Synthetic data generation for the switching matrix factor model.

Follows the reference recipe: a persistent two-regime Markov chain, diagonal
AR factor dynamics with regime-specific intercepts ``vec(B_1) = b * beta``
and ``vec(B_2) = 0.1 * beta`` (``beta ~ U(0,1)``), disjoint-support loadings
with entries from ``U(2,4)`` normalized to the pervasive convention
``R^T R = p I`` / ``C^T C = q I``, and an AR(1) error process
``vec(E_t) = psi vec(E_{t-1}) + sqrt(1-psi^2) vec(U_t)`` whose stationary
marginal variance is ``sigma2``.

Variants: ``state_only`` shares one loading pair across regimes; ``static``
collapses the model to a single regime.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import warnings

import numpy as np

from .linalg import symmetrize, unvec, vec
from .model import Dims, ModelParams, RegimeParams, spectral_radius_switching, stationary_dist

__all__ = [
    "SimConfig",
    "SimOutput",
    "simulate_chain",
    "simulate_loadings",
    "simulate_factors",
    "simulate_errors",
    "simulate",
]

BURN_IN = 100

ERROR_DISTS = ("gaussian", "chisq1")
MODEL_VARIANTS = ("full_switching", "state_only", "static")


@dataclass(frozen=True)
class SimConfig:
    dims: Dims
    b: float = 0.5
    psi: float = 0.1
    sigma2: float = 1.0
    error_dist: str = "gaussian"
    model_variant: str = "full_switching"
    seed: int = 0
    p_stay: float = 0.95

    def __post_init__(self):
        if not abs(self.psi) < 1:
            raise ValueError(f"|psi| must be < 1, got {self.psi}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if self.error_dist not in ERROR_DISTS:
            raise ValueError(f"error_dist must be one of {ERROR_DISTS}")
        if self.model_variant not in MODEL_VARIANTS:
            raise ValueError(f"model_variant must be one of {MODEL_VARIANTS}")


@dataclass(frozen=True)
class SimOutput:
    Y: np.ndarray       # (n, p, q) observations
    F: np.ndarray       # (n, k1, k2) true factors
    s: np.ndarray       # (n,) true regime labels, 0-based
    truth: ModelParams


def simulate_chain(P: np.ndarray, n: int, rng: np.random.Generator,
                   start: int | None = None) -> np.ndarray:
    """Simulate ``n`` steps of the regime chain, starting from its stationary law."""
    P = np.asarray(P, dtype=float)
    M = P.shape[0]
    s = np.empty(n, dtype=np.int64)
    u = rng.random(n)
    cum = np.cumsum(P, axis=1)
    if start is None:
        pi = stationary_dist(P)
        s[0] = int(np.searchsorted(np.cumsum(pi), u[0], side="right"))
    else:
        s[0] = start
    for t in range(1, n):
        s[t] = int(np.searchsorted(cum[s[t - 1]], u[t], side="right"))
    return np.minimum(s, M - 1)


def _support_mask(rows: int, cols: int) -> np.ndarray:
    """Binary mask assigning contiguous, near-equal row blocks to each column."""
    mask = np.zeros((rows, cols))
    for j, block in enumerate(np.array_split(np.arange(rows), cols)):
        mask[block, j] = 1.0
    return mask


def _draw_loading(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    # pervasive normalization R^T R = rows * I (columns of norm sqrt(rows))
    raw = rng.uniform(2.0, 4.0, size=(rows, cols))
    G = _support_mask(rows, cols) * raw
    if np.any(np.all(G == 0, axis=0)):
        raise ValueError(f"support mask left a zero column for shape {rows}x{cols}")
    gram = (G.T @ G) / rows
    w, U = np.linalg.eigh(symmetrize(gram))
    inv_sqrt = (U / np.sqrt(w)) @ U.T
    return G @ inv_sqrt


def simulate_loadings(dims: Dims, rng: np.random.Generator
                      ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Draw per-regime loading pairs normalized so ``R^T R = p I``, ``C^T C = q I``."""
    out = []
    for _ in range(dims.M):
        R = _draw_loading(dims.p, dims.k1, rng)
        C = _draw_loading(dims.q, dims.k2, rng)
        out.append((R, C))
    return out


def simulate_factors(truth: ModelParams, s: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Run the factor recursion from ``F_0 = 0`` along the regime path ``s``."""
    d = truth.dims
    scale = float(np.sqrt(truth.sigma_eps2))
    F = np.zeros((len(s), d.k1, d.k2))
    prev = np.zeros((d.k1, d.k2))
    for t, k in enumerate(s):
        reg = truth.regimes[k]
        eps = scale * rng.standard_normal((d.k1, d.k2))
        prev = reg.B + reg.Phi @ prev @ reg.Gamma.T + eps
        F[t] = prev
    return F


def _error_innovation(config: SimConfig, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    sd = float(np.sqrt(config.sigma2))
    if config.error_dist == "gaussian":
        return sd * rng.standard_normal(shape)
    # centered chi-square(1) scaled to variance sigma2
    return (rng.chisquare(1.0, size=shape) - 1.0) * sd / np.sqrt(2.0)


def simulate_errors(config: SimConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """AR(1) error matrices with stationary entrywise variance ``sigma2``."""
    d = config.dims
    psi = config.psi
    E = np.empty((n, d.p, d.q))
    prev = _error_innovation(config, (d.p, d.q), rng)
    fac = np.sqrt(1.0 - psi * psi)
    for t in range(n):
        prev = psi * prev + fac * _error_innovation(config, (d.p, d.q), rng)
        E[t] = prev
    return E


def _ar_diagonal(regime: int, k: int) -> np.ndarray:
    hi = max(0.9 - 0.2 * regime, 0.10)
    lo = max(0.7 - 0.2 * regime, 0.05)
    return np.diag(np.linspace(hi, lo, k)) if k > 1 else np.array([[hi]])


def _intercept_scale(regime: int, b: float) -> float:
    if regime == 0:
        return b
    return 0.1 * 0.5 ** (regime - 1)


def build_truth(config: SimConfig, rng: np.random.Generator) -> ModelParams:
    """Assemble the generating parameter set for ``config`` (consumes rng draws)."""
    d = config.dims
    if config.model_variant == "static" and d.M != 1:
        d = replace(d, M=1)
    M = d.M
    if M == 1:
        P = np.ones((1, 1))
    else:
        P = np.full((M, M), (1.0 - config.p_stay) / (M - 1))
        np.fill_diagonal(P, config.p_stay)
    beta = rng.uniform(0.0, 1.0, size=d.r)
    if config.model_variant == "state_only":
        R, C = _draw_loading(d.p, d.k1, rng), _draw_loading(d.q, d.k2, rng)
        loadings = [(R, C)] * M
    else:
        loadings = simulate_loadings(d, rng)
    regimes = tuple(
        RegimeParams(
            R=loadings[m][0],
            C=loadings[m][1],
            B=unvec(_intercept_scale(m, config.b) * beta, d.k1, d.k2),
            Phi=_ar_diagonal(m, d.k1),
            Gamma=_ar_diagonal(m, d.k2),
        )
        for m in range(M)
    )
    return ModelParams(dims=d, regimes=regimes, sigma2=config.sigma2,
                       sigma_eps2=1.0, P=P)


def simulate(config: SimConfig) -> SimOutput:
    """Generate a reproducible dataset; identical config (incl. seed) gives identical output."""
    rng = np.random.default_rng(config.seed)
    truth = build_truth(config, rng)
    d = truth.dims
    n = d.n
    rho = spectral_radius_switching(truth)
    if rho >= 1.0:
        warnings.warn(
            f"generating parameters are non-stationary (spectral radius {rho:.4f} >= 1)",
            RuntimeWarning,
        )
    s_full = simulate_chain(truth.P, BURN_IN + n, rng)
    F_full = simulate_factors(truth, s_full, rng)
    E = simulate_errors(config, n, rng)
    s = s_full[BURN_IN:]
    F = F_full[BURN_IN:]
    Y = np.empty((n, d.p, d.q))
    for t in range(n):
        reg = truth.regimes[s[t]]
        Y[t] = reg.R @ F[t] @ reg.C.T + E[t]
    return SimOutput(Y=Y, F=F, s=s, truth=truth)
