"""Shared fixtures and independent oracle implementations.

The oracles here deliberately use dense, textbook formulations (full pq-dim
Kalman algebra, explicit Kronecker selector sums, exhaustive path
enumeration) so they share no code path with the library internals they
check.
"""

import itertools

import numpy as np
import pytest

from msdmf.linalg import kron, vec
from msdmf.model import Dims, ModelParams, RegimeParams, stationary_dist


def make_params(rng, p=3, q=3, k1=1, k2=1, M=2, n=8, sigma2=0.5,
                sigma_eps2=0.8, ar_scale=0.5, p_stay=0.85) -> ModelParams:
    """Random valid parameter set with stable-ish dynamics."""
    regimes = []
    for m in range(M):
        Phi = ar_scale * rng.uniform(-1, 1, (k1, k1)) / max(k1, 1)
        Gamma = ar_scale * rng.uniform(-1, 1, (k2, k2)) / max(k2, 1)
        regimes.append(RegimeParams(
            R=rng.standard_normal((p, k1)),
            C=rng.standard_normal((q, k2)),
            B=rng.standard_normal((k1, k2)),
            Phi=Phi,
            Gamma=Gamma,
        ))
    if M == 1:
        P = np.ones((1, 1))
    else:
        P = np.full((M, M), (1 - p_stay) / (M - 1))
        np.fill_diagonal(P, p_stay)
    return ModelParams(dims=Dims(p, q, k1, k2, M, n), regimes=tuple(regimes),
                       sigma2=sigma2, sigma_eps2=sigma_eps2, P=P)


def dense_predict(reg, sigma_eps2, f, V):
    Psi = kron(reg.Gamma, reg.Phi)
    f_pred = vec(reg.B) + Psi @ f
    V_pred = Psi @ V @ Psi.T + sigma_eps2 * np.eye(len(f))
    return f_pred, V_pred


def dense_correct(reg, sigma2, y, f_pred, V_pred):
    """Textbook Kalman correction with the explicit pq x pq innovation covariance."""
    Lam = kron(reg.C, reg.R)
    S = Lam @ V_pred @ Lam.T + sigma2 * np.eye(Lam.shape[0])
    K = V_pred @ Lam.T @ np.linalg.inv(S)
    resid = y - Lam @ f_pred
    f_corr = f_pred + K @ resid
    V_corr = V_pred - K @ S @ K.T
    return f_corr, V_corr


def dense_log_density(reg, sigma2, y, f_pred, V_pred):
    Lam = kron(reg.C, reg.R)
    S = Lam @ V_pred @ Lam.T + sigma2 * np.eye(Lam.shape[0])
    resid = y - Lam @ f_pred
    sign, logdet = np.linalg.slogdet(S)
    assert sign > 0
    return (-0.5 * len(y) * np.log(2 * np.pi) - 0.5 * logdet
            - 0.5 * resid @ np.linalg.solve(S, resid))


def dense_path_loglik(params, Y, path):
    """Exact log p(Y | regime path) by a dense Kalman run along the path."""
    d = params.dims
    r = d.r
    f = np.zeros(r)
    V = np.zeros((r, r))
    ll = 0.0
    for t, k in enumerate(path):
        reg = params.regimes[k]
        f_pred, V_pred = dense_predict(reg, params.sigma_eps2, f, V)
        y = vec(Y[t])
        ll += dense_log_density(reg, params.sigma2, y, f_pred, V_pred)
        f, V = dense_correct(reg, params.sigma2, y, f_pred, V_pred)
    return ll


def enumerate_path_posterior(params, Y):
    """Exhaustive posterior over all regime paths via per-path dense Kalman
    likelihoods; the artificial initial regime is marginalized analytically
    (it only enters through the chain prior).

    Returns (marginals (n, M), pairs (n, M, M), loglik) where pairs[t] holds
    P(s_{t-1}=i, s_t=k | Y) with s_{-1} the artificial initial regime.
    """
    d = params.dims
    n = Y.shape[0]
    M = d.M
    pi = stationary_dist(params.P)
    logP = np.log(params.P)
    log_prior0 = np.log(pi @ params.P)   # marginal prior of the first regime
    log_joint = []
    paths = []
    for path in itertools.product(range(M), repeat=n):
        lp = log_prior0[path[0]]
        for a, b in zip(path[:-1], path[1:]):
            lp += logP[a, b]
        lp += dense_path_loglik(params, Y, path)
        log_joint.append(lp)
        paths.append(path)
    log_joint = np.array(log_joint)
    total = np.logaddexp.reduce(log_joint)
    w = np.exp(log_joint - total)
    marginals = np.zeros((n, M))
    pairs = np.zeros((n, M, M))
    # P(s_{-1}=i | s_0=k) = pi_i P[i,k] / sum_i pi_i P[i,k]
    init_given_first = (pi[:, None] * params.P) / (pi @ params.P)[None, :]
    for weight, path in zip(w, paths):
        marginals[0, path[0]] += weight
        pairs[0, :, path[0]] += weight * init_given_first[:, path[0]]
        for t in range(1, n):
            marginals[t, path[t]] += weight
            pairs[t, path[t - 1], path[t]] += weight
    return marginals, pairs, float(total)


def dense_rts_smoother(params, Y):
    """Classical fixed-interval smoother for the M=1 model (dense oracle)."""
    assert params.dims.M == 1
    reg = params.regimes[0]
    d = params.dims
    r = d.r
    n = Y.shape[0]
    Psi = kron(reg.Gamma, reg.Phi)
    f_filt = np.zeros((n, r))
    V_filt = np.zeros((n, r, r))
    f_pred_all = np.zeros((n, r))
    V_pred_all = np.zeros((n, r, r))
    f = np.zeros(r)
    V = np.zeros((r, r))
    ll = 0.0
    for t in range(n):
        f_pred, V_pred = dense_predict(reg, params.sigma_eps2, f, V)
        f_pred_all[t], V_pred_all[t] = f_pred, V_pred
        y = vec(Y[t])
        ll += dense_log_density(reg, params.sigma2, y, f_pred, V_pred)
        f, V = dense_correct(reg, params.sigma2, y, f_pred, V_pred)
        f_filt[t], V_filt[t] = f, V
    f_sm = f_filt.copy()
    V_sm = V_filt.copy()
    for t in range(n - 2, -1, -1):
        G = V_filt[t] @ Psi.T @ np.linalg.inv(V_pred_all[t + 1])
        f_sm[t] = f_filt[t] + G @ (f_sm[t + 1] - f_pred_all[t + 1])
        V_sm[t] = V_filt[t] + G @ (V_sm[t + 1] - V_pred_all[t + 1]) @ G.T
    return f_filt, V_filt, f_sm, V_sm, ll


# ---- selector-sum contraction oracles (explicit e-vectors and kron) ----

def _e(dim, j):
    v = np.zeros((dim, 1))
    v[j, 0] = 1.0
    return v


def selector_contract_c(p2, C, k1):
    q, k2 = C.shape
    out = np.zeros((k1, k1))
    for j in range(q):
        sel = np.kron(_e(q, j).T @ C, np.eye(k1))
        out += sel @ p2 @ sel.T
    return out


def selector_contract_r(p2, R, k2):
    p, k1 = R.shape
    out = np.zeros((k2, k2))
    for i in range(p):
        sel = np.kron(np.eye(k2), _e(p, i).T @ R)
        out += sel @ p2 @ sel.T
    return out


def selector_state(p2, p_star, p_cross, Phi, Gamma, k1, k2):
    Pk = np.zeros((k1, k1))
    P2k = np.zeros((k1, k1))
    Pstar2k = np.zeros((k1, k1))
    P1k = np.zeros((k2, k2))
    Pstar1k = np.zeros((k2, k2))
    for dd in range(k2):
        left = np.kron(_e(k2, dd).T, np.eye(k1))
        Pk += left @ p2 @ left.T
        P2k += left @ p_cross @ np.kron(Gamma.T @ _e(k2, dd), np.eye(k1))
        lg = np.kron(_e(k2, dd).T @ Gamma, np.eye(k1))
        Pstar2k += lg @ p_star @ np.kron(Gamma.T @ _e(k2, dd), np.eye(k1))
    for dd in range(k1):
        lf = np.kron(np.eye(k2), _e(k1, dd).T @ Phi)
        P1k += lf @ p_cross.T @ np.kron(np.eye(k2), _e(k1, dd))
        Pstar1k += lf @ p_star.T @ np.kron(np.eye(k2), Phi.T @ _e(k1, dd))
    return Pk, P2k, Pstar2k, P1k, Pstar1k


def simulate_from_params(params, n, rng, burn=50):
    """Draw (Y, F, s) from an arbitrary parameter set."""
    from msdmf.simulate import simulate_chain, simulate_factors

    d = params.dims
    s_full = simulate_chain(params.P, burn + n, rng)
    F_full = simulate_factors(params, s_full, rng)
    s = s_full[burn:]
    F = F_full[burn:]
    sd = np.sqrt(params.sigma2)
    Y = np.empty((n, d.p, d.q))
    for t in range(n):
        reg = params.regimes[s[t]]
        Y[t] = reg.R @ F[t] @ reg.C.T + sd * rng.standard_normal((d.p, d.q))
    return Y, F, s


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
