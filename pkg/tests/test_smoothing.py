import numpy as np
import pytest

from conftest import dense_rts_smoother, enumerate_path_posterior, make_params
from msdmf.filtering import filter_pass
from msdmf.model import Dims, ModelParams, RegimeParams
from msdmf.simulate import SimConfig, simulate
from msdmf.smoothing import smooth_pass, smooth_regimes_step


def test_single_regime_pair_is_one(rng):
    params = make_params(rng, M=1, n=5)
    Y = rng.standard_normal((5, 3, 3))
    filt = filter_pass(params, Y)
    smooth = smooth_pass(params, filt)
    assert np.max(np.abs(smooth.w_pair - 1.0)) <= 1e-12
    assert np.max(np.abs(smooth.w_smooth - 1.0)) <= 1e-12


def test_uniform_inputs_give_prior_pair():
    # uniform filtered/smoothed weights: pair reduces to p_jk normalized
    P = np.array([[0.9, 0.1], [0.4, 0.6]])
    w_next = np.full(2, 0.5)
    w_filt = np.full(2, 0.5)
    w_pred = 0.5 * P  # predictive joint from uniform marginal
    pair, w_t = smooth_regimes_step(w_next, w_filt, w_pred, P)
    # w_{t,t+1|n}[j,k] = 0.5 * 0.5 * p_jk / (0.5 * colsum_j p_jk), normalized
    expected = 0.5 * P / P.sum(axis=0, keepdims=True)
    expected /= expected.sum()
    assert np.max(np.abs(pair - expected)) <= 1e-12
    assert np.max(np.abs(w_t - pair.sum(axis=1))) <= 1e-15


def test_terminal_step_copies_filter(rng):
    params = make_params(rng, M=2, n=6)
    Y = rng.standard_normal((6, 3, 3))
    filt = filter_pass(params, Y)
    smooth = smooth_pass(params, filt)
    assert np.array_equal(smooth.w_smooth[-1], filt.w_filt[-1])
    assert np.array_equal(smooth.f_smooth[-1], filt.f_filt[-1])
    assert np.array_equal(smooth.V_smooth[-1], filt.V_filt[-1])


def test_n_equals_one(rng):
    params = make_params(rng, M=2, n=2)
    Y = rng.standard_normal((1, 3, 3))
    filt = filter_pass(params, Y)
    smooth = smooth_pass(params, filt)
    assert np.array_equal(smooth.w_smooth[0], filt.w_filt[0])
    assert smooth.w_pair.shape == (1, 2, 2)


def test_weights_normalized(rng):
    params = make_params(rng, p=4, q=3, k1=1, k2=2, M=3, n=15)
    Y = rng.standard_normal((15, 4, 3))
    smooth = smooth_pass(params, filter_pass(params, Y))
    assert np.max(np.abs(smooth.w_smooth.sum(axis=1) - 1)) <= 1e-10
    assert np.all(smooth.w_smooth >= 0)
    assert np.all(smooth.w_smooth <= 1 + 1e-12)
    assert np.max(np.abs(smooth.w_pair.sum(axis=(1, 2)) - 1)) <= 1e-10


def test_zero_gain_keeps_filtered(rng):
    # Phi = Gamma = 0: no information flows backward
    params = make_params(rng, M=2, n=8, ar_scale=0.0)
    Y = rng.standard_normal((8, 3, 3))
    filt = filter_pass(params, Y)
    smooth = smooth_pass(params, filt)
    assert np.max(np.abs(smooth.f_smooth - filt.f_filt)) <= 1e-12
    assert np.max(np.abs(smooth.V_smooth - filt.V_filt)) <= 1e-12


def test_m1_matches_dense_rts(rng):
    params = make_params(rng, p=3, q=3, k1=1, k2=1, M=1, n=10)
    Y = rng.standard_normal((10, 3, 3))
    filt = filter_pass(params, Y)
    smooth = smooth_pass(params, filt)
    _, _, f_sm, V_sm, _ = dense_rts_smoother(params, Y)
    assert np.max(np.abs(smooth.f_smooth[:, 0] - f_sm)) <= 1e-8
    assert np.max(np.abs(smooth.V_smooth[:, 0] - V_sm)) <= 1e-8


def test_m1_scalar_three_steps(rng):
    params = make_params(rng, p=2, q=2, k1=1, k2=1, M=1, n=3)
    Y = rng.standard_normal((3, 2, 2))
    smooth = smooth_pass(params, filter_pass(params, Y))
    _, _, f_sm, V_sm, _ = dense_rts_smoother(params, Y)
    assert np.max(np.abs(smooth.f_smooth[:, 0] - f_sm)) <= 1e-10


def test_smoothing_never_inflates_m1_covariance(rng):
    params = make_params(rng, p=3, q=3, k1=2, k2=1, M=1, n=12)
    Y = rng.standard_normal((12, 3, 3))
    filt = filter_pass(params, Y)
    smooth = smooth_pass(params, filt)
    for t in range(12):
        tr_s = np.trace(smooth.V_smooth[t, 0])
        tr_f = np.trace(filt.V_filt[t, 0])
        assert tr_s <= tr_f + 1e-8


def test_pure_hmm_limit_matches_enumeration(rng):
    # memoryless factors: the model is an exact HMM, so smoothed regime
    # probabilities must match exhaustive path enumeration
    for M in (2, 3):
        params = make_params(rng, p=3, q=2, k1=1, k2=1, M=M, n=6, ar_scale=0.0)
        Y = rng.standard_normal((6, 3, 2))
        smooth = smooth_pass(params, filter_pass(params, Y))
        marg, pairs, _ = enumerate_path_posterior(params, Y)
        assert np.max(np.abs(smooth.w_smooth - marg)) <= 1e-10
        assert np.max(np.abs(smooth.w_pair - pairs)) <= 1e-10


def test_zero_loading_regimes_match_enumeration(rng):
    # zero factor signal: emissions are regime-independent white noise
    base = make_params(rng, p=2, q=2, k1=1, k2=1, M=3, n=8, ar_scale=0.0)
    regimes = tuple(RegimeParams(R=np.zeros((2, 1)), C=np.zeros((2, 1)),
                                 B=reg.B, Phi=reg.Phi, Gamma=reg.Gamma)
                    for reg in base.regimes)
    params = ModelParams(dims=base.dims, regimes=regimes, sigma2=0.9,
                         sigma_eps2=0.5, P=base.P)
    Y = rng.standard_normal((8, 2, 2))
    smooth = smooth_pass(params, filter_pass(params, Y))
    marg, pairs, _ = enumerate_path_posterior(params, Y)
    assert np.max(np.abs(smooth.w_smooth - marg)) <= 1e-10
    assert np.max(np.abs(smooth.w_pair - pairs)) <= 1e-10


def test_smoothed_accuracy_dominates_filtered():
    diffs = []
    for seed in range(5):
        dims = Dims(p=8, q=8, k1=2, k2=2, M=2, n=200)
        out = simulate(SimConfig(dims=dims, seed=seed))
        filt = filter_pass(out.truth, out.Y)
        smooth = smooth_pass(out.truth, filt)
        acc_f = np.mean(np.argmax(filt.w_filt, axis=1) == out.s)
        acc_s = np.mean(np.argmax(smooth.w_smooth, axis=1) == out.s)
        diffs.append(acc_s - acc_f)
    assert np.mean(diffs) >= 0.0
