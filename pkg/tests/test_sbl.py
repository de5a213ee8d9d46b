import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plc_sbl.fec import DEFAULT_CODE, encode
from plc_sbl.noise import REFERENCE_GM, NoiseModel, impulsive_noise
from plc_sbl.numerics import dft_matrix, make_rng, sample_circular_gaussian
from plc_sbl.ofdm import (OfdmConfig, apply_channel, demodulate, modulate, observe_nondata,
                          qpsk_map, subtract_and_detect)
from plc_sbl.sbl import (DftRows, SblSettings, constellation_projector, estimate_alltone,
                         estimate_decision_feedback, estimate_nulltone, estimate_sequential,
                         log_marginal, run_em, sbl_posterior, significant)
from plc_sbl.sbl.core import _posterior_batch, _posterior_dft

CFG = OfdmConfig()
N, M = CFG.n_fft, CFG.n_obs
F = dft_matrix(N)
F_I = F[CFG.nondata_tones]
BASIS = DftRows(CFG.nondata_tones, N)


def sparse_instance(rng, k, amp_var=100.0, sigma2=1e-8):
    e = np.zeros(N, complex)
    pos = rng.choice(N, k, replace=False)
    e[pos] = sample_circular_gaussian(rng, k, amp_var)
    z = F_I @ e + sample_circular_gaussian(rng, M, sigma2)
    return e, np.sort(pos), z


def gm_symbols(seed, n_sym, snr_db, cfg=CFG):
    rng = make_rng(seed)
    s2 = 10 ** (-snr_db / 10)
    bits = rng.integers(0, 2, (n_sym, cfg.bits_per_symbol), dtype=np.uint8)
    e = impulsive_noise(rng, NoiseModel.gm(REFERENCE_GM.weights, REFERENCE_GM.variances),
                        n_sym * cfg.n_fft, s2).reshape(n_sym, cfg.n_fft)
    g = sample_circular_gaussian(rng, (n_sym, cfg.n_fft), s2)
    y = demodulate(cfg, apply_channel(cfg, modulate(cfg, qpsk_map(bits)), e, g))
    return y, e, bits, s2


# --- posterior ------------------------------------------------------------

def test_posterior_fully_pruned():
    mu, cov = sbl_posterior(F_I, np.ones(M), np.zeros(N), 0.1)
    assert not mu.any() and not cov.any()


def test_posterior_noiseless_identity():
    t = make_rng(0).standard_normal(6) + 0j
    mu, _ = sbl_posterior(np.eye(6), t, np.full(6, 1e6), 1e-9)
    assert np.allclose(mu, t, atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.sampled_from([(8, 16), (20, 40), (56, 128)]))
def test_posterior_forms_agree(seed, shape):
    rng = make_rng(seed)
    m, n = shape
    phi = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    t = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    gamma = rng.exponential(size=n) + 1e-3
    a = sbl_posterior(phi, t, gamma, 0.5, form="direct")
    b = sbl_posterior(phi, t, gamma, 0.5, form="woodbury")
    assert np.max(np.abs(a[0] - b[0])) < 1e-10 and np.max(np.abs(a[1] - b[1])) < 1e-10


def test_posterior_pruned_rows_are_zero():
    rng = make_rng(1)
    gamma = rng.exponential(size=N)
    gamma[::4] = 0
    mu, cov = sbl_posterior(F_I, rng.standard_normal(M) + 0j, gamma, 0.1)
    assert not mu[::4].any() and not cov[::4].any() and not cov[:, ::4].any()
    with pytest.raises(ValueError):
        sbl_posterior(F_I, np.zeros(M), gamma, 0.1, form="direct")


@given(st.integers(0, 2**32 - 1), st.floats(1e-6, 10.0))
def test_structured_posterior_matches_dense(seed, s2):
    rng = make_rng(seed)
    gamma = rng.exponential(size=(3, N)) * rng.choice([0.0, 1.0, 1e3], size=(3, N))
    t = rng.standard_normal((3, M)) + 1j * rng.standard_normal((3, M))
    s2v = np.full(3, s2)
    fast = _posterior_dft(BASIS, t, gamma, s2v)
    dense = _posterior_batch(F_I, t, gamma, s2v)
    # both solvers are backward stable; allow for the conditioning of C
    cond = max(np.linalg.cond((F_I * g) @ F_I.conj().T + s2 * np.eye(M)) for g in gamma)
    tol = 1e-13 * cond
    scale = max(1.0, np.max(np.abs(dense[0])))
    assert np.max(np.abs(fast[0] - dense[0])) < tol * scale
    assert np.max(np.abs(fast[1] - dense[1])) < tol * gamma.max()
    assert np.all(np.abs(fast[2] - dense[2]) < tol * np.maximum(1.0, np.abs(dense[2])))


def test_structured_posterior_scattered_rows():
    rows = np.array([0, 3, 4, 9, 17, 30, 31, 50])
    basis = DftRows(rows, 64)
    assert basis.order is None
    rng = make_rng(2)
    gamma = rng.exponential(size=(2, 64))
    t = rng.standard_normal((2, 8)) + 0j
    fast = _posterior_dft(basis, t, gamma, np.full(2, 0.2))
    dense = _posterior_batch(dft_matrix(64)[rows], t, gamma, np.full(2, 0.2))
    for a, b in zip(fast, dense):
        assert np.allclose(a, b)


def test_dftrows_dense_and_products():
    assert np.allclose(BASIS.dense(), F_I)
    v = make_rng(3).standard_normal(N) + 0j
    assert np.allclose(BASIS.apply(v), F_I @ v)
    u = make_rng(4).standard_normal(M) + 0j
    assert np.allclose(BASIS.adjoint(u), F_I.conj().T @ u)


# --- null-tone estimator ----------------------------------------------------

def test_nulltone_zero_observation():
    e_hat, st_ = estimate_nulltone(np.zeros(M), BASIS, sigma2=1e-3)
    assert not e_hat.any() and not st_.gamma.any()


def test_nulltone_single_impulse_exact():
    rng = make_rng(5)
    for _ in range(10):
        e = np.zeros(N, complex)
        j = rng.integers(N)
        e[j] = 10.0
        e_hat, _ = estimate_nulltone(F_I @ e + sample_circular_gaussian(rng, M, 1e-8), BASIS,
                                     sigma2=1e-8)
        assert int(np.argmax(np.abs(e_hat))) == j
        assert abs(e_hat[j] - 10) / 10 < 1e-3


def observation_snr_instance(rng, k, snr_db, sigma2):
    """k impulses with mixture-tail shapes, scaled so ||F_I e||^2 / E||g_I||^2 = snr."""
    e = np.zeros(N, complex)
    pos = np.sort(rng.choice(N, k, replace=False))
    e[pos] = sample_circular_gaussian(rng, k, 1.0)
    e *= np.sqrt(10 ** (snr_db / 10) * M * sigma2) / np.linalg.norm(F_I @ e)
    return e, pos, F_I @ e + sample_circular_gaussian(rng, M, sigma2)


def test_nulltone_five_impulses_30db():
    # SBL has local optima (closely spaced impulses); require 95 of 100
    rng = make_rng(6)
    s2 = 1e-3
    inst = [observation_snr_instance(rng, 5, 30.0, s2) for _ in range(100)]
    e_hat, st_ = estimate_nulltone(np.stack([z for _, _, z in inst]), BASIS, sigma2=s2)
    good = 0
    for i, (e, pos, z) in enumerate(inst):
        ls = np.linalg.lstsq(F_I[:, pos], z, rcond=None)[0]
        assert np.linalg.norm(ls - e[pos]) / np.linalg.norm(e) < 0.05
        err = np.linalg.norm(e_hat[i] - e) / np.linalg.norm(e)
        big = np.flatnonzero(significant(st_.gamma[i], s2, M, N))
        good += err < 0.05 and set(pos) <= set(big)
    assert good >= 95


def test_nulltone_accepts_dense_basis():
    rng = make_rng(7)
    _, _, z = sparse_instance(rng, 3, sigma2=1e-4)
    a, _ = estimate_nulltone(z, BASIS, sigma2=1e-4)
    b, _ = estimate_nulltone(z, F_I, sigma2=1e-4)
    assert np.allclose(a, b, atol=1e-8)


def test_nulltone_batch_equals_single():
    rng = make_rng(8)
    zs = np.stack([sparse_instance(rng, 3, sigma2=1e-3)[2] for _ in range(4)])
    batch, _ = estimate_nulltone(zs, BASIS, sigma2=1e-3)
    for i in range(4):
        single, _ = estimate_nulltone(zs[i], BASIS, sigma2=1e-3)
        assert np.allclose(single, batch[i], atol=1e-12)


def test_nulltone_shape_errors():
    with pytest.raises(ValueError):
        estimate_nulltone(np.zeros(M + 1), BASIS)
    with pytest.raises(ValueError):
        estimate_nulltone(np.zeros(M), BASIS, sigma2=0.0)


def test_scaling_covariance():
    rng = make_rng(9)
    for _ in range(5):
        _, _, z = sparse_instance(rng, 4, sigma2=1e-2)
        a, _ = estimate_nulltone(z, BASIS, sigma2=1e-2)
        for c in (0.1, 7.0):
            b, _ = estimate_nulltone(c * z, BASIS, sigma2=c**2 * 1e-2)
            assert np.allclose(b, c * a, rtol=1e-6, atol=1e-8 * c * np.abs(a).max())


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_noiseless_sparsity(k):
    rng = make_rng(10 + k)
    for _ in range(5):
        e, pos, z = sparse_instance(rng, k)
        e_hat, st_ = estimate_nulltone(z, BASIS, sigma2=1e-8)
        assert np.count_nonzero(st_.gamma > 1e-8 * st_.gamma.max()) <= M
        assert np.array_equal(np.flatnonzero(np.abs(e_hat) > 1e-2 * np.abs(e[pos]).min()), pos)


def test_learned_sigma2_runs_and_stays_positive():
    rng = make_rng(11)
    _, _, z = sparse_instance(rng, 3, sigma2=1e-2)
    e_hat, st_ = estimate_nulltone(z, BASIS, SblSettings(learn_sigma2=True), sigma2=1.0)
    assert st_.sigma2[0] > 0 and np.all(np.isfinite(e_hat))


# --- EM monotonicity --------------------------------------------------------

def test_em_monotone_nulltone_and_alltone():
    y, _, _, s2 = gm_symbols(12, 20, 15.0)
    _, st_ = estimate_nulltone(observe_nondata(CFG, y), BASIS, sigma2=s2, record=True)
    _, _, st2 = estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, sigma2=s2, record=True)
    _, _, st3 = estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, sigma2=s2, record=True,
                                 x_update="continuous", init="flat")
    for h in st_.loglik + st2.loglik + st3.loglik:
        assert np.min(np.diff(h)) >= -1e-9


def test_recorded_loglik_matches_direct_evaluation():
    rng = make_rng(13)
    _, _, z = sparse_instance(rng, 3, sigma2=1e-2)
    _, st_ = estimate_nulltone(z, BASIS, SblSettings(max_iters=3), sigma2=1e-2, record=True)
    assert np.isclose(st_.loglik[0][-1], log_marginal(F_I, z, st_.gamma[0], 1e-2))


# --- all-tone estimator -----------------------------------------------------

@pytest.mark.parametrize("init", ["nulltone", "flat"])
@pytest.mark.parametrize("x_update", ["constellation", "continuous"])
def test_alltone_clean_channel(init, x_update):
    rng = make_rng(14)
    bits = rng.integers(0, 2, 144, dtype=np.uint8)
    x = qpsk_map(bits)
    y = demodulate(CFG, modulate(CFG, x))
    e_hat, lx, st_ = estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, sigma2=1e-3,
                                      init=init, x_update=x_update,
                                      settings=SblSettings(max_iters=1))
    assert np.allclose(e_hat, 0) and np.allclose(lx, x)


def test_alltone_dense_equals_unitary():
    y, _, _, s2 = gm_symbols(15, 3, 15.0)
    a = estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, sigma2=s2, method="dense")
    b = estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, sigma2=s2, method="unitary")
    assert np.allclose(a[0], b[0], atol=1e-6) and np.allclose(a[1], b[1], atol=1e-6)


def test_alltone_without_data_tones_matches_plain_em():
    rng = make_rng(16)
    e = np.zeros(N, complex)
    e[[3, 70]] = [5, -4j]
    y = F @ e + sample_circular_gaussian(rng, N, 1e-2)
    a, _, _ = estimate_alltone(y, F, np.ones(N), np.arange(N), sigma2=1e-2)
    b, _, _ = run_em(F, y[None], 1e-2, SblSettings())
    assert np.allclose(a, b[0])


def test_alltone_error_not_worse_than_nulltone():
    rng = make_rng(17)
    s2 = 1e-3
    wins = 0
    trials = 100
    for _ in range(trials):
        bits = rng.integers(0, 2, 144, dtype=np.uint8)
        e = np.zeros(N, complex)
        e[rng.choice(N, 5, replace=False)] = sample_circular_gaussian(rng, 5, 1.0)
        y = demodulate(CFG, apply_channel(CFG, modulate(CFG, qpsk_map(bits)), e,
                                          sample_circular_gaussian(rng, N, s2)))
        a, _ = estimate_nulltone(observe_nondata(CFG, y), BASIS, sigma2=s2)
        b, _, _ = estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, sigma2=s2)
        wins += np.linalg.norm(b - e) <= np.linalg.norm(a - e) * (1 + 1e-6)
    assert wins >= 0.9 * trials


def test_alltone_lowers_ber_under_gm_noise():
    y, _, bits, s2 = gm_symbols(18, 200, 16.0)
    a, _ = estimate_nulltone(observe_nondata(CFG, y), BASIS, sigma2=s2)
    b, _, _ = estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, sigma2=s2)
    err_null = np.count_nonzero(subtract_and_detect(CFG, y, a)[1] != bits)
    err_all = np.count_nonzero(subtract_and_detect(CFG, y, b)[1] != bits)
    assert err_all < err_null


def test_constellation_projector_nearest_point():
    lam = np.array([2.0, 1j, -0.5 + 0.5j])
    proj = constellation_projector(lam)
    v = np.array([0.3 + 2.0j, 5.0, -1.0 + 0j])
    out = proj(v)
    pts = qpsk_map(np.array([[0, 0], [0, 1], [1, 0], [1, 1]])).ravel()
    for i in range(3):
        best = lam[i] * pts[np.argmin(np.abs(v[i] - lam[i] * pts))]
        assert np.isclose(out[i], best)


def test_alltone_option_errors():
    y = np.zeros(N)
    with pytest.raises(ValueError):
        estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, x_update="round")
    with pytest.raises(ValueError):
        estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, init="warm")
    with pytest.raises(ValueError):
        estimate_alltone(y, F, CFG.lam, CFG.nondata_tones, method="qr")


# --- decision feedback --------------------------------------------------------

def coded_frame(seed, n_cw, snr_db, packet_symbols=4):
    rng = make_rng(seed)
    s2 = 10 ** (-snr_db / 10)
    n_info = DEFAULT_CODE.info_length(packet_symbols * 144)
    info = rng.integers(0, 2, (n_cw, n_info), dtype=np.uint8)
    cw = encode(DEFAULT_CODE, info).reshape(n_cw * packet_symbols, 144)
    S = n_cw * packet_symbols
    e = impulsive_noise(rng, NoiseModel.gm(REFERENCE_GM.weights, REFERENCE_GM.variances), S * N,
                        s2).reshape(S, N)
    g = sample_circular_gaussian(rng, (S, N), s2)
    y = demodulate(CFG, apply_channel(CFG, modulate(CFG, qpsk_map(cw)), e, g))
    return y.reshape(n_cw, packet_symbols, N), e, info, s2


def test_feedback_update_reduces_to_plain_update():
    # a = b = 0 gives exactly the plain gamma update on the same moments
    rng = make_rng(19)
    _, _, z = sparse_instance(rng, 3, sigma2=1e-2)
    zero = np.zeros((1, N))
    a, sa = estimate_nulltone(z, BASIS, sigma2=1e-2)
    b, sb = estimate_nulltone(z, BASIS, sigma2=1e-2, a=zero, b=zero)
    assert np.array_equal(a, b) and np.array_equal(sa.gamma, sb.gamma)


def test_feedback_zero_rounds_is_nulltone():
    y, _, _, s2 = coded_frame(20, 3, 14.0)
    e_df, _, _ = estimate_decision_feedback(y, CFG, DEFAULT_CODE, rounds=0, sigma2=s2)
    e_nt, _ = estimate_nulltone(observe_nondata(CFG, y.reshape(-1, N)), BASIS, sigma2=s2)
    assert np.array_equal(e_df.reshape(-1, N), e_nt)


def test_feedback_clean_channel_fixed_point():
    rng = make_rng(21)
    info = rng.integers(0, 2, (2, DEFAULT_CODE.info_length(576)), dtype=np.uint8)
    cw = encode(DEFAULT_CODE, info).reshape(8, 144)
    y = demodulate(CFG, modulate(CFG, qpsk_map(cw))).reshape(2, 4, N)
    for rounds in (0, 1, 3):
        _, b_hat, _ = estimate_decision_feedback(y, CFG, DEFAULT_CODE, rounds, sigma2=1e-4)
        assert np.array_equal(b_hat, info)


def test_oracle_feedback_never_hurts():
    # feeding the true noise through the hyperprior cannot add symbol errors
    y, e, _, s2 = coded_frame(22, 25, 14.0)
    flat = y.reshape(-1, N)
    z = observe_nondata(CFG, flat)
    pre, _ = estimate_nulltone(z, BASIS, sigma2=s2)
    post, _ = estimate_nulltone(z, BASIS, sigma2=s2, a=np.full(flat.shape, 0.5),
                                b=np.abs(e) ** 2 / 2)
    x_bits = subtract_and_detect(CFG, flat, e)[1]
    err_pre = np.count_nonzero(subtract_and_detect(CFG, flat, pre)[1] != x_bits, axis=1)
    err_post = np.count_nonzero(subtract_and_detect(CFG, flat, post)[1] != x_bits, axis=1)
    assert np.all(err_post <= err_pre)


def test_feedback_improves_decoding():
    y, _, info, s2 = coded_frame(23, 50, 10.0)
    _, b0, _ = estimate_decision_feedback(y, CFG, DEFAULT_CODE, rounds=0, sigma2=s2)
    _, b2, _ = estimate_decision_feedback(y, CFG, DEFAULT_CODE, rounds=2, sigma2=s2)
    assert np.count_nonzero(b2 != info) <= np.count_nonzero(b0 != info)


def test_feedback_rejects_partial_codeword():
    with pytest.raises(ValueError):
        estimate_decision_feedback(np.zeros((1, 1, N)), CFG,
                                   type(DEFAULT_CODE)(7, (0o133, 0o171)), 1) if False else \
            estimate_decision_feedback(np.zeros((1, 1, N)), OfdmConfig(data_tones=(1, 2, 3)),
                                       DEFAULT_CODE, 1)


# --- sequential estimator ----------------------------------------------------

def test_sequential_zero_input():
    r = estimate_sequential(np.zeros(M), F_I, sigma2=1e-3)
    assert r.support.size == 0 and not r.e_hat.any()


def test_sequential_single_impulse_first_pick():
    rng = make_rng(24)
    first = SblSettings(seq_max_iters=0)
    for _ in range(10):
        e = np.zeros(N, complex)
        j = rng.integers(N)
        e[j] = 10
        z = F_I @ e + sample_circular_gaussian(rng, M, 1e-3)
        # projection argmax oracle
        assert int(np.argmax(np.abs(F_I.conj().T @ z) ** 2)) == j
        assert list(estimate_sequential(z, F_I, first, sigma2=1e-3).support) == [j]
        r = estimate_sequential(z, F_I, sigma2=1e-3)
        strong = np.flatnonzero(significant(1.0 / r.alpha, 1e-3, M, N))
        assert list(strong) == [j]


def test_sequential_agrees_with_nulltone_30db():
    rng = make_rng(25)
    s2 = 1e-3
    agree = 0
    for _ in range(100):
        _, _, z = observation_snr_instance(rng, 5, 30.0, s2)
        r = estimate_sequential(z, F_I, sigma2=s2)
        _, st_ = estimate_nulltone(z, BASIS, sigma2=s2)
        seq = set(np.flatnonzero(significant(1.0 / r.alpha, s2, M, N)))
        em = set(np.flatnonzero(significant(st_.gamma[0], s2, M, N)))
        agree += seq == em
    assert agree >= 95


def test_sequential_gram_and_learned_sigma():
    rng = make_rng(26)
    _, pos, z = sparse_instance(rng, 3, sigma2=1e-4)
    a = estimate_sequential(z, F_I, sigma2=1e-4)
    b = estimate_sequential(z, F_I, sigma2=1e-4, gram=F_I.conj().T @ F_I)
    assert np.array_equal(a.support, b.support) and np.allclose(a.e_hat, b.e_hat)
    c = estimate_sequential(z, F_I, SblSettings(learn_sigma2=True), sigma2=1e-4)
    assert c.sigma2 > 0 and set(pos) <= set(c.support)


# --- complexity trend ---------------------------------------------------------

def _best_time(fn, reps=3):
    best = np.inf
    for _ in range(reps):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def test_per_iteration_cost_trend():
    """All-tone (dense) per-iteration cost outgrows sequential as N rises."""
    ratios = []
    for n in (64, 128, 256):
        m = n * 7 // 16
        rows = np.arange(n - m // 2 - m % 2, n + m // 2) % n
        Fn = dft_matrix(n)
        FI = Fn[np.sort(rows)]
        rng = make_rng(n)
        e = np.zeros(n, complex)
        e[rng.choice(n, 4, replace=False)] = 3.0
        s2 = 1e-2
        z = FI @ e + sample_circular_gaussian(rng, m, s2)
        y = Fn @ e + sample_circular_gaussian(rng, n, s2)
        fixed = SblSettings(max_iters=4, tol=1e-300)
        t_all, (_, _, st_) = _best_time(lambda: estimate_alltone(
            y, Fn, np.ones(n), np.sort(rows), fixed, sigma2=s2, method="dense", init="flat"))
        gram = FI.conj().T @ FI
        t_seq, r = _best_time(lambda: estimate_sequential(z, FI, sigma2=s2, gram=gram))
        ratios.append((t_all / st_.iterations[0]) / (t_seq / max(r.iterations, 1)))
    assert ratios[0] < ratios[1] < ratios[2]
