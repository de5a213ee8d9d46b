"""Quick invariant checks run by ``plc-sbl selftest``."""
from __future__ import annotations

import itertools
from typing import Callable

import numpy as np

from ..fec import ConvCode, encode, viterbi_decode
from ..noise import REFERENCE_GM, NoiseModel, impulsive_noise
from ..numerics import dft_matrix, make_rng, sample_circular_gaussian
from ..ofdm import OfdmConfig, apply_channel, demodulate, modulate, observe_nondata, qpsk_map
from ..sbl import DftRows, estimate_alltone, estimate_nulltone, sbl_posterior
from ..sbl.core import _posterior_batch, _posterior_dft
from .config import ExperimentConfig
from .simulate import format_csv, run_point


def _gm_block(seed: int, n_sym: int, snr_db: float):
    cfg = OfdmConfig()
    rng = make_rng(seed)
    s2 = 10 ** (-snr_db / 10)
    bits = rng.integers(0, 2, (n_sym, cfg.bits_per_symbol), dtype=np.uint8)
    e = impulsive_noise(rng, NoiseModel.gm(REFERENCE_GM.weights, REFERENCE_GM.variances),
                        n_sym * cfg.n_fft, s2).reshape(n_sym, cfg.n_fft)
    g = sample_circular_gaussian(rng, (n_sym, cfg.n_fft), s2)
    y = demodulate(cfg, apply_channel(cfg, modulate(cfg, qpsk_map(bits)), e, g))
    return cfg, y, s2


def check_posterior_forms() -> bool:
    rng = make_rng(11)
    for m, n in ((8, 16), (56, 128)):
        phi = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
        t = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        gamma = rng.exponential(size=n)
        a = sbl_posterior(phi, t, gamma, 0.3, form="direct")
        b = sbl_posterior(phi, t, gamma, 0.3, form="woodbury")
        if not all(np.allclose(x, y, rtol=0, atol=1e-10) for x, y in zip(a, b)):
            return False
    return True


def check_structured_posterior() -> bool:
    cfg = OfdmConfig()
    rng = make_rng(12)
    basis = DftRows(cfg.nondata_tones, cfg.n_fft)
    gamma = rng.exponential(size=(4, cfg.n_fft))
    gamma[:, ::5] = 0.0
    t = rng.standard_normal((4, cfg.n_obs)) + 1j * rng.standard_normal((4, cfg.n_obs))
    s2 = np.full(4, 0.05)
    fast = _posterior_dft(basis, t, gamma, s2)
    dense = _posterior_batch(basis.dense(), t, gamma, s2)
    return all(np.allclose(x, y, rtol=1e-9, atol=1e-9) for x, y in zip(fast, dense))


def check_em_monotone() -> bool:
    cfg, y, s2 = _gm_block(13, 10, 15.0)
    _, st = estimate_nulltone(observe_nondata(cfg, y), DftRows(cfg.nondata_tones, cfg.n_fft),
                              sigma2=s2, record=True)
    _, _, st2 = estimate_alltone(y, dft_matrix(cfg.n_fft), cfg.lam, cfg.nondata_tones,
                                 sigma2=s2, record=True)
    steps = [np.diff(h) for h in st.loglik + st2.loglik]
    return min(s.min() for s in steps if s.size) >= -1e-9


def check_viterbi_ml() -> bool:
    code = ConvCode()
    rng = make_rng(14)
    k = 5
    msgs = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.uint8)
    books = encode(code, msgs)
    for _ in range(50):
        cw = books[rng.integers(len(books))]
        noisy = cw ^ (rng.random(cw.size) < 0.1).astype(np.uint8)
        _, recw = viterbi_decode(code, noisy)
        best = np.min(np.count_nonzero(books != noisy, axis=1))
        if np.count_nonzero(recw != noisy) != best:
            return False
    return True


def check_determinism() -> bool:
    cfg = ExperimentConfig(estimator="nulltone", snr_points=(15.0,), min_symbols=20,
                           max_symbols=20, block_symbols=20, min_bit_errors=0)
    a = format_csv([run_point(cfg, 15.0)])
    b = format_csv([run_point(cfg, 15.0)])
    return a == b


CHECKS: dict[str, Callable[[], bool]] = {
    "posterior direct vs woodbury": check_posterior_forms,
    "structured posterior vs dense": check_structured_posterior,
    "EM likelihood non-decreasing": check_em_monotone,
    "viterbi equals brute-force ML": check_viterbi_ml,
    "run_point deterministic": check_determinism,
}


def run_selftest(echo=print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        passed = bool(fn())
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
