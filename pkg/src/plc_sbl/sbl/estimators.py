"""Impulsive-noise estimators built on the EM engine."""
from __future__ import annotations

import numpy as np

from ..fec import ConvCode, viterbi_decode
from ..ofdm import OfdmConfig, known_nondata, qpsk_demap, qpsk_map, subtract_and_detect
from ..numerics import dft_matrix
from .core import DftRows, SblSettings, SblState, run_em

DEFAULT_SETTINGS = SblSettings()


def _batch(v):
    v = np.asarray(v, dtype=complex)
    return v.ndim == 1, np.atleast_2d(v)


def _unbatch(single, *arrays):
    return tuple(a[0] for a in arrays) if single else arrays


def estimate_nulltone(z, F_I, settings: SblSettings = DEFAULT_SETTINGS, *, sigma2=1.0,
                      a=None, b=None, record: bool = False):
    """Estimate the time-domain impulses from the null/pilot-tone residual.

    ``z`` is one observation (M,) or a batch (B, M); ``F_I`` the (M, N)
    DFT rows of those tones. ``a``/``b`` set a Gamma hyperprior on the
    per-sample precisions (default uninformative). Returns ``(e_hat, state)``.
    """
    single, zb = _batch(z)
    if not isinstance(F_I, DftRows):
        F_I = np.asarray(F_I)
    if zb.shape[1] != F_I.shape[0] or F_I.shape[0] >= F_I.shape[1]:
        raise ValueError("need z of length M and an M x N basis with M < N")
    mu, state, _ = run_em(F_I, zb, sigma2, settings, a=a, b=b, record=record)
    if single:
        return mu[0], state
    return mu, state


def estimate_alltone(y, F, lam, obs_tones, settings: SblSettings = DEFAULT_SETTINGS, *,
                     sigma2=1.0, known=None, x_update: str = "constellation",
                     init: str = "nulltone", method: str = "auto", record: bool = False):
    """Joint impulse estimation and data-tone recovery over all tones.

    ``(Lambda x)`` on the data tones is a hyperparameter updated from
    y - F mu_e; on ``obs_tones`` it is held at ``known`` (zeros for null
    tones).

    x_update
        ``"constellation"`` restricts the update to channel-scaled QPSK
        points (tone-wise nearest point, still an exact M-step);
        ``"continuous"`` leaves it unconstrained.
    init
        ``"nulltone"`` starts from the null-tone solution (its gamma and the
        data tones it implies); ``"flat"`` from uniform gamma with mu_e = 0.
        With no data tones there is nothing to warm-start and ``"flat"`` is
        used.
    method
        ``"dense"`` solves the N x N observation covariance, ``"unitary"``
        uses its diagonalisation by the DFT; ``"auto"`` takes the latter when
        ``F`` is square.

    Returns ``(e_hat, lam_x_data, state)``.
    """
    single, yb = _batch(y)
    F = np.asarray(F)
    n = F.shape[0]
    obs = np.asarray(obs_tones, dtype=np.intp)
    data = np.setdiff1d(np.arange(n), obs)
    if x_update not in ("constellation", "continuous"):
        raise ValueError(f"unknown x_update {x_update!r}")
    if init not in ("nulltone", "flat"):
        raise ValueError(f"unknown init {init!r}")
    if method == "auto":
        method = "unitary" if F.shape[0] == F.shape[1] else "dense"
    if method not in ("dense", "unitary"):
        raise ValueError(f"unknown method {method!r}")
    t = yb.copy()
    if known is not None:
        t[:, obs] -= np.broadcast_to(np.asarray(known), (len(yb), len(obs)))
    lam = np.broadcast_to(np.asarray(lam, dtype=complex), (n,))
    project = constellation_projector(lam[data]) if x_update == "constellation" else None

    gamma0 = mean0 = None
    if init == "nulltone" and len(data):
        basis = DftRows(obs, n) if np.allclose(F, dft_matrix(n)) else F[obs]
        mu0, st0 = estimate_nulltone(t[:, obs], basis, settings, sigma2=sigma2)
        gamma0 = st0.gamma
        mean0 = t[:, data] - mu0 @ F[data].T
        if project is not None:
            mean0 = project(mean0)
    mu, state, mean = run_em(F, t, sigma2, settings, free_rows=data,
                             unitary=(method == "unitary"), gamma0=gamma0, mean0=mean0,
                             project=project, record=record)
    lx = mean[:, data]
    if single:
        return mu[0], lx[0], state
    return mu, lx, state


def constellation_projector(lam_data):
    """Nearest channel-scaled QPSK point, tone by tone."""
    lam_data = np.asarray(lam_data)

    def project(v):
        return lam_data * qpsk_map(qpsk_demap(v / lam_data))

    return project


def decode_symbols(cfg: OfdmConfig, code: ConvCode, y, e_hat):
    """Subtract, slice and Viterbi-decode codewords spanning the symbols of ``y``.

    ``y`` and ``e_hat`` are (C, S, N): C codewords of S OFDM symbols each.
    Returns (info bits, re-encoded codeword, raw hard bits).
    """
    C, S, _ = y.shape
    _, hard = subtract_and_detect(cfg, y, e_hat)
    hard = hard.reshape(C, S * cfg.bits_per_symbol)
    info, cw = viterbi_decode(code, hard)
    return info, cw, hard


def estimate_decision_feedback(y, cfg: OfdmConfig, code: ConvCode, rounds: int = 2,
                               settings: SblSettings = DEFAULT_SETTINGS, *, sigma2=1.0,
                               a=0.0, b=0.0, pilot_values=None):
    """Null-tone SBL refined by decoder feedback through a Gamma hyperprior.

    ``y`` holds the demodulated symbols of one codeword (S, N) or a batch of
    codewords (C, S, N). Every feedback round re-maps the decoder's codeword
    to data tones, forms the full-band residual e~ = F^*(y - Lambda x^),
    sets a~ = a + 1/2 and b~ = b + |e~|^2 / 2 and re-runs the estimator
    with that prior. Returns ``(e_hat, b_hat, state)``.
    """
    y = np.asarray(y, dtype=complex)
    single = y.ndim == 2
    yb = y[None] if single else y
    C, S, N = yb.shape
    n_coded = S * cfg.bits_per_symbol
    if code.coded_length(code.info_length(n_coded)) != n_coded:
        raise ValueError("symbols do not hold a whole codeword")
    flat = yb.reshape(C * S, N)
    known = known_nondata(cfg, pilot_values)
    z = flat[:, cfg.nondata_tones] - known
    F_I = DftRows(cfg.nondata_tones, N)
    s2 = np.repeat(np.broadcast_to(np.asarray(sigma2, float), (C,)), S)
    a0 = np.broadcast_to(np.asarray(a, float), (C * S, N))
    b0 = np.broadcast_to(np.asarray(b, float), (C * S, N))

    e_hat, state = estimate_nulltone(z, F_I, settings, sigma2=s2, a=a0, b=b0)
    info, cw, _ = decode_symbols(cfg, code, yb, e_hat.reshape(C, S, N))
    lam = cfg.lam
    for _ in range(rounds):
        x_hat = np.zeros((C * S, N), complex)
        x_hat[:, cfg.data_idx] = qpsk_map(cw.reshape(C * S, cfg.bits_per_symbol))
        if cfg.pilot_tones:
            x_hat[:, list(cfg.pilot_tones)] = pilot_values
        e_tilde = np.fft.ifft(flat - lam * x_hat, norm="ortho")
        e_hat, state = estimate_nulltone(z, F_I, settings, sigma2=s2, a=a0 + 0.5,
                                         b=b0 + np.abs(e_tilde) ** 2 / 2)
        info, cw, _ = decode_symbols(cfg, code, yb, e_hat.reshape(C, S, N))
    e_hat = e_hat.reshape(C, S, N)
    if single:
        return e_hat[0], info[0], state
    return e_hat, info, state
