"""Gaussian posterior, marginal likelihood and the batched EM engine."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

import numba
import scipy.fft
import scipy.sparse

from ..numerics import SingularMatrixError, dft_matrix, hermitian_logdet, hermitian_solve


@dataclass(frozen=True)
class SblSettings:
    """Stopping and pruning rules for the EM loops.

    With ``learn_sigma2`` off the background power passed to an estimator is
    held fixed; otherwise it is the starting value of the EM update.
    """

    max_iters: int = 200
    tol: float = 1e-4
    gamma_floor: float = 1e-8
    learn_sigma2: bool = False
    seq_threshold: float = 1e-6
    seq_max_iters: int = 2000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("convergence tolerance must be positive")
        if self.gamma_floor < 0:
            raise ValueError("gamma floor must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def to_dict(self) -> dict:
        return {"max_iters": self.max_iters, "tol": self.tol, "gamma_floor": self.gamma_floor,
                "learn_sigma2": self.learn_sigma2, "seq_threshold": self.seq_threshold,
                "seq_max_iters": self.seq_max_iters}

    @classmethod
    def from_dict(cls, d: dict) -> "SblSettings":
        return cls(**d)


@dataclass
class SblState:
    """Hyperparameters and posterior moments at termination.

    Arrays carry a leading batch axis when the estimator was called on a
    batch. ``sigma_diag`` is the diagonal of the posterior covariance; the
    full matrix is available from :meth:`covariance`.
    """

    gamma: np.ndarray
    sigma2: np.ndarray
    mu: np.ndarray
    sigma_diag: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    loglik: list = field(default_factory=list)
    phi: np.ndarray | None = field(default=None, repr=False)
    empty: np.ndarray | None = None

    def covariance(self, index: int | None = None) -> np.ndarray:
        if self.phi is None:
            raise ValueError("basis not recorded for this state")
        g = self.gamma if index is None else self.gamma[index]
        s = self.sigma2 if index is None else self.sigma2[index]
        _, cov = sbl_posterior(self.phi, np.zeros(self.phi.shape[0], complex), g, float(s))
        return cov


def sbl_posterior(phi, t, gamma, sigma2, form: str = "woodbury"):
    """Posterior mean and covariance of w in t = phi w + v.

    ``form="direct"`` inverts sigma^-2 phi^* phi + Gamma^-1 and requires every
    gamma to be positive. ``form="woodbury"`` works through the M x M
    observation covariance and handles pruned (zero) gammas exactly.
    Returns ``(mu, Sigma)``; a fully pruned prior gives zeros.
    """
    phi = np.asarray(phi)
    t = np.asarray(t)
    gamma = np.asarray(gamma, dtype=float)
    n = phi.shape[1]
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if form == "direct":
        if np.any(gamma <= 0):
            raise ValueError("direct form needs strictly positive gamma")
        prec = phi.conj().T @ phi / sigma2 + np.diag(1.0 / gamma)
        cov = hermitian_solve(prec, np.eye(n))
        cov = 0.5 * (cov + cov.conj().T)
        mu = cov @ (phi.conj().T @ t) / sigma2
        return mu, cov
    if form != "woodbury":
        raise ValueError(f"unknown posterior form {form!r}")
    if not np.any(gamma > 0):
        return np.zeros(n, complex), np.zeros((n, n), complex)
    pg = phi * gamma
    c = pg @ phi.conj().T + sigma2 * np.eye(phi.shape[0])
    sol = hermitian_solve(c, np.column_stack([t, pg]))
    mu = gamma * (phi.conj().T @ sol[:, 0])
    cov = np.diag(gamma).astype(complex) - pg.conj().T @ sol[:, 1:]
    cov = 0.5 * (cov + cov.conj().T)
    return mu, cov


def log_marginal(phi, t, gamma, sigma2, mean=None) -> float:
    """log CN(t; mean, phi Gamma phi^* + sigma2 I)."""
    phi = np.asarray(phi)
    t = np.asarray(t) if mean is None else np.asarray(t) - np.asarray(mean)
    m = phi.shape[0]
    c = (phi * np.asarray(gamma)) @ phi.conj().T + sigma2 * np.eye(m)
    quad = np.real(np.vdot(t, hermitian_solve(c, t)))
    return float(-m * np.log(np.pi) - hermitian_logdet(c) - quad)


def _posterior_batch(phi, t, gamma, sigma2):
    """Batched Woodbury posterior: mean, covariance diagonal, log-likelihood."""
    m = phi.shape[0]
    pg = phi[None, :, :] * gamma[:, None, :]
    c = pg @ phi.conj().T
    c[:, np.arange(m), np.arange(m)] += sigma2[:, None]
    chol = np.linalg.cholesky(c)
    w = np.linalg.solve(chol, np.concatenate([t[:, :, None], np.broadcast_to(phi, (len(t),) + phi.shape)], axis=2))
    wt, wp = w[:, :, 0], w[:, :, 1:]
    # phi^* C^-1 t and diag(phi^* C^-1 phi) through the Cholesky factor
    proj = np.einsum("bmn,bm->bn", wp.conj(), wt)
    dq = np.einsum("bmn,bmn->bn", wp.conj(), wp).real
    mu = gamma * proj
    sdiag = np.maximum(gamma - gamma**2 * dq, 0.0)
    logdet = 2.0 * np.sum(np.log(np.abs(np.diagonal(chol, axis1=1, axis2=2))), axis=1)
    quad = np.sum(np.abs(wt) ** 2, axis=1)
    ll = -m * np.log(np.pi) - logdet - quad
    return mu, sdiag, ll


class DftRows:
    """Basis made of selected rows of the unitary N-point DFT.

    Behaves as the dense (M, N) matrix for the EM engine but lets the
    posterior use FFTs: ``Phi Gamma Phi^*`` is indexed by tone differences.
    """

    def __init__(self, rows, n: int):
        self.rows = np.asarray(rows, dtype=np.intp)
        self.n = int(n)
        m = len(self.rows)
        self.shape = (m, self.n)
        diff = (self.rows[:, None] - self.rows[None, :]) % self.n
        self.diff = diff
        # rows that form one cyclic run of tones make C Toeplitz in run order
        self.order = None
        if m < self.n:
            srt = np.argsort(self.rows)
            rs = self.rows[srt]
            gaps = np.flatnonzero(np.diff(np.concatenate([rs, [rs[0] + self.n]])) != 1)
            if len(gaps) == 1:
                start = (gaps[0] + 1) % m
                self.order = srt[np.roll(np.arange(m), -start)]
        self.bins = scipy.sparse.csr_matrix(
            (np.ones(m * m), (diff.ravel(), np.arange(m * m))), shape=(self.n, m * m))

    def dense(self) -> np.ndarray:
        return dft_matrix(self.n)[self.rows]

    def __array__(self, dtype=None, copy=None):
        d = self.dense()
        return d if dtype is None else d.astype(dtype)

    def apply(self, v):
        """Phi @ v for rows of v."""
        return scipy.fft.fft(v, axis=-1, norm="ortho")[..., self.rows]

    def adjoint(self, u):
        """Phi^* @ u for rows of u."""
        full = np.zeros(u.shape[:-1] + (self.n,), complex)
        full[..., self.rows] = u
        return scipy.fft.ifft(full, axis=-1, norm="ortho")


@numba.njit(cache=True)
def _levinson_kernel(r, a, logdet):
    B, m = r.shape
    tmp = np.empty(m, np.complex128)
    for b in range(B):
        a[b, 0] = 1.0
        p = r[b, 0].real
        ld = np.log(p)
        for k in range(1, m):
            d = 0j
            for i in range(k):
                d += a[b, i] * r[b, k - i]
            kap = -d / p
            for i in range(1, k + 1):
                tmp[i] = a[b, i] + kap * np.conj(a[b, k - i])
            for i in range(1, k + 1):
                a[b, i] = tmp[i]
            p = p * (1.0 - (kap.real * kap.real + kap.imag * kap.imag))
            ld += np.log(p)
        for i in range(m):
            a[b, i] /= p
        logdet[b] = ld


def _levinson(r):
    """Hermitian Toeplitz T with first column r (batched over rows of r).

    Returns the first column of T^-1 and log det T (Levinson-Durbin).
    """
    r = np.ascontiguousarray(r, dtype=complex)
    a = np.zeros(r.shape, complex)
    logdet = np.empty(r.shape[0])
    _levinson_kernel(r, a, logdet)
    return a, logdet


def _posterior_toeplitz(basis: DftRows, t, gamma, sigma2):
    """Posterior for cyclically contiguous rows, where C is Hermitian Toeplitz.

    C^-1 follows from its first column (Gohberg-Semencul):
    C^-1 = (L(x) L(x)^H - L(y) L(y)^H) / x_0, y = [0, conj(x_{m-1}), ..., conj(x_1)].
    Products with lower-triangular Toeplitz L(v) are length-2m FFT convolutions.
    """
    m, n = basis.shape
    nfft = 2 * m
    ghat = scipy.fft.fft(gamma, axis=1) / n
    r = ghat[:, :m].copy()
    r[:, 0] = r[:, 0].real + sigma2
    x, logdet = _levinson(r)
    x0 = x[:, :1].real
    y = np.zeros_like(x)
    y[:, 1:] = np.conj(x[:, :0:-1])
    tt = t[:, basis.order]
    # shared spectra of x, y, t and of the weighted x, y used by the diagonal sums
    wgt = np.arange(m, 0, -1)
    spectra = scipy.fft.fft(np.stack([x, y, tt, x * wgt, y * wgt]), nfft, axis=2)
    X, Y, T, XW, YW = spectra
    # L(v)^H t is the correlation of t with v: index i of ifft(conj(V) T)
    h = scipy.fft.ifft(np.stack([np.conj(X) * T, np.conj(Y) * T]), axis=2)[:, :, :m]
    H = scipy.fft.fft(h, nfft, axis=2)
    u = scipy.fft.ifft(X * H[0] - Y * H[1], axis=1)[:, :m] / x0
    # diagonal sums of L(v) L(v)^H at offset d >= 0:
    # sum_j (m - j - d) v_{j+d} conj(v_j) = corr(v, w v)_d - d corr(v, v)_d
    c = scipy.fft.ifft(np.stack([X * np.conj(XW) - Y * np.conj(YW),
                                 X * np.conj(X) - Y * np.conj(Y)]), axis=2)[:, :, :m]
    wpos = (c[0] - np.arange(m) * c[1]) / x0
    w = np.zeros((len(t), n), complex)
    w[:, :m] = wpos
    w[:, n - m + 1 :] += np.conj(wpos[:, :0:-1])
    dq = scipy.fft.ifft(w, axis=1).real
    uu = np.zeros_like(u)
    uu[:, basis.order] = u
    proj = basis.adjoint(uu)
    mu = gamma * proj
    sdiag = np.maximum(gamma - gamma**2 * dq, 0.0)
    quad = np.real(np.sum(np.conj(tt) * u, axis=1))
    ll = -m * np.log(np.pi) - logdet - quad
    return mu, sdiag, ll


def _posterior_dft(basis: DftRows, t, gamma, sigma2):
    if basis.order is not None:
        return _posterior_toeplitz(basis, t, gamma, sigma2)
    m, n = basis.shape
    ghat = scipy.fft.fft(gamma, axis=1) / n
    c = ghat[:, basis.diff]
    c[:, np.arange(m), np.arange(m)] += sigma2[:, None]
    chol = np.linalg.cholesky(c)
    linv = np.linalg.inv(chol)
    cinv = np.conj(np.swapaxes(linv, 1, 2)) @ linv
    u = np.einsum("bjk,bk->bj", cinv, t)
    proj = basis.adjoint(u)
    w = (basis.bins @ cinv.reshape(len(t), m * m).T).T
    dq = scipy.fft.ifft(w, axis=1).real
    mu = gamma * proj
    sdiag = np.maximum(gamma - gamma**2 * dq, 0.0)
    logdet = 2.0 * np.sum(np.log(np.abs(np.diagonal(chol, axis1=1, axis2=2))), axis=1)
    quad = np.real(np.sum(t.conj() * u, axis=1))
    ll = -m * np.log(np.pi) - logdet - quad
    return mu, sdiag, ll


def _posterior_unitary(w, gamma, sigma2):
    """Posterior when phi is the full unitary DFT; ``w = phi^* t``.

    phi Gamma phi^* + sigma2 I = F (Gamma + sigma2 I) F^*, so the posterior
    factorises over samples.
    """
    d = gamma + sigma2[:, None]
    mu = gamma / d * w
    sdiag = gamma * sigma2[:, None] / d
    n = w.shape[1]
    ll = -n * np.log(np.pi) - np.sum(np.log(d), axis=1) - np.sum(np.abs(w) ** 2 / d, axis=1)
    return mu, sdiag, ll


def run_em(phi, t, sigma2, settings: SblSettings, *, a=None, b=None, free_rows=None,
           unitary: bool = False, gamma0=None, mean0=None, project=None, record: bool = False):
    """EM over a batch of observations sharing one basis.

    Parameters
    ----------
    phi : (M, N) basis.
    t : (B, M) observations.
    sigma2 : (B,) background power (fixed or initial).
    a, b : (B, N) Gamma hyperprior on the precisions; None means a = b = 0.
    free_rows : indices of rows of ``t`` whose mean is a free hyperparameter
        re-estimated as t_rows - (phi mu)_rows each iteration (all-tone mode).
    unitary : phi is the full unitary DFT; use the factorised posterior.
    project : optional map applied to each free-mean update, restricting the
        M-step to a feasible set (e.g. constellation points).
    gamma0 : (B, N) initial gamma; default ||t_fixed||^2 / M_fixed uniformly.

    Returns ``(mu, state, mean)``, where ``mean`` is the final estimate of
    the free-row means (zeros elsewhere).
    """
    structured = isinstance(phi, DftRows)
    if structured and unitary:
        phi = phi.dense()
        structured = False
    basis = phi if structured else None
    phi = phi.dense() if structured else np.asarray(phi)
    t = np.atleast_2d(np.asarray(t, dtype=complex))
    B, m = t.shape
    n = phi.shape[1]
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (B,)).copy()
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    fixed = np.ones(m, bool)
    if free_rows is not None and len(free_rows):
        free_rows = np.asarray(free_rows, dtype=np.intp)
        fixed[free_rows] = False
    else:
        free_rows = None
    mean = np.zeros_like(t)
    if free_rows is not None:
        # first iterate of the free means: mu_e = 0, so mean = t on those rows
        m0 = t[:, free_rows] if mean0 is None else np.asarray(mean0)
        mean[:, free_rows] = m0 if project is None or mean0 is not None else project(m0)
    if gamma0 is None:
        scale = np.sum(np.abs(t[:, fixed]) ** 2, axis=1) / max(int(fixed.sum()), 1)
        gamma = np.repeat(scale[:, None], n, axis=1)
    else:
        gamma = np.broadcast_to(np.asarray(gamma0, float), (B, n)).copy()
    num_b = 0.0 if b is None else 2.0 * np.broadcast_to(np.asarray(b, float), (B, n))
    den_a = 1.0 if a is None else 1.0 + 2.0 * np.broadcast_to(np.asarray(a, float), (B, n))
    _prune(gamma, settings.gamma_floor)

    mu = np.zeros((B, n), complex)
    sdiag = np.zeros((B, n))
    iters = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    history = [[] for _ in range(B)] if record else []
    live = np.arange(B)
    phi_h = phi.conj().T

    def posterior(tt, g, s2):
        if unitary:
            return _posterior_unitary(tt @ phi_h.T, g, s2)
        if structured:
            return _posterior_dft(basis, tt, g, s2)
        return _posterior_batch(phi, tt, g, s2)

    for k in range(settings.max_iters):
        if live.size == 0:
            break
        g = gamma[live]
        s2 = sigma2[live]
        resid_t = t[live] - mean[live]
        mu_l, sd_l, ll = posterior(resid_t, g, s2)
        mu[live], sdiag[live] = mu_l, sd_l
        if record:
            for j, i in enumerate(live):
                history[i].append(float(ll[j]))
        fit = mu_l @ phi.T
        nb = num_b if np.isscalar(num_b) else num_b[live]
        da = den_a if np.isscalar(den_a) else den_a[live]
        g_new = (np.abs(mu_l) ** 2 + sd_l + nb) / da
        if settings.learn_sigma2:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(g > 0, sd_l / np.where(g > 0, g, 1.0), 1.0)
            # (sigma2)^(k) multiplies the trace term, as in the printed update
            s2_new = (np.sum(np.abs(resid_t - fit) ** 2, axis=1)
                      + s2 * np.sum(1.0 - ratio, axis=1)) / m
            sigma2[live] = np.maximum(s2_new, 1e-300)
        if free_rows is not None:
            upd = t[np.ix_(live, free_rows)] - fit[:, free_rows]
            mean[np.ix_(live, free_rows)] = upd if project is None else project(upd)
        _prune(g_new, settings.gamma_floor)
        # per-coordinate change relative to gamma_i + sigma2; drift far below
        # the noise floor does not hold up convergence
        delta = np.max(np.abs(g_new - g) / (np.maximum(g, g_new) + s2[:, None]), axis=1)
        gamma[live] = g_new
        iters[live] = k + 1
        done = (delta < settings.tol) | ~np.any(g_new > 0, axis=1)
        converged[live[done]] = True
        live = live[~done]

    # posterior at the final hyperparameters
    resid_t = t - mean
    mu, sdiag, ll = posterior(resid_t, gamma, sigma2)
    if free_rows is not None:
        upd = t[:, free_rows] - (mu @ phi.T)[:, free_rows]
        mean[:, free_rows] = upd if project is None else project(upd)
    if record:
        for i in range(B):
            history[i].append(float(ll[i]))
    state = SblState(gamma=gamma, sigma2=sigma2, mu=mu, sigma_diag=sdiag, iterations=iters,
                     converged=converged, loglik=history, phi=phi,
                     empty=~np.any(gamma > 0, axis=1))
    return mu, state, mean


def _prune(gamma, floor):
    if floor > 0:
        top = np.max(gamma, axis=1, keepdims=True)
        gamma[gamma < floor * top] = 0.0


def significant(gamma, sigma2, n_obs, n, factor: float = 10.0) -> np.ndarray:
    """Mask of coordinates whose prior variance is clearly above noise level.

    A coordinate fitted to pure noise has gamma of order sigma2 * N / M; the
    mask keeps those ``factor`` times larger.
    """
    return np.asarray(gamma) > factor * np.asarray(sigma2)[..., None] * n / n_obs
