"""Sequential (add / delete / re-estimate) marginal-likelihood SBL.

Complex-valued version of the fast sparse Bayesian learning scheme: each
step touches one basis column, chosen as the action with the largest gain
in log marginal likelihood.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import SblSettings

_DEFAULT = SblSettings()


@dataclass
class SequentialResult:
    e_hat: np.ndarray
    support: np.ndarray
    alpha: np.ndarray
    sigma2: float
    iterations: int
    converged: bool


def _tri_solve(r, b, upper=False):
    return scipy.linalg.solve_triangular(r, b, lower=not upper, check_finite=False)


def _ell(alpha, s, q2):
    """Per-basis log-likelihood contribution for precision alpha."""
    return np.log(alpha) - np.log(alpha + s) + q2 / (alpha + s)


def estimate_sequential(z, F_I, settings: SblSettings = _DEFAULT, *, sigma2=1.0,
                        gram=None) -> SequentialResult:
    """Sparse estimate of e from z = F_I e + g by sequential basis selection.

    ``gram`` may carry a precomputed F_I^* F_I. With ``settings.learn_sigma2``
    the background power is re-estimated after every step.
    """
    z = np.asarray(z, dtype=complex)
    phi = np.asarray(F_I)
    m, n = phi.shape
    G = phi.conj().T @ phi if gram is None else gram
    d = np.real(np.diag(G))
    pt = phi.conj().T @ z
    s2 = float(sigma2)
    s2_floor = 1e-10 * max(float(np.real(np.vdot(z, z))) / m, 1e-300)
    alpha = np.full(n, np.inf)

    proj = np.abs(pt) ** 2 / d
    i0 = int(np.argmax(proj))
    if proj[i0] <= s2:
        return SequentialResult(np.zeros(n, complex), np.array([], dtype=np.intp), alpha, s2, 0, True)
    alpha[i0] = d[i0] / (proj[i0] - s2)
    active = [i0]

    converged = False
    it = 0
    for it in range(1, settings.seq_max_iters + 1):
        beta = 1.0 / s2
        K = np.asarray(active, dtype=np.intp)
        act = np.zeros(n, bool)
        act[K] = True
        S = beta * d
        Q = beta * pt
        s = S.copy()
        q = Q.copy()
        if K.size:
            # H = G_KK + A / beta; posterior Sigma = H^-1 / beta, mu = H^-1 Phi_K^* z
            R = np.linalg.cholesky(G[np.ix_(K, K)] + np.diag(alpha[K] / beta))
            Gk = G[K, :]
            V = _tri_solve(R, Gk)
            mu = _tri_solve(R.conj().T, _tri_solve(R, pt[K]), upper=True)
            Rinv = _tri_solve(R, np.eye(K.size))
            sig_diag = np.sum(np.abs(Rinv) ** 2, axis=0) / beta
            S = beta * (d - np.sum(np.abs(V) ** 2, axis=0))
            Q = beta * (pt - Gk.conj().T @ mu)
            s, q = S.copy(), Q.copy()
            # in-model bases: s = 1/Sigma_mm - alpha, q = mu / Sigma_mm
            s[K] = 1.0 / sig_diag - alpha[K]
            q[K] = mu / sig_diag
        q2 = np.abs(q) ** 2
        theta = q2 - s

        gain = np.full(n, -np.inf)
        add = (theta > 0) & ~act
        if len(active) >= m - 1:
            # more bases than observations cannot be identified
            add[:] = False
        rec = (theta > 0) & act
        dele = (theta <= 0) & act
        new_alpha = np.where(theta > 0, s**2 / np.where(theta > 0, theta, 1.0), np.inf)
        gain[add] = (theta[add] / s[add]) + np.log(s[add] / q2[add])
        gain[rec] = _ell(new_alpha[rec], s[rec], q2[rec]) - _ell(alpha[rec], s[rec], q2[rec])
        gain[dele] = -_ell(alpha[dele], s[dele], q2[dele])

        dlog = np.abs(np.log(new_alpha[rec]) - np.log(alpha[rec]))
        if not add.any() and not dele.any() and (dlog.size == 0 or dlog.max() < settings.seq_threshold):
            converged = True
            break
        j = int(np.argmax(gain))
        if add[j]:
            alpha[j] = new_alpha[j]
            active.append(j)
        elif rec[j]:
            alpha[j] = new_alpha[j]
        else:
            alpha[j] = np.inf
            active.remove(j)

        if settings.learn_sigma2 and active:
            K = np.asarray(active, dtype=np.intp)
            H = G[np.ix_(K, K)] + np.diag(alpha[K] * s2)
            mu = np.linalg.solve(H, pt[K])
            cov_diag = np.real(np.diag(np.linalg.inv(H))) * s2
            resid = z - phi[:, K] @ mu
            dof = m - np.sum(1.0 - alpha[K] * cov_diag)
            if dof > 0:
                s2 = max(float(np.real(np.vdot(resid, resid)) / dof), s2_floor)

    K = np.asarray(sorted(active), dtype=np.intp)
    e_hat = np.zeros(n, complex)
    if K.size:
        e_hat[K] = np.linalg.solve(G[np.ix_(K, K)] + np.diag(alpha[K] * s2), pt[K])
    return SequentialResult(e_hat, K, alpha, s2, it, converged)
