"""Residual iterative conditional fitting and the Gaussian log-likelihood."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import Admg, is_ancestral, is_bow_free
from .simulate import Dataset, ScmParams, SimulationError, implied_covariance

log = logging.getLogger(__name__)

PD_JITTER = 1e-8


class RicfError(ValueError):
    pass


def gaussian_loglik(p: ScmParams, sample_cov: np.ndarray, n: int) -> float:
    """Log-likelihood of ``n`` centred rows with covariance ``sample_cov`` under ``p``."""
    try:
        Sigma = implied_covariance(p)
    except SimulationError as exc:
        raise RicfError(str(exc)) from exc
    sign, logdet = np.linalg.slogdet(Sigma)
    if sign <= 0:
        raise RicfError("implied covariance is not positive definite")
    d = Sigma.shape[0]
    trace = np.trace(np.linalg.solve(Sigma, sample_cov))
    return float(-0.5 * n * (d * np.log(2 * np.pi) + logdet + trace))


def _ensure_pd(beta):
    w = np.linalg.eigvalsh(beta)
    if w[0] > 0:
        return beta
    shift = -w[0] + PD_JITTER
    log.debug("beta lost positive definiteness; adding %.3g to the diagonal", shift)
    return beta + shift * np.eye(beta.shape[0])


@dataclass
class RicfResult:
    params: ScmParams
    converged: bool
    iterations: int
    loglik_history: list = field(default_factory=list)


def ricf_fit(data: Dataset, g: Admg, tol: float = 1e-6, max_iter: int = 100,
             record_loglik: bool = False) -> RicfResult:
    """Fit ``(delta, beta)`` supported on ``g`` by maximum likelihood.

    Each sweep visits nodes in ascending order. Node ``i`` is regressed on
    its parents and on pseudo-variables built from the current residuals
    of its spouses; the regression coefficients update ``delta[:, i]`` and
    ``beta[i, spouses]``, and the residual variance updates ``beta[i, i]``.
    Iteration stops when no parameter moves by more than ``tol``.
    """
    if g.d != data.d:
        raise RicfError("graph and data dimensions differ")
    if not is_bow_free(g):
        raise RicfError("RICF needs a bow-free graph")
    if not is_ancestral(g):
        log.debug("fitting a non-ancestral bow-free graph; convergence is not guaranteed")
    S = data.covariance()
    n = data.n
    d = data.d
    parents = [np.nonzero(g.D[:, i])[0] for i in range(d)]
    spouses = [np.nonzero(g.B[i])[0] for i in range(d)]
    delta = np.zeros((d, d))
    beta = np.diag(np.diag(S).copy())
    history = []
    if record_loglik:
        history.append(gaussian_loglik(ScmParams(delta, beta), S, n))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        old_delta, old_beta = delta.copy(), beta.copy()
        for i in range(d):
            pa, sp = parents[i], spouses[i]
            if len(pa) == 0 and len(sp) == 0:
                beta[i, i] = S[i, i]
                continue
            others = np.delete(np.arange(d), i)
            cols = []
            if len(pa):
                E = np.zeros((d, len(pa)))
                E[pa, np.arange(len(pa))] = 1.0
                cols.append(E)
            if len(sp):
                # pseudo-variables: residuals of the others times Omega_{-i,-i}^{-1}, spouse columns
                A = np.linalg.inv(beta[np.ix_(others, others)])
                resid_map = (np.eye(d) - delta)[:, others]
                sp_pos = np.searchsorted(others, sp)
                cols.append(resid_map @ A[:, sp_pos])
            C = np.hstack(cols)
            gram = C.T @ S @ C
            cross = C.T @ S[:, i]
            try:
                coef = np.linalg.solve(gram, cross)
            except np.linalg.LinAlgError as exc:
                raise RicfError(f"singular regression system at node {i}") from exc
            resid_var = S[i, i] - coef @ cross
            delta[:, i] = 0.0
            delta[pa, i] = coef[: len(pa)]
            if len(sp):
                omega = coef[len(pa):]
                beta[i, sp] = omega
                beta[sp, i] = omega
                beta[i, i] = resid_var + omega @ A[np.ix_(sp_pos, sp_pos)] @ omega
            else:
                beta[i, i] = resid_var
        beta = _ensure_pd(beta)
        if record_loglik:
            history.append(gaussian_loglik(ScmParams(delta, beta), S, n))
        change = max(np.abs(delta - old_delta).max(), np.abs(beta - old_beta).max())
        if change < tol:
            converged = True
            break
    return RicfResult(ScmParams(delta, beta), converged, it, history)
