"""Differentiable ancestral ADMG search with an augmented Lagrangian.

The smooth score is a least-squares loss in which every node is regressed
on all variables (coefficients ``delta``) and on RICF pseudo-variables
(coefficients ``beta``). Pseudo-variables are refreshed before every inner
minimization; the ancestrality penalty ``h`` enters through the usual
``alpha * h + rho / 2 * h**2`` terms.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

from .graph import Admg, is_ancestral
from .simulate import Dataset, ScmParams

log = logging.getLogger(__name__)


class AbicDivergenceError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class AbicConfig:
    lam: float = 0.05
    omega: float = 0.05
    alm_steps: int = 20
    inner_steps: int = 10
    rho0: float = 1.0
    rho_growth: float = 10.0
    alpha0: float = 0.0
    inner_tol: float = 1e-6
    inner_maxiter: int = 100
    h_tol: float = 1e-8
    rho_max: float = 1e16
    step_tol: float = 1e-4
    standardize: bool = False
    resolve_on_stall: bool = True
    omega_beta: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.omega < 0 or (self.omega_beta is not None and self.omega_beta < 0):
            raise ValueError("omega must be non-negative")
        if self.rho_growth <= 1:
            raise ValueError("rho_growth must exceed 1")
        if self.alm_steps < 1 or self.inner_steps < 1 or self.inner_maxiter < 1:
            raise ValueError("step counts must be at least 1")
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")


@dataclass
class AlmState:
    alpha: float = 0.0
    rho: float = 1.0
    t: int = 1
    h_value: float = float("inf")


def _offdiag(a):
    out = np.array(a, dtype=float)
    np.fill_diagonal(out, 0.0)
    return out


def h_admg(delta: np.ndarray, beta: np.ndarray) -> float:
    """``tr(exp(W_D)) - d + sum(exp(W_D) * W_B)`` with ``W_D = delta**2``, ``W_B = offdiag(beta)**2``."""
    WD = np.asarray(delta, dtype=float) ** 2
    WB = _offdiag(beta) ** 2
    E = sla.expm(WD)
    return float(np.trace(E) - WD.shape[0] + np.sum(E * WB))


def _h_and_grad(delta, beta):
    delta = np.asarray(delta, dtype=float)
    Boff = _offdiag(beta)
    WD = delta ** 2
    WB = Boff ** 2
    # adjoint of the Frechet derivative: d/dW <C, expm(W)> = L(W^T, C)
    Et, L = sla.expm_frechet(WD.T, WB, compute_expm=True, check_finite=False)
    E = Et.T
    h = float(np.trace(E) - WD.shape[0] + np.sum(E * WB))
    g_delta = (Et + L) * 2.0 * delta
    g_beta = (E + Et) * Boff
    return h, g_delta, g_beta


def h_admg_gradient(delta: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of :func:`h_admg`.

    The ``beta`` gradient is taken over symmetric matrices: for a symmetric
    direction ``V`` the directional derivative is ``sum(g_beta * V)``.
    """
    _, gd, gb = _h_and_grad(delta, beta)
    return gd, gb


class PseudoProblem:
    """Least-squares loss with pseudo-variables frozen at ``(delta0, beta0)``.

    For node ``i`` the pseudo-variables are the residuals ``V (I - delta0)``
    of all other nodes times ``inv(beta0[-i, -i])``. Everything is expressed
    through the sample covariance ``S``.
    """

    def __init__(self, S: np.ndarray, delta0: np.ndarray, beta0: np.ndarray):
        d = S.shape[0]
        self.S = S
        self.d = d
        P = np.linalg.inv(beta0)
        # inv(beta0[-i,-i]) embedded with zero row/column i, stacked over i
        pd = np.diag(P)
        A = P[None, :, :] - P.T[:, :, None] * P[:, None, :] / pd[:, None, None]
        idx = np.arange(d)
        A[idx, idx, :] = 0.0
        A[idx, :, idx] = 0.0
        self.A = A
        self.M = np.einsum("kl,ilj->ikj", np.eye(d) - delta0, A)

    def residual_map(self, delta, beta):
        Q = np.einsum("ikj,ji->ki", self.M, _offdiag(beta))
        return np.eye(self.d) - delta - Q

    def loss_and_grad(self, delta, beta):
        W = self.residual_map(delta, beta)
        SW = self.S @ W
        loss = 0.5 * float(np.sum(W * SW))
        g_delta = -SW
        np.fill_diagonal(g_delta, 0.0)
        G = -np.einsum("ikj,ki->ji", self.M, SW)
        g_beta = 0.5 * (G + G.T)
        np.fill_diagonal(g_beta, 0.0)
        return loss, g_delta, g_beta

    def refresh_diagonal(self, delta, beta):
        """RICF variance update: residual variance plus the explained spouse part."""
        W = self.residual_map(delta, beta)
        resid = np.einsum("ki,kl,li->i", W, self.S, W)
        Boff = _offdiag(beta)
        quad = np.einsum("ji,ijk,ki->i", Boff, self.A, Boff)
        out = Boff.copy()
        out[np.diag_indices(self.d)] = resid + quad
        return out


def objective(delta, beta, problem: PseudoProblem, alm: AlmState, cfg: AbicConfig):
    """Augmented-Lagrangian objective, its value and (sub)gradients.

    The L1 subgradient is taken as 0 at exact zeros. Gradients w.r.t.
    ``beta`` are symmetric with zero diagonal.
    """
    delta = np.asarray(delta, dtype=float)
    beta = np.asarray(beta, dtype=float)
    Boff = _offdiag(beta)
    with np.errstate(over="ignore", invalid="ignore"):
        loss, gd, gb = problem.loss_and_grad(delta, beta)
        _check_finite("least squares", loss)
        l1 = np.abs(_offdiag(delta)).sum() + np.abs(Boff).sum()
        _check_finite("l1", l1)
        WD = delta ** 2
        if not np.all(np.isfinite(WD)) or not np.all(np.isfinite(Boff ** 2)):
            raise AbicDivergenceError("non-finite h term")
        try:
            h, hgd, hgb = _h_and_grad(delta, beta)
        except (ValueError, OverflowError):
            raise AbicDivergenceError("non-finite h term") from None
        _check_finite("h", h)
    value = loss + alm.alpha * h + 0.5 * alm.rho * h * h + cfg.lam * l1
    coef = alm.alpha + alm.rho * h
    gd = gd + coef * hgd + cfg.lam * np.sign(_offdiag(delta))
    gb = gb + coef * hgb + cfg.lam * np.sign(Boff)
    np.fill_diagonal(gd, 0.0)
    np.fill_diagonal(gb, 0.0)
    return float(value), gd, gb


def _check_finite(name, v):
    if not np.isfinite(v):
        raise AbicDivergenceError(f"non-finite {name} term")


_BIG = 1e300


class _SplitProblem:
    """Objective over nonnegative split variables, as fed to L-BFGS-B."""

    def __init__(self, problem, alm, cfg, beta_diag, allowed):
        d = problem.d
        self.problem, self.alm, self.cfg = problem, alm, cfg
        self.d = d
        self.beta_diag = beta_diag
        self.iu = np.triu_indices(d, 1)
        self.nd = d * d
        self.nb = len(self.iu[0])
        dmask = ~np.eye(d, dtype=bool)
        bmask = np.ones(self.nb, dtype=bool)
        if allowed is not None:
            dmask &= allowed
            bmask &= allowed[self.iu]
        ub_d = np.where(dmask.ravel(), np.inf, 0.0)
        ub_b = np.where(bmask, np.inf, 0.0)
        ub = np.concatenate([ub_d, ub_d, ub_b, ub_b])
        self.bounds = sopt.Bounds(np.zeros_like(ub), ub)

    def pack(self, delta, beta):
        b = beta[self.iu]
        dv = delta.ravel()
        return np.concatenate([np.maximum(dv, 0), np.maximum(-dv, 0), np.maximum(b, 0), np.maximum(-b, 0)])

    def unpack(self, x):
        nd, nb = self.nd, self.nb
        delta = (x[:nd] - x[nd:2 * nd]).reshape(self.d, self.d)
        b = x[2 * nd:2 * nd + nb] - x[2 * nd + nb:]
        beta = np.zeros((self.d, self.d))
        beta[self.iu] = b
        beta = beta + beta.T
        beta[np.diag_indices(self.d)] = self.beta_diag
        return delta, beta

    def __call__(self, x):
        delta, beta = self.unpack(x)
        loss, gd, gb = self.problem.loss_and_grad(delta, beta)
        with np.errstate(over="ignore", invalid="ignore"):
            h, hgd, hgb = _h_and_grad(delta, beta)
            alm, lam = self.alm, self.cfg.lam
            nd = self.nd
            l1 = x[:2 * nd].sum() + 2.0 * x[2 * nd:].sum()
            f = loss + alm.alpha * h + 0.5 * alm.rho * h * h + lam * l1
            coef = alm.alpha + alm.rho * h
            gd = (gd + coef * hgd).ravel()
            gbp = 2.0 * (gb + coef * hgb)[self.iu]
            grad = np.concatenate([gd + lam, -gd + lam, gbp + 2 * lam, -gbp + 2 * lam])
        if not (np.isfinite(f) and f < _BIG and np.all(np.isfinite(grad))):
            # overflowing trial point of the line search: reject it
            return _BIG, np.zeros_like(x)
        return f, grad


def threshold_to_admg(p: ScmParams, omega: float, omega_beta: float | None = None) -> Admg:
    """Keep coefficients with magnitude above the threshold."""
    if omega < 0:
        raise ValueError("omega must be non-negative")
    ob = omega if omega_beta is None else omega_beta
    D = np.abs(p.delta) > omega
    np.fill_diagonal(D, False)
    Bm = np.abs(_offdiag(p.beta)) > ob
    Bm = Bm | Bm.T
    return Admg(D, Bm)


def ancestral_threshold(p: ScmParams, omega: float, omega_beta: float | None = None) -> tuple[Admg, float]:
    """Threshold, raising ``omega`` to the smallest value that yields an ancestral graph.

    Dropping edges never creates a violation, so ancestrality is monotone in
    the threshold and a bisection over the candidate magnitudes suffices.
    """
    g = threshold_to_admg(p, omega, omega_beta)
    if is_ancestral(g):
        return g, omega
    scale = 1.0 if omega_beta is None or omega == 0 else omega_beta / omega
    mags = np.concatenate([np.abs(_offdiag(p.delta)).ravel(), np.abs(_offdiag(p.beta)).ravel() / (scale or 1.0)])
    cands = np.unique(mags[mags > omega])
    lo, hi = 0, len(cands) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if is_ancestral(threshold_to_admg(p, cands[mid], cands[mid] * scale if omega_beta is not None else None)):
            hi = mid
        else:
            lo = mid + 1
    w = float(cands[lo]) if len(cands) else omega
    return threshold_to_admg(p, w, w * scale if omega_beta is not None else None), w


# (current, proposed, (grad_delta, grad_beta), t_outer, t_inner) -> accepted params
Guide = Callable[[ScmParams, ScmParams, tuple, int, int], ScmParams]


@dataclass
class AbicResult:
    params: ScmParams
    graph: Admg
    trace: list = field(default_factory=list)
    omega: float = 0.0
    h: float = float("inf")
    converged: bool = False
    timed_out: bool = False
    scale: np.ndarray | None = None


def _count_changed(cur: ScmParams, new: ScmParams) -> int:
    iu = np.triu_indices(cur.d, 1)
    nd = int(np.count_nonzero(_offdiag(cur.delta) != _offdiag(new.delta)))
    nb = int(np.count_nonzero(cur.beta[iu] != new.beta[iu]))
    return nd + nb


def abic_fit(data: Dataset, cfg: AbicConfig = AbicConfig(), guide: Guide | None = None,
             allowed: np.ndarray | None = None, timeout: float | None = None,
             trace_callback=None) -> AbicResult:
    """Learn an ancestral ADMG.

    ``allowed`` (symmetric boolean ``d x d``) pins all coefficients of
    excluded pairs to zero. ``guide`` filters each inner update coordinate
    by coordinate; without it every proposed update is taken. After
    ``timeout`` seconds the best-so-far parameters are thresholded and
    returned with ``timed_out`` set.
    """
    d = data.d
    if d == 1:
        return AbicResult(ScmParams(np.zeros((1, 1)), np.diag(data.covariance().diagonal())),
                          Admg.empty(1), [], cfg.omega, 0.0, True)
    scale = np.ones(d)
    if cfg.standardize:
        sd = data.centered().std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)
        data = data.standardized()
    S = data.covariance()
    if allowed is not None:
        allowed = np.asarray(allowed, dtype=bool)
        allowed = allowed | allowed.T
    start = time.monotonic()
    delta = np.zeros((d, d))
    beta = np.diag(np.diag(S).copy())
    alm = AlmState(alpha=cfg.alpha0, rho=cfg.rho0, t=1)
    trace: list[dict] = []
    h_prev = float("inf")
    h = h_admg(delta, beta)
    timed_out = False
    step_no = 0
    for t in range(cfg.alm_steps):
        alm.t = t + 1
        s_base = 0
        while True:
            for s in range(s_base, s_base + cfg.inner_steps):
                problem = PseudoProblem(S, delta, beta)
                current = ScmParams(delta, beta)
                _, gd, gb = objective(delta, beta, problem, alm, cfg)
                split = _SplitProblem(problem, alm, cfg, np.diag(beta).copy(), allowed)
                res = sopt.minimize(split, split.pack(delta, beta), jac=True, method="L-BFGS-B",
                                    bounds=split.bounds,
                                    options={"maxiter": cfg.inner_maxiter, "gtol": cfg.inner_tol})
                pdelta, pbeta = split.unpack(res.x)
                proposed = ScmParams(pdelta, pbeta)
                step = max(np.abs(pdelta - delta).max(), np.abs(pbeta - beta).max())
                new = guide(current, proposed, (gd, gb), t, s) if guide is not None else proposed
                accepted = _count_changed(current, new)
                delta = np.array(new.delta)
                beta = _ensure_pd(problem.refresh_diagonal(delta, new.beta))
                h = h_admg(delta, beta)
                f_val, _, _ = objective(delta, beta, problem, alm, cfg)
                if not (np.isfinite(f_val) and np.isfinite(h)):
                    raise AbicDivergenceError("objective diverged", trace)
                rec = {"t_outer": t, "t_inner": s, "f": f_val, "h": h, "accepted": accepted,
                       "rho": alm.rho, "alpha": alm.alpha, "nit": int(res.nit)}
                trace.append(rec)
                step_no += 1
                if trace_callback is not None:
                    trace_callback(rec)
                if timeout is not None and time.monotonic() - start > timeout:
                    timed_out = True
                    break
                if step < cfg.step_tol:
                    break
            if timed_out or not cfg.resolve_on_stall:
                break
            if h <= cfg.h_tol or h <= 0.25 * h_prev or alm.rho >= cfg.rho_max:
                break
            # constraint did not shrink enough: raise rho and re-solve this outer step
            alm.rho = min(alm.rho * cfg.rho_growth, cfg.rho_max)
            s_base += cfg.inner_steps
        if timed_out:
            break
        alm.h_value = h
        if h <= cfg.h_tol:
            break
        if not cfg.resolve_on_stall and h > 0.25 * h_prev:
            alm.rho = min(alm.rho * cfg.rho_growth, cfg.rho_max)
        alm.alpha += alm.rho * h
        h_prev = h
        if alm.rho >= cfg.rho_max:
            break
    fitted = ScmParams(delta, beta)
    graph, omega = ancestral_threshold(fitted, cfg.omega, cfg.omega_beta)
    if omega > cfg.omega:
        log.info("raised threshold from %.3g to %.3g to obtain an ancestral graph", cfg.omega, omega)
    return AbicResult(fitted, graph, trace, omega, h, h <= cfg.h_tol, timed_out, scale)


def _ensure_pd(beta, jitter=1e-8):
    beta = 0.5 * (beta + beta.T)
    w = np.linalg.eigvalsh(beta)
    if w[0] > jitter:
        return beta
    return beta + (jitter - w[0]) * np.eye(beta.shape[0])


def trace_to_jsonl(trace: list[dict]) -> str:
    import json

    return "".join(json.dumps(r) + "\n" for r in trace)


def config_dict(cfg: AbicConfig) -> dict:
    return asdict(cfg)
