"""Posterior-guided stochastic optimization on top of :func:`abic_fit`.

Each coordinate of an inner-step proposal is accepted with a probability
that grows with the posterior adjacency probability of its pair and with
the outer ALM step, so unlikely edges are slowed down early on while the
late iterations behave like the plain optimizer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abic import AbicConfig, AbicResult, abic_fit
from .simulate import Dataset, ScmParams


@dataclass(frozen=True)
class GuideConfig:
    c: float = 0.1
    sparsity_unconditional: bool = True
    seed: int = 0
    shrink_test: str = "step"
    draw_scope: str = "alm_step"

    def __post_init__(self):
        if not self.c >= 0:
            raise ValueError("c must be non-negative")
        if self.shrink_test not in ("step", "gradient"):
            raise ValueError(f"unknown shrink_test {self.shrink_test!r}")
        if self.draw_scope not in ("alm_step", "inner_step"):
            raise ValueError(f"unknown draw_scope {self.draw_scope!r}")


def accept_probability(p_ij, t: int, c: float):
    """``min(1, (p + c) ** (1 / (t + 1)))`` for a 0-based step index ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    p = np.asarray(p_ij, dtype=float)
    out = np.minimum(1.0, (p + c) ** (1.0 / (t + 1)))
    return float(out) if out.ndim == 0 else out


def _posterior_matrix(posterior) -> np.ndarray:
    P = np.asarray(getattr(posterior, "p", posterior), dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("posterior must be a square matrix")
    return P


def step_uniforms(seed: int, t_outer: int, t_inner: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform draws for one inner step, indexed by coordinate.

    The stream is keyed by ``(seed, t_outer, t_inner)`` and a full matrix is
    drawn, so the value used for ``(i, j)`` never depends on visiting order.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(t_outer), int(t_inner)]))
    u_delta = rng.random((d, d))
    u_beta = rng.random((d, d))
    u_beta = np.triu(u_beta, 1)
    return u_delta, u_beta + u_beta.T


def posterior_guided_update(current: ScmParams, proposed: ScmParams, grads, posterior,
                            t: int, cfg: GuideConfig, rng=None, t_inner: int = 0) -> ScmParams:
    """Filter a proposal coordinate by coordinate.

    A coordinate whose update weakens it is moving to zero; with
    ``cfg.sparsity_unconditional`` such moves are always taken. With
    ``cfg.shrink_test="step"`` weakening means ``|proposed| < |current|``;
    with ``"gradient"`` it means the current value and its objective
    gradient (``grads``, taken at ``current``) share a sign, which agrees
    with the step test for small gradient steps. Every other
    coordinate is accepted when its uniform draw falls below
    :func:`accept_probability`. Symmetric ``beta`` pairs share one draw and
    the ``beta`` diagonal is always accepted.

    ``rng`` may supply the draws as a ``(u_delta, u_beta)`` tuple; by default
    they come from :func:`step_uniforms`.
    """
    P = _posterior_matrix(posterior)
    d = current.d
    if P.shape != (d, d) or proposed.d != d:
        raise ValueError("posterior, current and proposed shapes disagree")
    gd, gb = grads
    if rng is None:
        u_d, u_b = step_uniforms(cfg.seed, t, t_inner, d)
    else:
        u_d, u_b = rng
    prob = accept_probability(P, t, cfg.c)
    acc_d = u_d < prob
    acc_b = u_b < prob
    if cfg.sparsity_unconditional:
        if cfg.shrink_test == "step":
            shrink_d = np.abs(proposed.delta) < np.abs(current.delta)
            shrink_b = np.abs(proposed.beta) < np.abs(current.beta)
        else:
            shrink_d = current.delta * gd > 0
            shrink_b = current.beta * gb > 0
        acc_d |= shrink_d
        acc_b |= shrink_b | shrink_b.T
    np.fill_diagonal(acc_b, True)
    delta = np.where(acc_d, proposed.delta, current.delta)
    beta = np.where(acc_b, proposed.beta, current.beta)
    return ScmParams(delta, beta)


def make_guide(posterior, cfg: GuideConfig):
    P = _posterior_matrix(posterior)

    per_inner = cfg.draw_scope == "inner_step"

    def guide(current, proposed, grads, t_outer, t_inner):
        return posterior_guided_update(current, proposed, grads, P, t_outer, cfg,
                                       t_inner=t_inner if per_inner else 0)

    return guide


def spot_fit(data: Dataset, posterior, abic_cfg: AbicConfig = AbicConfig(),
             guide_cfg: GuideConfig = GuideConfig(), **kwargs) -> AbicResult:
    """:func:`abic_fit` with the posterior-guided update filter."""
    P = _posterior_matrix(posterior)
    if P.shape[0] != data.d:
        raise ValueError(f"posterior is {P.shape[0]}x{P.shape[0]} but data has {data.d} columns")
    return abic_fit(data, abic_cfg, guide=make_guide(P, guide_cfg), **kwargs)
