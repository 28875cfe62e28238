"""Random ancestral ADMGs, linear Gaussian SCM parameters, and sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import Admg, Skeleton, maximal_ancestral_projection, skeleton_of

DELTA_RANGE = (0.5, 2.0)
BETA_OFFDIAG_RANGE = (0.4, 0.7)
BETA_DIAG_RANGE = (0.7, 1.2)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScmParams:
    """Linear SCM ``V = V @ delta + eps`` with ``Cov(eps) = beta``."""

    delta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float)
        beta = np.array(self.beta, dtype=float)
        if delta.shape != beta.shape or delta.ndim != 2 or delta.shape[0] != delta.shape[1]:
            raise SimulationError("delta and beta must be square matrices of equal size")
        if not np.allclose(beta, beta.T, rtol=0, atol=1e-12):
            raise SimulationError("beta must be symmetric")
        delta.flags.writeable = False
        beta.flags.writeable = False
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "beta", beta)

    @property
    def d(self) -> int:
        return self.delta.shape[0]

    def to_dict(self) -> dict:
        return {"delta": self.delta.tolist(), "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, obj) -> "ScmParams":
        return cls(np.asarray(obj["delta"], dtype=float), np.asarray(obj["beta"], dtype=float))


@dataclass(frozen=True)
class GraphSamplerConfig:
    """Random graph settings.

    ``d`` is either a node count or an inclusive ``(low, high)`` range from
    which each graph's size is drawn.
    """

    d: int | tuple[int, int] = 30
    indegree_range: tuple[float, float] = (1.0, 1.5)
    bidirected_fraction_range: tuple[float, float] = (0.05, 0.15)
    seed: int = 0
    topology: str = "er"

    def __post_init__(self):
        lo, hi = self.d_range
        if lo < 1 or hi < lo:
            raise SimulationError(f"invalid node count {self.d!r}")
        a, b = self.indegree_range
        if not 0 <= a <= b:
            raise SimulationError(f"invalid indegree range {self.indegree_range}")
        a, b = self.bidirected_fraction_range
        if not 0 <= a <= b <= 1:
            raise SimulationError("bidirected fraction range must lie in [0, 1]")
        if self.topology not in ("er", "sf"):
            raise SimulationError(f"unknown topology {self.topology!r}")

    @property
    def d_range(self) -> tuple[int, int]:
        if isinstance(self.d, (tuple, list)):
            return int(self.d[0]), int(self.d[1])
        return int(self.d), int(self.d)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    column_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2:
            raise SimulationError("data must be a 2-d array")
        if X.shape[0] < 1:
            raise SimulationError("a dataset needs at least one row")
        if not np.all(np.isfinite(X)):
            raise SimulationError("data contains NaN or Inf")
        names = tuple(self.column_names) or tuple(f"V{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise SimulationError("one column name per column is required")
        X.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def centered(self) -> np.ndarray:
        return self.X - self.X.mean(axis=0)

    def covariance(self) -> np.ndarray:
        """Maximum-likelihood covariance (divides by n)."""
        Xc = self.centered()
        return Xc.T @ Xc / self.n

    def standardized(self) -> "Dataset":
        Xc = self.centered()
        sd = Xc.std(axis=0)
        sd[sd == 0] = 1.0
        return Dataset(Xc / sd, self.column_names)

    def subset_rows(self, idx) -> "Dataset":
        return Dataset(self.X[np.asarray(idx)], self.column_names)

    def permute(self, perm: Sequence[int]) -> "Dataset":
        p = list(perm)
        return Dataset(self.X[:, p], [self.column_names[k] for k in p])


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _add_bidirected(D, n_bi, rng):
    d = D.shape[0]
    B = np.zeros((d, d), dtype=np.int8)
    if n_bi <= 0:
        return B
    A = Admg(D, B).ancestor_matrix()
    ok = ~(A | A.T)
    iu = np.triu_indices(d, 1)
    cand = np.flatnonzero(ok[iu])
    k = min(n_bi, cand.size)
    chosen = rng.choice(cand, size=k, replace=False) if k else []
    for c in chosen:
        i, j = iu[0][c], iu[1][c]
        B[i, j] = B[j, i] = 1
    return B


def _directed_er(d, n_dir, order, rng):
    D = np.zeros((d, d), dtype=np.int8)
    iu = np.triu_indices(d, 1)
    n_dir = min(n_dir, iu[0].size)
    pick = rng.choice(iu[0].size, size=n_dir, replace=False)
    D[order[iu[0][pick]], order[iu[1][pick]]] = 1
    return D


def _directed_sf(d, n_dir, order, rng):
    """Preferential attachment along a random causal order."""
    D = np.zeros((d, d), dtype=np.int8)
    if d < 2 or n_dir <= 0:
        return D
    deg = np.ones(d)
    # spread the edge budget over nodes 1..d-1 as evenly as possible
    per_node = np.full(d - 1, n_dir // (d - 1))
    per_node[: n_dir % (d - 1)] += 1
    per_node = rng.permutation(per_node)
    for pos in range(1, d):
        k = min(int(per_node[pos - 1]), pos)
        if k == 0:
            continue
        w = deg[:pos] / deg[:pos].sum()
        parents = rng.choice(pos, size=k, replace=False, p=w)
        for p in parents:
            D[order[p], order[pos]] = 1
            deg[p] += 1
        deg[pos] += k
    return D


def sample_er_admg(cfg: GraphSamplerConfig, rng=None) -> Admg:
    """Random ancestral ADMG.

    Directed edges follow a random causal order; bidirected edges join
    random pairs with no ancestral relation, so the result is ancestral
    (and bow-free) by construction.
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    lo, hi = cfg.d_range
    d = int(rng.integers(lo, hi + 1))
    if d == 1:
        return Admg.empty(1)
    indegree = rng.uniform(*cfg.indegree_range)
    frac = rng.uniform(*cfg.bidirected_fraction_range)
    n_edges = min(int(round(d * indegree)), d * (d - 1) // 2)
    n_bi = int(round(frac * n_edges))
    n_dir = n_edges - n_bi
    order = rng.permutation(d)
    if cfg.topology == "sf":
        D = _directed_sf(d, n_dir, order, rng)
    else:
        D = _directed_er(d, n_dir, order, rng)
    B = _add_bidirected(D, n_bi, rng)
    return Admg(D, B)


def _signed_uniform(rng, size, lo, hi):
    return rng.uniform(lo, hi, size=size) * rng.choice([-1.0, 1.0], size=size)


def parameterize_scm(g: Admg, rng=None) -> ScmParams:
    """Draw edge weights and a diagonally dominant noise covariance for ``g``.

    Diagonal noise variances are drawn from the positive range (the sign is
    dropped) before adding the absolute row sum of the off-diagonal terms.
    """
    rng = as_rng(rng)
    d = g.d
    delta = np.zeros((d, d))
    mask = g.D.astype(bool)
    delta[mask] = _signed_uniform(rng, int(mask.sum()), *DELTA_RANGE)
    beta = np.zeros((d, d))
    iu = np.triu_indices(d, 1)
    bmask = g.B[iu].astype(bool)
    vals = _signed_uniform(rng, int(bmask.sum()), *BETA_OFFDIAG_RANGE)
    beta[iu[0][bmask], iu[1][bmask]] = vals
    beta = beta + beta.T
    diag = rng.uniform(*BETA_DIAG_RANGE, size=d)
    beta[np.diag_indices(d)] = diag + np.abs(beta).sum(axis=1)
    return ScmParams(delta, beta)


def implied_covariance(p: ScmParams) -> np.ndarray:
    """``(I - delta)^{-T} beta (I - delta)^{-1}``."""
    d = p.d
    A = np.eye(d) - p.delta
    try:
        Ainv = np.linalg.solve(A, np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise SimulationError("I - delta is singular") from exc
    S = Ainv.T @ p.beta @ Ainv
    return 0.5 * (S + S.T)


def sample_dataset(p: ScmParams, n: int, rng=None, method: str = "structural",
                   column_names=()) -> Dataset:
    """Draw ``n`` i.i.d. rows from the SCM.

    ``method="structural"`` samples noise from ``N(0, beta)`` and solves the
    structural equations; ``method="covariance"`` factorizes the implied
    covariance directly.
    """
    if n < 1:
        raise SimulationError("n must be at least 1")
    rng = as_rng(rng)
    d = p.d
    if method == "structural":
        try:
            L = np.linalg.cholesky(p.beta)
        except np.linalg.LinAlgError as exc:
            raise SimulationError("beta is not positive definite") from exc
        eps = rng.standard_normal((n, d)) @ L.T
        X = np.linalg.solve((np.eye(d) - p.delta).T, eps.T).T
    elif method == "covariance":
        try:
            L = np.linalg.cholesky(implied_covariance(p))
        except np.linalg.LinAlgError as exc:
            raise SimulationError("implied covariance is not positive definite") from exc
        X = rng.standard_normal((n, d)) @ L.T
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    return Dataset(X, column_names)


@dataclass(frozen=True, eq=False)
class SimulatedInstance:
    graph: Admg
    mag: Admg
    params: ScmParams
    data: Dataset
    seed: tuple

    @property
    def skeleton(self) -> Skeleton:
        return skeleton_of(self.mag)


def task_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for task ``index`` of a job seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def simulate_instance(cfg: GraphSamplerConfig, n: int, rng=None, seed_tag=()) -> SimulatedInstance:
    rng = as_rng(rng)
    g = sample_er_admg(cfg, rng)
    params = parameterize_scm(g, rng)
    data = sample_dataset(params, n, rng)
    return SimulatedInstance(g, maximal_ancestral_projection(g), params, data, tuple(seed_tag))


def simulate_suite(count: int, cfg: GraphSamplerConfig, n: int, seed: int | None = None,
                   start: int = 0) -> list[SimulatedInstance]:
    seed = cfg.seed if seed is None else seed
    return [simulate_instance(cfg, n, task_rng(seed, start + k), (seed, start + k))
            for k in range(count)]


def generate_corpus(count: int, cfg: GraphSamplerConfig, n: int, rng=None) -> list[tuple[Dataset, Skeleton]]:
    """``count`` (dataset, skeleton) pairs drawn from the static simulator.

    Each item gets its own stream keyed by ``(seed, index)``, where ``seed``
    comes from ``rng`` (an int or a Generator) or ``cfg.seed``.
    """
    if count < 0:
        raise SimulationError("count must be non-negative")
    if rng is None:
        seed = cfg.seed
    elif isinstance(rng, np.random.Generator):
        seed = int(rng.integers(2**63 - 1))
    else:
        seed = int(rng)
    return [(inst.data, inst.skeleton) for inst in simulate_suite(count, cfg, n, seed)]
