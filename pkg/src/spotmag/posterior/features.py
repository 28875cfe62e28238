"""Per-pair features for the skeleton classifier.

For an unordered pair ``(i, j)`` the features summarize Fisher-z tests of
``V_i _||_ V_j | Z`` where ``Z`` ranges over small subsets of a candidate
pool: the strongest (by marginal correlation) current candidate neighbours
of ``i`` or ``j``. Everything is computed from the correlation matrix, and
the partial correlations of one conditioning size are evaluated in a
single batched inversion.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..ci import batched_partial_correlations, correlation_matrix, fisher_z_pvalue
from ..simulate import Dataset

SCHEMA_VERSION = 1
SENTINEL_P = 1.0


@dataclass(frozen=True)
class StageContext:
    """What a cascade stage knows before extracting features.

    ``candidates`` is the symmetric boolean matrix of pairs still in play
    (also used as the neighbourhood structure for conditioning pools) and
    ``prev_score`` the previous stage's probabilities, if any.
    """

    candidates: np.ndarray
    prev_score: np.ndarray | None = None
    max_cond: int = 3
    pool_size: int = 8

    @classmethod
    def initial(cls, d: int, max_cond: int = 3, pool_size: int = 8) -> "StageContext":
        return cls(~np.eye(d, dtype=bool), None, max_cond, pool_size)


def feature_names(max_cond: int = 3, with_prev: bool = False) -> list[str]:
    names = ["abs_corr", "p0", "log_n", "d", "deg_min", "deg_max", "overlap", "pool"]
    for k in range(1, max_cond + 1):
        names += [f"p{k}_{s}" for s in ("min", "max", "mean", "median")]
        names += [f"r{k}_min", f"r{k}_max"]
    if with_prev:
        names.append("prev_score")
    return names


@dataclass
class PairFeatures:
    pairs: np.ndarray          # (m, 2) with i < j
    X: np.ndarray              # (m, n_features)
    names: list
    degenerate: np.ndarray     # per-node flag for constant columns

    def as_map(self) -> dict:
        return {(int(i), int(j)): self.X[k] for k, (i, j) in enumerate(self.pairs)}


def _pool_for_pair(order_key, cand, i, j, size):
    nb = np.nonzero(cand[i] | cand[j])[0]
    nb = nb[(nb != i) & (nb != j)]
    if len(nb) > size:
        # strongest neighbours first; ranking by value keeps relabelings exact
        nb = nb[np.lexsort((nb, -order_key[nb]))][:size]
    return nb


def canonical_order(data: Dataset) -> np.ndarray:
    """Column order determined by the column values alone.

    Computing in this order makes results bitwise equivariant under any
    relabeling of the input columns.
    """
    return np.lexsort(data.X[::-1])


def extract_pair_features(data: Dataset, ctx: StageContext | None = None,
                          pairs: np.ndarray | None = None) -> PairFeatures:
    """Features for ``pairs`` (default: every candidate pair with ``i < j``).

    Tests that cannot be formed (pool smaller than the conditioning size)
    use the sentinel p-value 1.0 and partial correlation 0.
    """
    d = data.d
    if ctx is None:
        ctx = StageContext.initial(d)
    cand = np.asarray(ctx.candidates, dtype=bool)
    if pairs is None:
        pairs = np.argwhere(np.triu(cand & ~np.eye(d, dtype=bool), 1))
    pairs = np.sort(np.asarray(pairs, dtype=int).reshape(-1, 2), axis=1)
    order = canonical_order(data)
    inv = np.empty(d, dtype=int)
    inv[order] = np.arange(d)
    prev = None if ctx.prev_score is None else np.asarray(ctx.prev_score)[np.ix_(order, order)]
    cctx = StageContext(cand[np.ix_(order, order)], prev, ctx.max_cond, ctx.pool_size)
    cpairs = np.sort(inv[pairs], axis=1)
    f = _extract(data.permute(order), cctx, cpairs)
    return PairFeatures(pairs, f.X, f.names, f.degenerate[inv])


def _extract(data: Dataset, ctx: StageContext, pairs: np.ndarray) -> PairFeatures:
    d = data.d
    K = ctx.max_cond
    if data.n <= K + 3:
        raise ValueError(f"need n > {K + 3} rows for conditioning sets up to size {K}")
    C = correlation_matrix(data)
    sd = data.centered().std(axis=0)
    degenerate = sd == 0
    absC = np.abs(C)
    np.fill_diagonal(absC, 0.0)
    cand = np.asarray(ctx.candidates, dtype=bool).copy()
    np.fill_diagonal(cand, False)
    m = len(pairs)
    with_prev = ctx.prev_score is not None
    names = feature_names(K, with_prev)
    X = np.zeros((m, len(names)))
    if m == 0:
        return PairFeatures(pairs, X, names, degenerate)
    I, J = pairs[:, 0], pairs[:, 1]
    r0 = C[I, J]
    _, p0 = fisher_z_pvalue(r0, data.n, 0)
    deg = cand.sum(axis=1)
    d1, d2 = deg[I] - cand[I, J], deg[J] - cand[I, J]
    overlap = (cand[I] & cand[J]).sum(axis=1)
    cols = [np.abs(r0), p0, np.full(m, np.log(data.n)), np.full(m, float(d)),
            np.minimum(d1, d2), np.maximum(d1, d2), overlap]
    # pool candidates ranked by their strongest marginal correlation with the pair
    pools = []
    for i, j in pairs:
        key = np.maximum(absC[i], absC[j])
        pools.append(_pool_for_pair(key, cand, i, j, ctx.pool_size))
    cols.append(np.array([len(p) for p in pools], dtype=float))
    for k in range(1, K + 1):
        rows, zs = [], []
        for r, pool in enumerate(pools):
            for z in combinations(pool, k):
                rows.append(r)
                zs.append(z)
        p_min = np.full(m, SENTINEL_P)
        p_max = np.full(m, SENTINEL_P)
        p_mean = np.full(m, SENTINEL_P)
        p_med = np.full(m, SENTINEL_P)
        r_min = np.zeros(m)
        r_max = np.zeros(m)
        if rows:
            rows = np.asarray(rows)
            zs = np.asarray(zs)
            rr = np.abs(batched_partial_correlations(C, I[rows], J[rows], zs))
            _, pp = fisher_z_pvalue(rr, data.n, k)
            # rows are grouped by pair, so reduce over contiguous segments
            starts = np.r_[0, np.nonzero(np.diff(rows))[0] + 1]
            owner = rows[starts]
            p_min[owner] = np.minimum.reduceat(pp, starts)
            p_max[owner] = np.maximum.reduceat(pp, starts)
            counts = np.diff(np.r_[starts, len(rows)])
            p_mean[owner] = np.add.reduceat(pp, starts) / counts
            r_min[owner] = np.minimum.reduceat(rr, starts)
            r_max[owner] = np.maximum.reduceat(rr, starts)
            for s, c, o in zip(starts, counts, owner):
                p_med[o] = np.median(pp[s:s + c])
        cols += [p_min, p_max, p_mean, p_med, r_min, r_max]
    if with_prev:
        prev = np.asarray(ctx.prev_score, dtype=float)
        cols.append(prev[I, J])
    X = np.column_stack(cols)
    # constant columns carry no information: their tests fall back to the sentinel
    bad = degenerate[I] | degenerate[J]
    if bad.any():
        pcols, rcols = _test_columns(names)
        X[np.ix_(bad, pcols)] = SENTINEL_P
        X[np.ix_(bad, rcols)] = 0.0
    return PairFeatures(pairs, X, names, degenerate)


def _test_columns(names):
    pcols = [k for k, nm in enumerate(names) if nm[0] == "p" and nm[1].isdigit()]
    rcols = [k for k, nm in enumerate(names) if nm == "abs_corr" or (nm[0] == "r" and nm[1].isdigit())]
    return pcols, rcols
