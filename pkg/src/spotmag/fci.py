"""FCI: constraint-based learning of a PAG, plus conversion to one MAG."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np

from .ci import FisherZ
from .graph import (ARROW, CIRCLE, NONE, TAIL, Admg, Pag, Skeleton,
                    is_ancestral)
from .orient import apply_rules, orient_unshielded_colliders
from .simulate import Dataset

log = logging.getLogger(__name__)

CiTest = Callable[[int, int, tuple], float]


@dataclass(frozen=True)
class FciConfig:
    alpha: float = 0.01
    max_cond_size: int = 4
    use_possible_dsep: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.max_cond_size < 0:
            raise ValueError("max_cond_size must be non-negative")


@dataclass
class SkeletonSearch:
    adj: np.ndarray
    sepsets: dict = field(default_factory=dict)
    max_pvalues: np.ndarray | None = None
    n_tests: int = 0

    def sepset(self, i, j):
        return self.sepsets.get((min(i, j), max(i, j)))


def _adjacency_search(d: int, test: CiTest, cfg: FciConfig) -> SkeletonSearch:
    """Order-independent (stable) adjacency search.

    Conditioning sets come from neighbourhoods frozen at the start of each
    level, enumerated by increasing size in lexicographic order.
    """
    adj = ~np.eye(d, dtype=bool)
    maxp = np.zeros((d, d))
    res = SkeletonSearch(adj, {}, maxp)
    for level in range(cfg.max_cond_size + 1):
        frozen = [np.nonzero(adj[i])[0] for i in range(d)]
        any_testable = False
        for i in range(d):
            for j in frozen[i]:
                if not adj[i, j]:
                    continue
                pool = [int(k) for k in frozen[i] if k != j]
                if len(pool) < level:
                    continue
                any_testable = True
                for z in combinations(pool, level):
                    p = test(i, int(j), z)
                    res.n_tests += 1
                    a, b = min(i, j), max(i, j)
                    maxp[a, b] = max(maxp[a, b], p)
                    if p > cfg.alpha:
                        adj[i, j] = adj[j, i] = False
                        res.sepsets[(a, b)] = tuple(z)
                        break
        if not any_testable:
            break
    res.max_pvalues = np.maximum(maxp, maxp.T)
    return res


def _possible_dsep(M, x):
    adj = M != NONE
    reached = set()
    queue = deque()
    seen = set()
    for y in np.nonzero(adj[x])[0]:
        queue.append((x, int(y)))
        seen.add((x, int(y)))
    while queue:
        a, b = queue.popleft()
        reached.add(b)
        for c in np.nonzero(adj[b])[0]:
            c = int(c)
            if c == a or c == x or (b, c) in seen:
                continue
            collider = M[a, b] == ARROW and M[c, b] == ARROW
            if collider or adj[a, c]:
                seen.add((b, c))
                queue.append((b, c))
    reached.discard(x)
    return reached


def _possible_dsep_stage(M, search: SkeletonSearch, test: CiTest, cfg: FciConfig) -> bool:
    d = M.shape[0]
    pds = [_possible_dsep(M, x) for x in range(d)]
    removed = False
    adj = search.adj
    for x in range(d):
        for y in np.nonzero(adj[x])[0]:
            y = int(y)
            if not adj[x, y]:
                continue
            found = False
            for pool_set in (pds[x] - {y}, pds[y] - {x}):
                pool = sorted(pool_set)
                for size in range(min(cfg.max_cond_size, len(pool)) + 1):
                    for z in combinations(pool, size):
                        p = test(x, y, z)
                        search.n_tests += 1
                        if p > cfg.alpha:
                            adj[x, y] = adj[y, x] = False
                            search.sepsets[(min(x, y), max(x, y))] = tuple(z)
                            found = True
                            break
                    if found:
                        break
                if found:
                    break
            removed |= found
    return removed


def _orient(adj, search: SkeletonSearch) -> np.ndarray:
    M = np.where(adj, CIRCLE, NONE).astype(np.int8)

    def is_collider(a, b, c):
        s = search.sepset(a, c)
        return s is not None and b not in s

    orient_unshielded_colliders(M, is_collider)
    return M


def _sanitize(M):
    # conflicting orientations on finite data can leave tail-tail edges
    bad = (M == TAIL) & (M.T == TAIL)
    M[bad] = CIRCLE
    return M


def fci_pag(data: Dataset | None, cfg: FciConfig = FciConfig(), test: CiTest | None = None,
            d: int | None = None) -> tuple[Pag, SkeletonSearch]:
    """Run FCI and return the estimated PAG and the skeleton-search record.

    ``test`` overrides the Fisher-z test (e.g. with an m-separation oracle
    returning p-values of 0 or 1); ``d`` is then required when ``data`` is None.
    """
    if test is None:
        test = FisherZ(data)
    if d is None:
        d = data.d
    search = _adjacency_search(d, test, cfg)
    M = _orient(search.adj, search)
    if cfg.use_possible_dsep and _possible_dsep_stage(M, search, test, cfg):
        M = _orient(search.adj, search)
    elif cfg.use_possible_dsep:
        M = _orient(search.adj, search)

    def decide(theta, a, b, c):
        s = search.sepset(theta, c)
        return s is None or b not in s

    apply_rules(M, decide)
    return Pag(_sanitize(M)), search


def fci_skeleton_with_pvalues(data: Dataset, cfg: FciConfig = FciConfig()) -> tuple[Skeleton, np.ndarray]:
    """Skeleton phase only, with the largest p-value seen for every pair."""
    search = _adjacency_search(data.d, FisherZ(data), cfg)
    return Skeleton(search.adj), search.max_pvalues


def _mcs_order(adj_sub: np.ndarray) -> list[int]:
    """Maximum cardinality search; ties broken by lowest index."""
    d = adj_sub.shape[0]
    weight = np.zeros(d, dtype=int)
    done = np.zeros(d, dtype=bool)
    order = []
    for _ in range(d):
        w = np.where(done, -1, weight)
        v = int(np.argmax(w))
        order.append(v)
        done[v] = True
        weight[adj_sub[v] & ~done] += 1
    return order


def pag_to_mag(pag: Pag) -> Admg:
    """Pick one ancestral graph from a PAG.

    Circles facing arrowheads become tails, the remaining circle component
    is oriented along a maximum cardinality search order, and any residual
    inconsistency (possible on estimated PAGs) is repaired so the result is
    ancestral.
    """
    M = np.array(pag.M, dtype=np.int8)
    d = M.shape[0]
    adj = M != NONE
    half = adj & (M == CIRCLE) & (M.T == ARROW)
    M[half] = TAIL
    circ_tail = adj & (M == CIRCLE) & (M.T == TAIL)
    M[circ_tail] = ARROW
    cc = adj & (M == CIRCLE) & (M.T == CIRCLE)
    rank = np.empty(d, dtype=int)
    rank[_mcs_order(cc)] = np.arange(d)
    for i, j in zip(*np.nonzero(np.triu(cc))):
        a, b = (i, j) if rank[i] < rank[j] else (j, i)
        M[a, b] = ARROW
        M[b, a] = TAIL
    D = ((M == ARROW) & (M.T == TAIL)).astype(np.int8)
    B = ((M == ARROW) & (M.T == ARROW)).astype(np.int8)
    g = Admg(D, B)
    if not is_ancestral(g):
        log.debug("repairing non-ancestral PAG completion")
        g = _repair_ancestral(g)
    return g


def _repair_ancestral(g: Admg) -> Admg:
    d = g.d
    D = g.D.astype(bool)
    B = g.B.astype(bool)
    # causal order from the condensation of the directed part
    from scipy.sparse.csgraph import connected_components

    ncomp, labels = connected_components(D, directed=True, connection="strong")
    comp_adj = np.zeros((ncomp, ncomp), dtype=bool)
    for i, j in zip(*np.nonzero(D)):
        if labels[i] != labels[j]:
            comp_adj[labels[i], labels[j]] = True
    indeg = comp_adj.sum(axis=0)
    comp_rank = np.empty(ncomp, dtype=int)
    ready = sorted(c for c in range(ncomp) if indeg[c] == 0)
    k = 0
    while ready:
        c = ready.pop(0)
        comp_rank[c] = k
        k += 1
        for c2 in np.nonzero(comp_adj[c])[0]:
            indeg[c2] -= 1
            if indeg[c2] == 0:
                ready.append(int(c2))
                ready.sort()
    key = comp_rank[labels] * d + np.arange(d)
    newD = np.zeros_like(D)
    for i, j in zip(*np.nonzero(D)):
        if key[i] < key[j]:
            newD[i, j] = True
        else:
            newD[j, i] = True
    A = Admg(newD, np.zeros_like(newD)).ancestor_matrix()
    for i, j in zip(*np.nonzero(np.triu(B))):
        if A[i, j] or A[j, i]:
            B[i, j] = B[j, i] = False
            if key[i] < key[j]:
                newD[i, j] = True
            else:
                newD[j, i] = True
    return Admg(newD, B)


def fci_learn(data: Dataset, cfg: FciConfig = FciConfig()) -> Admg:
    """FCI followed by :func:`pag_to_mag`."""
    if data.d == 1:
        return Admg.empty(1)
    pag, _ = fci_pag(data, cfg)
    return pag_to_mag(pag)
