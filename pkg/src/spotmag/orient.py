"""Edge-mark orientation rules for PAGs without selection bias.

All functions work in place on a mark matrix ``M`` (``M[a, b]`` is the mark
at ``b`` on edge ``a - b``). Rules are tried in a fixed order with node
indices scanned in ascending order, so results are deterministic.
"""
from __future__ import annotations

from collections import deque
from typing import Callable

import numpy as np

from .graph import ARROW, CIRCLE, NONE, TAIL

ColliderTest = Callable[[int, int, int], bool]
DiscriminatingTest = Callable[[int, int, int, int], bool]

# Upper bound on nodes expanded per uncovered-path search; ample for sparse graphs.
_PATH_SEARCH_BUDGET = 200_000


def orient_unshielded_colliders(M: np.ndarray, is_collider: ColliderTest) -> int:
    """Orient every unshielded triple ``a *-* b *-* c`` that ``is_collider`` accepts."""
    adj = M != NONE
    d = M.shape[0]
    count = 0
    for b in range(d):
        nbrs = np.nonzero(adj[b])[0]
        for ia, a in enumerate(nbrs):
            for c in nbrs[ia + 1:]:
                if adj[a, c]:
                    continue
                if is_collider(int(a), b, int(c)):
                    M[a, b] = ARROW
                    M[c, b] = ARROW
                    count += 1
    return count


def _rule1(M, adj):
    # a *-> b o-* c, a and c non-adjacent  =>  b -> c
    changed = False
    d = M.shape[0]
    for b in range(d):
        for a in np.nonzero(adj[b] & (M[:, b] == ARROW))[0]:
            for c in np.nonzero(adj[b])[0]:
                if c == a or adj[a, c] or M[c, b] != CIRCLE:
                    continue
                M[c, b] = TAIL
                M[b, c] = ARROW
                changed = True
    return changed


def _rule2(M, adj):
    # a -> b *-> c  or  a *-> b -> c, with a *-o c  =>  a *-> c
    changed = False
    d = M.shape[0]
    for a in range(d):
        for c in np.nonzero(adj[a] & (M[a, :] == CIRCLE))[0]:
            for b in np.nonzero(adj[a] & adj[c])[0]:
                if M[a, b] != ARROW or M[b, c] != ARROW:
                    continue
                if M[b, a] == TAIL or M[c, b] == TAIL:
                    M[a, c] = ARROW
                    changed = True
                    break
    return changed


def _rule3(M, adj):
    # a *-> b <-* c, a *-o t o-* c, a/c non-adjacent, t *-o b  =>  t *-> b
    changed = False
    d = M.shape[0]
    for b in range(d):
        for t in np.nonzero(adj[b] & (M[:, b] == CIRCLE))[0]:
            parents = [a for a in np.nonzero(adj[b] & adj[t] & (M[:, b] == ARROW))[0]
                       if M[a, t] == CIRCLE]
            done = False
            for i, a in enumerate(parents):
                for c in parents[i + 1:]:
                    if not adj[a, c]:
                        M[t, b] = ARROW
                        changed = done = True
                        break
                if done:
                    break
    return changed


def _discriminating_theta(M, adj, a, b, c):
    """Return the far endpoint of a discriminating path ``<theta, ..., a, b, c>`` for b."""
    d = M.shape[0]
    visited = np.zeros(d, dtype=bool)
    visited[[a, b, c]] = True
    queue = deque([a])
    while queue:
        v = queue.popleft()
        for w in np.nonzero(adj[v] & (M[:, v] == ARROW))[0]:
            if visited[w]:
                continue
            if not adj[w, c]:
                return int(w)
            # w must itself be a collider on the path and a parent of c
            if M[v, w] == ARROW and M[w, c] == ARROW and M[c, w] == TAIL:
                visited[w] = True
                queue.append(int(w))
    return None


def _rule4(M, adj, decide: DiscriminatingTest):
    changed = False
    d = M.shape[0]
    for b in range(d):
        for c in np.nonzero(adj[b] & (M[:, b] == CIRCLE))[0]:
            # c is at the far end with mark at b a circle: edge b o-* c
            for a in np.nonzero(adj[b] & adj[c])[0]:
                if a == c:
                    continue
                # a is a collider on the path (arrow at a from b) and a parent of c
                if not (M[b, a] == ARROW and M[a, c] == ARROW and M[c, a] == TAIL):
                    continue
                theta = _discriminating_theta(M, adj, int(a), b, int(c))
                if theta is None:
                    continue
                if decide(theta, int(a), b, int(c)):
                    M[a, b] = ARROW
                    M[b, a] = ARROW
                    M[c, b] = ARROW
                    M[b, c] = ARROW
                else:
                    M[c, b] = TAIL
                    M[b, c] = ARROW
                changed = True
                break
    return changed


def _pd_edge(M, u, v):
    """Edge u - v can sit on a potentially directed path from u to v."""
    return M[v, u] != ARROW and M[u, v] != TAIL


def _uncovered_pd_path(M, adj, start, first, target) -> bool:
    """Is there an uncovered potentially directed path start, first, ..., target?"""
    if not adj[start, first] or not _pd_edge(M, start, first):
        return False
    if first == target:
        return True
    budget = [_PATH_SEARCH_BUDGET]
    on_path = {start, first}

    def dfs(prev, cur):
        budget[0] -= 1
        if budget[0] < 0:
            return False
        for nxt in np.nonzero(adj[cur])[0]:
            nxt = int(nxt)
            if nxt in on_path or adj[prev, nxt] or not _pd_edge(M, cur, nxt):
                continue
            if nxt == target:
                return True
            on_path.add(nxt)
            if dfs(cur, nxt):
                return True
            on_path.discard(nxt)
        return False

    if target in on_path:
        return False
    return dfs(start, first)


def _rule8(M, adj):
    # a -> b -> c or a -o b -> c, with a o-> c  =>  a -> c
    changed = False
    d = M.shape[0]
    for a in range(d):
        for c in np.nonzero(adj[a] & (M[:, a] == CIRCLE) & (M[a, :] == ARROW))[0]:
            for b in np.nonzero(adj[a] & adj[c])[0]:
                if M[b, a] != TAIL or M[b, c] != ARROW or M[c, b] != TAIL:
                    continue
                if M[a, b] in (ARROW, CIRCLE):
                    M[c, a] = TAIL
                    changed = True
                    break
    return changed


def _rule9(M, adj):
    # a o-> c with an uncovered p.d. path <a, b, t, ..., c>, b and c non-adjacent  =>  a -> c
    changed = False
    d = M.shape[0]
    for a in range(d):
        for c in np.nonzero(adj[a] & (M[:, a] == CIRCLE) & (M[a, :] == ARROW))[0]:
            for b in np.nonzero(adj[a])[0]:
                if b == c or adj[b, c]:
                    continue
                if _uncovered_pd_path(M, adj, a, int(b), int(c)):
                    M[c, a] = TAIL
                    changed = True
                    break
    return changed


def _rule10(M, adj):
    # a o-> c, b -> c <- t, uncovered p.d. paths a..b and a..t whose first
    # nodes after a are distinct and non-adjacent  =>  a -> c
    changed = False
    d = M.shape[0]
    for a in range(d):
        for c in np.nonzero(adj[a] & (M[:, a] == CIRCLE) & (M[a, :] == ARROW))[0]:
            parents = [int(v) for v in np.nonzero(adj[c] & (M[:, c] == ARROW) & (M[c, :] == TAIL))[0]
                       if v != a]
            if len(parents) < 2:
                continue
            firsts = {}
            for p in parents:
                firsts[p] = [int(m) for m in np.nonzero(adj[a])[0]
                             if m != c and _uncovered_pd_path(M, adj, a, int(m), p)]
            done = False
            for i, b in enumerate(parents):
                for t in parents[i + 1:]:
                    for mu in firsts[b]:
                        for om in firsts[t]:
                            if mu != om and not adj[mu, om]:
                                M[c, a] = TAIL
                                changed = done = True
                                break
                        if done:
                            break
                    if done:
                        break
                if done:
                    break
    return changed


def apply_rules(M: np.ndarray, decide_discriminating: DiscriminatingTest,
                tail_rules: bool = True, max_rounds: int = 10_000) -> None:
    """Run the orientation rules to a fixpoint.

    ``decide_discriminating(theta, a, b, c)`` returns True when ``b`` is a
    collider on the discriminating path ending ``a, b, c``.
    """
    adj = M != NONE
    for _ in range(max_rounds):
        changed = _rule1(M, adj)
        changed |= _rule2(M, adj)
        changed |= _rule3(M, adj)
        changed |= _rule4(M, adj, decide_discriminating)
        if not changed and tail_rules:
            changed = _rule8(M, adj) or _rule9(M, adj) or _rule10(M, adj)
        if not changed:
            return
    raise RuntimeError("orientation rules did not reach a fixpoint")
