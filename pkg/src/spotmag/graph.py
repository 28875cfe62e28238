"""Mixed graphs: ADMGs, skeletons and PAGs.

Directed edges are stored in ``D`` (``D[i, j] == 1`` means ``i -> j``) and
bidirected edges in the symmetric matrix ``B``. A PAG stores endpoint marks
in ``M`` where ``M[i, j]`` is the mark at ``j``'s end of the ``i - j`` edge.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

NONE, CIRCLE, ARROW, TAIL = 0, 1, 2, 3
MARK_NAMES = {CIRCLE: "circle", ARROW: "arrow", TAIL: "tail"}
MARK_CODES = {v: k for k, v in MARK_NAMES.items()}


class GraphError(ValueError):
    pass


def _as_binary(a, d=None) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError(f"expected a square matrix, got shape {a.shape}")
    if d is not None and a.shape[0] != d:
        raise GraphError(f"expected a {d}x{d} matrix, got shape {a.shape}")
    out = (a != 0).astype(np.int8)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Admg:
    """Acyclic directed mixed graph as a pair of adjacency matrices."""

    D: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        D = _as_binary(self.D)
        B = _as_binary(self.B, D.shape[0])
        if np.any(np.diag(D)) or np.any(np.diag(B)):
            raise GraphError("self loops are not allowed")
        if np.any(B != B.T):
            raise GraphError("bidirected adjacency must be symmetric")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.D.shape[0]

    @classmethod
    def empty(cls, d: int) -> "Admg":
        z = np.zeros((d, d), dtype=np.int8)
        return cls(z, z)

    @classmethod
    def from_edges(cls, d: int, directed: Iterable[Sequence[int]] = (),
                   bidirected: Iterable[Sequence[int]] = ()) -> "Admg":
        D = np.zeros((d, d), dtype=np.int8)
        B = np.zeros((d, d), dtype=np.int8)
        for i, j in directed:
            D[i, j] = 1
        for i, j in bidirected:
            B[i, j] = B[j, i] = 1
        return cls(D, B)

    @property
    def directed_edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.D))]

    @property
    def bidirected_edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(self.B)))]

    def adjacency(self) -> np.ndarray:
        """Symmetric boolean adjacency ignoring edge types."""
        return (self.D | self.D.T | self.B).astype(bool)

    def ancestor_matrix(self) -> np.ndarray:
        """``A[i, j]`` is True iff a directed path of length >= 1 leads from i to j."""
        return transitive_closure(self.D)

    def permute(self, perm: Sequence[int]) -> "Admg":
        """Relabel so that new node ``k`` is old node ``perm[k]``."""
        p = np.asarray(perm)
        return Admg(self.D[np.ix_(p, p)], self.B[np.ix_(p, p)])

    def to_dict(self) -> dict:
        return {"d": self.d,
                "directed": [list(e) for e in self.directed_edges],
                "bidirected": [list(e) for e in self.bidirected_edges]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Admg":
        return cls.from_edges(int(obj["d"]), obj.get("directed", []), obj.get("bidirected", []))

    def __eq__(self, other):
        if not isinstance(other, Admg):
            return NotImplemented
        return np.array_equal(self.D, other.D) and np.array_equal(self.B, other.B)

    def __hash__(self):
        return hash((self.D.tobytes(), self.B.tobytes()))

    def __repr__(self):
        parts = [f"{i}->{j}" for i, j in self.directed_edges]
        parts += [f"{i}<->{j}" for i, j in self.bidirected_edges]
        return f"Admg(d={self.d}, [{', '.join(parts)}])"


@dataclass(frozen=True, eq=False)
class Skeleton:
    S: np.ndarray

    def __post_init__(self):
        S = _as_binary(self.S)
        if np.any(np.diag(S)):
            raise GraphError("skeleton diagonal must be zero")
        if np.any(S != S.T):
            raise GraphError("skeleton must be symmetric")
        object.__setattr__(self, "S", S)

    @property
    def d(self) -> int:
        return self.S.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.S.sum() // 2)

    def upper(self) -> np.ndarray:
        """Edge indicators over the ``d(d-1)/2`` pairs ``i < j`` in row-major order."""
        return self.S[np.triu_indices(self.d, 1)].astype(bool)

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return np.array_equal(self.S, other.S)

    def __hash__(self):
        return hash(self.S.tobytes())


@dataclass(frozen=True, eq=False)
class Pag:
    """Partial ancestral graph; ``M[i, j]`` is the mark at ``j`` on edge ``i - j``."""

    M: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.int8)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise GraphError("mark matrix must be square")
        if np.any(np.diag(M)):
            raise GraphError("mark matrix diagonal must be NONE")
        if np.any((M == NONE) != (M.T == NONE)):
            raise GraphError("an edge needs a mark at both ends")
        if np.any((M == TAIL) & (M.T == TAIL)):
            raise GraphError("tail-tail edges (selection bias) are not supported")
        if np.any((M < 0) | (M > 3)):
            raise GraphError("unknown mark code")
        M = M.copy()
        M.flags.writeable = False
        object.__setattr__(self, "M", M)

    @property
    def d(self) -> int:
        return self.M.shape[0]

    def adjacency(self) -> np.ndarray:
        return self.M != NONE

    def to_dict(self) -> dict:
        edges = []
        for i, j in zip(*np.nonzero(np.triu(self.adjacency()))):
            edges.append({"i": int(i), "j": int(j),
                          "mark_at_i": MARK_NAMES[int(self.M[j, i])],
                          "mark_at_j": MARK_NAMES[int(self.M[i, j])]})
        return {"d": self.d, "edges": edges}

    @classmethod
    def from_dict(cls, obj: dict) -> "Pag":
        d = int(obj["d"])
        M = np.zeros((d, d), dtype=np.int8)
        for e in obj["edges"]:
            i, j = int(e["i"]), int(e["j"])
            M[j, i] = MARK_CODES[e["mark_at_i"]]
            M[i, j] = MARK_CODES[e["mark_at_j"]]
        return cls(M)

    def permute(self, perm: Sequence[int]) -> "Pag":
        p = np.asarray(perm)
        return Pag(self.M[np.ix_(p, p)])

    def __eq__(self, other):
        if not isinstance(other, Pag):
            return NotImplemented
        return np.array_equal(self.M, other.M)

    def __hash__(self):
        return hash(self.M.tobytes())

    def __repr__(self):
        sym_i = {CIRCLE: "o", ARROW: "<", TAIL: "-"}
        sym_j = {CIRCLE: "o", ARROW: ">", TAIL: "-"}
        parts = [f"{i}{sym_i[int(self.M[j, i])]}-{sym_j[int(self.M[i, j])]}{j}"
                 for i, j in zip(*np.nonzero(np.triu(self.adjacency())))]
        return f"Pag(d={self.d}, [{', '.join(parts)}])"


def transitive_closure(D: np.ndarray) -> np.ndarray:
    R = np.asarray(D, dtype=bool).copy()
    for k in range(R.shape[0]):
        R |= np.outer(R[:, k], R[k, :])
    return R


def is_directed_acyclic(g: Admg) -> bool:
    return not np.any(np.diag(g.ancestor_matrix()))


def is_ancestral(g: Admg) -> bool:
    """No directed cycle and no bidirected edge between ancestor-related nodes.

    A bow ``i -> j, i <-> j`` is rejected: ``i`` is a parent, hence an
    ancestor, of ``j``.
    """
    A = g.ancestor_matrix()
    if np.any(np.diag(A)):
        return False
    return not np.any(g.B.astype(bool) & (A | A.T))


def is_bow_free(g: Admg) -> bool:
    return not np.any(g.B.astype(bool) & (g.D | g.D.T).astype(bool))


def skeleton_of(g: Admg | Pag) -> Skeleton:
    if isinstance(g, Pag):
        return Skeleton(g.adjacency())
    return Skeleton(g.adjacency())


def _incidence(g: Admg) -> list[list[tuple[int, int, int]]]:
    """Per node, the incident edges as ``(neighbor, mark_here, mark_there)``."""
    inc: list[list[tuple[int, int, int]]] = [[] for _ in range(g.d)]
    for i, j in g.directed_edges:
        inc[i].append((j, TAIL, ARROW))
        inc[j].append((i, ARROW, TAIL))
    for i, j in g.bidirected_edges:
        inc[i].append((j, ARROW, ARROW))
        inc[j].append((i, ARROW, ARROW))
    return inc


def m_separated(g: Admg, x: int, y: int, z: Iterable[int] = (),
                _anc: np.ndarray | None = None, _inc=None) -> bool:
    """Test whether ``x`` and ``y`` are m-separated given ``z``.

    Reachability search over (node, entered-with-arrowhead) states. A
    collider passes when it is in ``z`` or has a descendant in ``z``; a
    non-collider passes when it is not in ``z``.
    """
    z = set(int(v) for v in z)
    if x == y:
        raise GraphError("x and y must differ")
    if x in z or y in z:
        raise GraphError("x and y must not be in the conditioning set")
    A = g.ancestor_matrix() if _anc is None else _anc
    an_z = set(z)
    for v in z:
        an_z.update(np.nonzero(A[:, v])[0].tolist())
    inc = _incidence(g) if _inc is None else _inc

    seen = set()
    stack = []
    for nb, _, mark_nb in inc[x]:
        stack.append((nb, mark_nb == ARROW))
    while stack:
        state = stack.pop()
        if state in seen:
            continue
        seen.add(state)
        w, into = state
        if w == y:
            return False
        for nb, mark_w, mark_nb in inc[w]:
            collider = into and mark_w == ARROW
            if collider:
                if w not in an_z:
                    continue
            elif w in z:
                continue
            nxt = (nb, mark_nb == ARROW)
            if nxt not in seen:
                stack.append(nxt)
    return True


def _separable_exhaustive(g, i, j, anc, inc) -> bool:
    rest = [k for k in range(g.d) if k not in (i, j)]
    for size in range(len(rest) + 1):
        for z in combinations(rest, size):
            if m_separated(g, i, j, z, _anc=anc, _inc=inc):
                return True
    return False


def maximal_ancestral_projection(g: Admg, method: str = "ancestral") -> Admg:
    """Add an edge for every non-adjacent pair that no set m-separates.

    ``method="ancestral"`` tests only the canonical separator
    ``An({i, j}) \\ {i, j}``, which suffices in ancestral graphs;
    ``method="exhaustive"`` searches every subset of the remaining nodes.
    """
    if not is_ancestral(g):
        raise GraphError("maximal ancestral projection needs an ancestral graph")
    if method not in ("ancestral", "exhaustive"):
        raise ValueError(f"unknown method {method!r}")
    anc = g.ancestor_matrix()
    inc = _incidence(g)
    adj = g.adjacency()
    D = g.D.copy()
    B = g.B.copy()
    for i, j in combinations(range(g.d), 2):
        if adj[i, j]:
            continue
        if method == "exhaustive":
            separable = _separable_exhaustive(g, i, j, anc, inc)
        else:
            cand = (anc[:, i] | anc[:, j])
            cand[[i, j]] = False
            separable = m_separated(g, i, j, np.nonzero(cand)[0], _anc=anc, _inc=inc)
        if separable:
            continue
        if anc[i, j]:
            D[i, j] = 1
        elif anc[j, i]:
            D[j, i] = 1
        else:
            B[i, j] = B[j, i] = 1
    return Admg(D, B)


def is_maximal(g: Admg) -> bool:
    return maximal_ancestral_projection(g) == g


def mag_marks(g: Admg) -> np.ndarray:
    """Mark matrix of a MAG read off edge by edge."""
    M = np.zeros((g.d, g.d), dtype=np.int8)
    for i, j in g.directed_edges:
        M[i, j] = ARROW
        M[j, i] = TAIL
    for i, j in g.bidirected_edges:
        M[i, j] = M[j, i] = ARROW
    return M


def mag_to_pag(g: Admg, check: bool = True) -> Pag:
    """PAG of the Markov equivalence class of a MAG.

    Unshielded colliders are copied from ``g``; the arrowhead and tail rules
    (no selection bias) are then applied to a fixpoint, with colliders on
    discriminating paths read off ``g``.
    """
    from .orient import apply_rules, orient_unshielded_colliders

    if check:
        if not is_ancestral(g):
            raise GraphError("mag_to_pag needs an ancestral graph")
        if not is_bow_free(g):
            raise GraphError("mag_to_pag needs a graph without bows")
        if not is_maximal(g):
            raise GraphError("mag_to_pag needs a maximal graph")
    true_marks = mag_marks(g)
    adj = g.adjacency()
    M = np.where(adj, CIRCLE, NONE).astype(np.int8)

    def is_collider(a, b, c):
        return true_marks[a, b] == ARROW and true_marks[c, b] == ARROW

    orient_unshielded_colliders(M, is_collider)

    def discriminated_collider(theta, alpha, beta, gamma):
        return is_collider(alpha, beta, gamma)

    apply_rules(M, discriminated_collider)
    return Pag(M)
