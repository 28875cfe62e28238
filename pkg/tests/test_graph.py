from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (equivalence_class_marks, inseparable_bruteforce, is_ancestral_bruteforce,
                     m_separated_bruteforce)
from conftest import load_fixture_graphs, random_admg, random_ancestral
from spotmag.graph import (ARROW, CIRCLE, NONE, TAIL, Admg, GraphError, Pag, Skeleton, is_ancestral,
                           is_bow_free, is_maximal, m_separated, mag_to_pag,
                           maximal_ancestral_projection, skeleton_of)

FIXTURES = load_fixture_graphs()
SMALL = {k: g for k, g in FIXTURES.items() if g.d <= 6}


def _all_queries(d):
    for x, y in combinations(range(d), 2):
        rest = [k for k in range(d) if k not in (x, y)]
        for size in range(len(rest) + 1):
            for z in combinations(rest, size):
                yield x, y, z


def _random_graphs(count, seed):
    rng = np.random.default_rng(seed)
    return [random_admg(rng, int(rng.integers(2, 8))) for _ in range(count)]


# ---- construction and validation ---------------------------------------------------------

def test_admg_rejects_self_loops_and_asymmetric_b():
    with pytest.raises(GraphError):
        Admg.from_edges(2, [(0, 0)])
    B = np.zeros((2, 2), dtype=int)
    B[0, 1] = 1
    with pytest.raises(GraphError):
        Admg(np.zeros((2, 2), dtype=int), B)


def test_admg_dict_roundtrip_and_permute():
    g = FIXTURES["six_mixed"]
    assert Admg.from_dict(g.to_dict()) == g
    perm = [5, 3, 1, 0, 2, 4]
    h = g.permute(perm)
    inv = np.argsort(perm)
    assert h.permute(inv) == g
    # edge old perm[a] -> perm[b] becomes a -> b
    for a, b in h.directed_edges:
        assert g.D[perm[a], perm[b]]


def test_skeleton_and_pag_validation():
    with pytest.raises(Exception):
        Skeleton(np.array([[0, 1], [0, 0]]))
    sk = skeleton_of(FIXTURES["chain"])
    assert sk.n_edges == 2
    M = np.zeros((2, 2), dtype=np.int8)
    M[0, 1] = ARROW
    with pytest.raises(Exception):
        Pag(M)  # one-sided mark


# ---- ancestrality ------------------------------------------------------------------------

def test_bow_is_not_ancestral():
    g = Admg.from_edges(2, [(0, 1)], [(0, 1)])
    assert not is_ancestral(g)
    assert not is_bow_free(g)


def test_directed_cycle_not_ancestral():
    assert not is_ancestral(Admg.from_edges(3, [(0, 1), (1, 2), (2, 0)]))


def test_almost_directed_cycle_not_ancestral():
    assert not is_ancestral(Admg.from_edges(3, [(0, 1), (1, 2)], [(0, 2)]))


@pytest.mark.parametrize("seed", range(4))
def test_is_ancestral_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        d = int(rng.integers(1, 7))
        D = (rng.random((d, d)) < 0.25).astype(np.int8)
        np.fill_diagonal(D, 0)
        B = np.triu((rng.random((d, d)) < 0.2).astype(np.int8), 1)
        g = Admg(D, B + B.T)
        assert is_ancestral(g) == is_ancestral_bruteforce(g)


# ---- m-separation ------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(SMALL))
def test_m_separation_fixtures_exhaustive(name):
    g = SMALL[name]
    for x, y, z in _all_queries(g.d):
        assert m_separated(g, x, y, z) == m_separated_bruteforce(g, x, y, z), (x, y, z)


def test_m_separation_random_graphs_exhaustive():
    for g in _random_graphs(200, 11):
        for x, y, z in _all_queries(g.d):
            assert m_separated(g, x, y, z) == m_separated_bruteforce(g, x, y, z), (g, x, y, z)


def test_m_separation_textbook_cases():
    collider = FIXTURES["collider"]
    assert m_separated(collider, 0, 1, ())
    assert not m_separated(collider, 0, 1, (2,))
    chain = FIXTURES["chain"]
    assert not m_separated(chain, 0, 2, ())
    assert m_separated(chain, 0, 2, (1,))
    m = FIXTURES["m_structure"]  # 0<->2<->1<->3
    assert m_separated(m, 0, 3, ())
    assert not m_separated(m, 0, 3, (1, 2))


def test_m_separation_argument_errors():
    g = FIXTURES["chain"]
    with pytest.raises(GraphError):
        m_separated(g, 0, 0, ())
    with pytest.raises(GraphError):
        m_separated(g, 0, 2, (0,))


# ---- maximal projection ------------------------------------------------------------------

def _check_projection(g):
    proj = maximal_ancestral_projection(g)
    assert proj == maximal_ancestral_projection(g, method="exhaustive")
    adj = g.adjacency()
    for i, j in combinations(range(g.d), 2):
        if not adj[i, j]:
            assert proj.adjacency()[i, j] == inseparable_bruteforce(g, i, j)
    assert is_ancestral(proj)
    assert is_maximal(proj)
    # original edges untouched
    assert np.all(proj.D >= g.D) and np.all(proj.B >= g.B)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_projection_fixtures(name):
    _check_projection(SMALL[name])


def test_projection_random_ancestral():
    rng = np.random.default_rng(5)
    for _ in range(200):
        _check_projection(random_ancestral(rng, int(rng.integers(2, 8))))


def test_projection_adds_inducing_path_edge():
    g = FIXTURES["non_maximal_inducing_path"]
    assert not is_maximal(g)
    proj = maximal_ancestral_projection(g)
    assert proj.B[0, 3] == 1 and proj.B[3, 0] == 1


def test_projection_rejects_non_ancestral():
    with pytest.raises(GraphError):
        maximal_ancestral_projection(Admg.from_edges(2, [(0, 1)], [(0, 1)]))


def test_projection_preserves_separations():
    rng = np.random.default_rng(9)
    for _ in range(40):
        g = random_ancestral(rng, int(rng.integers(2, 7)))
        proj = maximal_ancestral_projection(g)
        for x, y, z in _all_queries(g.d):
            if proj.adjacency()[x, y]:
                continue
            assert m_separated(g, x, y, z) == m_separated(proj, x, y, z)


# ---- PAG ---------------------------------------------------------------------------------

def _maximal_fixtures():
    out = {}
    for k, g in SMALL.items():
        if is_ancestral(g) and is_maximal(g) and g.adjacency().sum() // 2 <= 7:
            out[k] = g
    return out


@pytest.mark.parametrize("name", sorted(_maximal_fixtures()))
def test_mag_to_pag_matches_equivalence_class(name):
    g = SMALL[name]
    expected, _ = equivalence_class_marks(g)
    assert np.array_equal(mag_to_pag(g).M, expected)


def test_mag_to_pag_random_mags():
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 40:
        g = maximal_ancestral_projection(random_ancestral(rng, int(rng.integers(2, 6)), 0.4, 0.25))
        if g.adjacency().sum() // 2 > 6:
            continue
        expected, _ = equivalence_class_marks(g)
        assert np.array_equal(mag_to_pag(g).M, expected), g
        checked += 1


def test_pag_textbook_marks():
    p = mag_to_pag(FIXTURES["collider"]).M
    assert p[0, 2] == ARROW and p[1, 2] == ARROW
    assert p[2, 0] == CIRCLE and p[2, 1] == CIRCLE
    p = mag_to_pag(FIXTURES["chain"]).M
    assert set(p[p != NONE].tolist()) == {CIRCLE}
    # y-structure: 2 -> 3 is a visible tail
    p = mag_to_pag(FIXTURES["y_structure"]).M
    assert p[2, 3] == ARROW and p[3, 2] == TAIL


def test_mag_to_pag_checks_input():
    with pytest.raises(GraphError):
        mag_to_pag(Admg.from_edges(2, [(0, 1)], [(0, 1)]))
    with pytest.raises(GraphError):
        mag_to_pag(FIXTURES["non_maximal_inducing_path"])


def test_pag_dict_roundtrip_and_permute():
    p = mag_to_pag(FIXTURES["y_structure"])
    assert Pag.from_dict(p.to_dict()) == p
    perm = [3, 1, 0, 2]
    assert mag_to_pag(FIXTURES["y_structure"].permute(perm)) == p.permute(perm)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_property_pag_permutation_equivariant(seed, d):
    rng = np.random.default_rng(seed)
    g = maximal_ancestral_projection(random_ancestral(rng, d))
    perm = rng.permutation(d)
    assert mag_to_pag(g.permute(perm)) == mag_to_pag(g).permute(perm)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7))
def test_property_skeleton_symmetric(seed, d):
    g = random_admg(np.random.default_rng(seed), d)
    S = skeleton_of(g).S
    assert np.array_equal(S, S.T) and not np.any(np.diag(S))
