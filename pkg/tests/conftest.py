import json
from pathlib import Path

import numpy as np
import pytest

from spotmag.graph import Admg, is_ancestral

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture_graphs():
    with open(FIXTURES / "graphs.json") as fh:
        raw = json.load(fh)
    return {k: Admg.from_edges(v["d"], v["directed"], v["bidirected"]) for k, v in raw.items()}


def random_admg(rng, d, p_dir=0.35, p_bi=0.2):
    """Acyclic directed part over a random order plus independent bidirected edges."""
    order = rng.permutation(d)
    D = np.zeros((d, d), dtype=np.int8)
    B = np.zeros((d, d), dtype=np.int8)
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < p_dir:
                D[order[a], order[b]] = 1
            if rng.random() < p_bi:
                B[order[a], order[b]] = B[order[b], order[a]] = 1
    return Admg(D, B)


def random_ancestral(rng, d, p_dir=0.35, p_bi=0.2):
    """Random ancestral ADMG: bidirected edges only between ancestrally unrelated pairs."""
    g = random_admg(rng, d, p_dir, 0.0)
    A = g.ancestor_matrix()
    B = np.zeros_like(g.D)
    for i in range(d):
        for j in range(i + 1, d):
            if not (A[i, j] or A[j, i] or g.D[i, j] or g.D[j, i]) and rng.random() < p_bi:
                B[i, j] = B[j, i] = 1
    g = Admg(g.D, B)
    assert is_ancestral(g)
    return g


@pytest.fixture(scope="session")
def fixture_graphs():
    return load_fixture_graphs()


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
