import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spotmag.graph import Admg, is_ancestral, is_bow_free, is_maximal, skeleton_of
from spotmag.simulate import (Dataset, GraphSamplerConfig, ScmParams, SimulationError, generate_corpus,
                              implied_covariance, parameterize_scm, sample_dataset, sample_er_admg,
                              simulate_suite, task_rng)


def test_sampler_rejects_bad_config():
    with pytest.raises(SimulationError):
        GraphSamplerConfig(d=0)
    with pytest.raises(SimulationError):
        GraphSamplerConfig(d=(5, 3))
    with pytest.raises(SimulationError):
        GraphSamplerConfig(bidirected_fraction_range=(0.2, 1.5))
    with pytest.raises(SimulationError):
        GraphSamplerConfig(topology="grid")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40), st.sampled_from(["er", "sf"]))
def test_property_sampled_graphs_ancestral_bow_free(seed, d, topology):
    g = sample_er_admg(GraphSamplerConfig(d=d, topology=topology), np.random.default_rng(seed))
    assert g.d == d
    assert is_ancestral(g) and is_bow_free(g)


def test_edge_budget_matches_indegree():
    cfg = GraphSamplerConfig(d=40, indegree_range=(1.5, 1.5), bidirected_fraction_range=(0.1, 0.1))
    g = sample_er_admg(cfg, np.random.default_rng(0))
    assert len(g.directed_edges) + len(g.bidirected_edges) == 60
    assert len(g.bidirected_edges) == 6


def test_scale_free_has_hubs():
    cfg = GraphSamplerConfig(d=50, indegree_range=(1.5, 1.5), topology="sf")
    degs, er_degs = [], []
    for s in range(5):
        degs.append(sample_er_admg(cfg, np.random.default_rng(s)).adjacency().sum(0).max())
        er = GraphSamplerConfig(d=50, indegree_range=(1.5, 1.5))
        er_degs.append(sample_er_admg(er, np.random.default_rng(s)).adjacency().sum(0).max())
    assert np.mean(degs) > np.mean(er_degs)


def test_parameters_in_ranges_and_pd():
    g = sample_er_admg(GraphSamplerConfig(d=30), np.random.default_rng(3))
    p = parameterize_scm(g, np.random.default_rng(4))
    nz = np.abs(p.delta[g.D.astype(bool)])
    assert np.all((nz >= 0.5) & (nz <= 2.0))
    assert np.all(p.delta[~g.D.astype(bool)] == 0)
    off = np.abs(p.beta[g.B.astype(bool)])
    assert np.all((off >= 0.4) & (off <= 0.7))
    assert np.linalg.eigvalsh(p.beta)[0] > 0


def test_sample_covariance_converges_to_implied():
    g = Admg.from_edges(3, [(0, 1), (1, 2)], [(0, 2)])
    p = parameterize_scm(g, np.random.default_rng(1))
    for method in ("structural", "covariance"):
        data = sample_dataset(p, 200_000, np.random.default_rng(2), method=method)
        S = implied_covariance(p)
        assert np.max(np.abs(data.covariance() - S) / np.sqrt(np.outer(np.diag(S), np.diag(S)))) < 0.02


def test_sample_dataset_errors():
    p = ScmParams(np.zeros((2, 2)), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(SimulationError):
        sample_dataset(p, 10, 0)
    with pytest.raises(SimulationError):
        sample_dataset(ScmParams(np.zeros((2, 2)), np.eye(2)), 0, 0)


def test_params_validation():
    with pytest.raises(SimulationError):
        ScmParams(np.zeros((2, 2)), np.array([[1.0, 0.5], [0.0, 1.0]]))
    p = ScmParams(np.zeros((2, 2)), np.eye(2))
    assert ScmParams.from_dict(p.to_dict()).beta.tolist() == p.beta.tolist()


def test_dataset_validation_and_helpers():
    with pytest.raises(SimulationError):
        Dataset(np.array([[np.nan, 1.0]]))
    with pytest.raises(SimulationError):
        Dataset(np.zeros((3, 2)), ["a"])
    ds = Dataset(np.arange(12.0).reshape(4, 3))
    assert ds.column_names == ("V0", "V1", "V2")
    assert ds.permute([2, 0, 1]).column_names == ("V2", "V0", "V1")
    st_ds = ds.standardized()
    assert np.allclose(st_ds.X.std(axis=0), 1.0)
    assert ds.subset_rows([0, 2]).n == 2


def test_suite_reproducible_and_order_independent():
    cfg = GraphSamplerConfig(d=(8, 12))
    a = simulate_suite(4, cfg, 100, seed=7)
    b = simulate_suite(2, cfg, 100, seed=7, start=2)
    assert a[2].graph == b[0].graph
    assert np.array_equal(a[3].data.X, b[1].data.X)
    for inst in a:
        assert is_maximal(inst.mag)
        assert inst.skeleton == skeleton_of(inst.mag)


def test_task_rng_streams_differ():
    assert task_rng(1, 0).random() != task_rng(1, 1).random()


def test_generate_corpus_labels():
    corpus = generate_corpus(3, GraphSamplerConfig(d=6), 50, 0)
    assert len(corpus) == 3
    for ds, sk in corpus:
        assert ds.d == sk.d == 6 and ds.n == 50
    with pytest.raises(SimulationError):
        generate_corpus(-1, GraphSamplerConfig(d=6), 50, 0)
