import warnings

import numpy as np
import pytest
from sklearn.metrics import log_loss

from spotmag.graph import Skeleton
from spotmag.metrics import posterior_quality
from spotmag.posterior import features as F
from spotmag.posterior.cascade import (CascadeConfig, CascadeModel, SchemaError, SkeletonPosterior,
                                       f_beta_threshold, infer_posterior, train_cascade)
from spotmag.posterior.dynamic import (AdaptConfig, adapt_model, bootstrap_dynamic_corpus,
                                       dynamic_posterior, fci_bootstrap_posterior)
from spotmag.simulate import Dataset, GraphSamplerConfig, generate_corpus

SMALL = CascadeConfig(n_stages=2, max_iter=40, seed=0)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(16, GraphSamplerConfig(d=(8, 12)), 300, 1)


@pytest.fixture(scope="module")
def model(corpus):
    return train_cascade(corpus, SMALL)


# ---- features ----------------------------------------------------------------------------

def test_feature_shape_and_no_nan(corpus):
    ds, _ = corpus[0]
    f = F.extract_pair_features(ds)
    assert f.X.shape == (ds.d * (ds.d - 1) // 2, len(F.feature_names()))
    assert np.all(np.isfinite(f.X))
    ctx = F.StageContext(~np.eye(ds.d, dtype=bool), np.full((ds.d, ds.d), 0.5))
    assert F.extract_pair_features(ds, ctx).X.shape[1] == len(F.feature_names(with_prev=True))


def test_feature_permutation_equivariance(corpus):
    ds, _ = corpus[1]
    perm = np.random.default_rng(0).permutation(ds.d)
    a = F.extract_pair_features(ds).as_map()
    b = F.extract_pair_features(ds.permute(perm)).as_map()
    for (i, j), v in b.items():
        key = tuple(sorted((int(perm[i]), int(perm[j]))))
        assert np.array_equal(v, a[key])


def test_perfect_correlation_feature():
    x = np.random.default_rng(0).standard_normal(100)
    ds = Dataset(np.c_[x, -3 * x, np.random.default_rng(1).standard_normal(100)])
    f = F.extract_pair_features(ds)
    names = f.names
    assert f.as_map()[(0, 1)][names.index("abs_corr")] == pytest.approx(1.0)


def test_independent_columns_p0_mean_half():
    rng = np.random.default_rng(2)
    vals = []
    for _ in range(1000):
        f = F.extract_pair_features(Dataset(rng.standard_normal((50, 2))), F.StageContext.initial(2, 1))
        vals.append(f.X[0, f.names.index("p0")])
    assert np.mean(vals) == pytest.approx(0.5, abs=0.03)


def test_constant_column_uses_sentinel():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((60, 4))
    X[:, 2] = 1.5
    f = F.extract_pair_features(Dataset(X))
    assert f.degenerate.tolist() == [False, False, True, False]
    row = f.as_map()[(1, 2)]
    assert row[f.names.index("p0")] == F.SENTINEL_P
    assert row[f.names.index("abs_corr")] == 0.0
    assert np.all(np.isfinite(f.X))


def test_feature_requires_enough_rows():
    with pytest.raises(ValueError):
        F.extract_pair_features(Dataset(np.random.default_rng(4).standard_normal((5, 3))))


# ---- posterior type ----------------------------------------------------------------------

def test_skeleton_posterior_validation():
    with pytest.raises(ValueError):
        SkeletonPosterior(np.array([[0, 0.2], [0.3, 0]]))
    with pytest.raises(ValueError):
        SkeletonPosterior(np.array([[0.1, 0.2], [0.2, 0]]))
    with pytest.raises(ValueError):
        SkeletonPosterior(np.array([[0, 1.2], [1.2, 0]]))
    p = SkeletonPosterior(np.array([[0, 0.7], [0.7, 0]]))
    assert p.threshold(0.5) == Skeleton(np.array([[0, 1], [1, 0]], dtype=bool))
    assert SkeletonPosterior.from_dict(p.to_dict()).p.tolist() == p.p.tolist()


# ---- cascade -----------------------------------------------------------------------------

def test_inference_valid_posterior(model, corpus):
    ds, _ = corpus[0]
    post = infer_posterior(model, ds)
    assert post.p.shape == (ds.d, ds.d)
    assert np.array_equal(post.p, post.p.T)
    assert np.all(np.diag(post.p) == 0) and post.p.min() >= 0 and post.p.max() <= 1


def test_inference_permutation_equivariant(model, corpus):
    ds, _ = corpus[2]
    perm = np.random.default_rng(5).permutation(ds.d)
    a = infer_posterior(model, ds)
    b = infer_posterior(model, ds.permute(perm))
    assert np.array_equal(a.permute(perm).p, b.p)


def test_training_deterministic(corpus, model):
    other = train_cascade(corpus, SMALL)
    ds, _ = corpus[3]
    assert np.array_equal(infer_posterior(model, ds).p, infer_posterior(other, ds).p)


def test_in_distribution_better_than_chance(model):
    from spotmag.metrics import posterior_quality

    held = generate_corpus(4, GraphSamplerConfig(d=(8, 12)), 300, 99)
    aurocs = [posterior_quality(infer_posterior(model, ds), sk).auroc for ds, sk in held]
    assert np.mean(aurocs) > 0.85


def test_single_class_corpus_below_floor():
    rng = np.random.default_rng(6)
    empty = [(Dataset(rng.standard_normal((100, 5))), Skeleton(np.zeros((5, 5), dtype=bool)))
             for _ in range(4)]
    with pytest.warns(RuntimeWarning, match="single-class"):
        m = train_cascade(empty, CascadeConfig(n_stages=2))
    post = infer_posterior(m, Dataset(rng.standard_normal((100, 5))))
    assert post.p.max() <= 0.05 + 1e-12


def test_save_load_roundtrip(model, corpus, tmp_path):
    path = tmp_path / "m.pkl"
    model.save(path)
    loaded = CascadeModel.load(path)
    ds, _ = corpus[4]
    assert np.array_equal(infer_posterior(model, ds).p, infer_posterior(loaded, ds).p)


def test_schema_mismatch_rejected(model, corpus, tmp_path):
    bad = CascadeModel(model.stages, model.config, F.SCHEMA_VERSION + 1, {})
    with pytest.raises(SchemaError):
        infer_posterior(bad, corpus[0][0])
    path = tmp_path / "x.pkl"
    bad.save(path)
    with pytest.raises(SchemaError):
        CascadeModel.load(path)
    import pickle

    with open(tmp_path / "junk.pkl", "wb") as fh:
        pickle.dump({"format": "other"}, fh)
    with pytest.raises(SchemaError):
        CascadeModel.load(tmp_path / "junk.pkl")


def test_empty_corpus_and_bad_config():
    with pytest.raises(ValueError):
        train_cascade([])
    with pytest.raises(ValueError):
        CascadeConfig(n_stages=0)


def test_f_beta_threshold_prefers_recall():
    rng = np.random.default_rng(7)
    y = rng.random(2000) < 0.2
    p = np.clip(0.25 + 0.4 * y + rng.normal(0, 0.2, 2000), 0, 1)
    thr = f_beta_threshold(p, y, beta=2.0)
    pred = p >= thr
    recall = (pred & y).sum() / y.sum()
    precision = (pred & y).sum() / pred.sum()
    assert recall >= precision
    assert thr <= f_beta_threshold(p, y, beta=1.0)


def test_boosting_training_loss_decreases(corpus):
    from spotmag.posterior.cascade import _fit_classifier, _labels

    ds, sk = corpus[0]
    Xs, ys = [], []
    for ds, sk in corpus[:6]:
        f = F.extract_pair_features(ds)
        Xs.append(f.X)
        ys.append(_labels(sk, f.pairs))
    X, y = np.vstack(Xs), np.concatenate(ys)
    clf = _fit_classifier(X, y, CascadeConfig(max_iter=30, label_smoothing=0.0))
    losses = [log_loss(y, p[:, 1]) for p in clf.staged_predict_proba(X)]
    assert np.all(np.diff(losses) <= 1e-12)


def test_stage_thresholds_recall_leaning(model, corpus):
    ds, sk = corpus[5]
    post = infer_posterior(model, ds)
    pred = post.threshold(model.decision_threshold()).upper()
    truth = sk.upper()
    tp = (pred & truth).sum()
    assert tp / truth.sum() >= tp / max(pred.sum(), 1) - 0.05


# ---- dynamic simulator and adaptation ----------------------------------------------------

def test_bootstrap_dynamic_corpus(corpus):
    ds, _ = corpus[0]
    dyn = bootstrap_dynamic_corpus(ds, replicas=3, rng=np.random.default_rng(8))
    assert len(dyn) == 3
    for d2, sk in dyn:
        assert d2.d == ds.d and d2.n == ds.n and sk.d == ds.d
    with pytest.raises(ValueError):
        bootstrap_dynamic_corpus(ds, replicas=0)
    with pytest.raises(ValueError):
        bootstrap_dynamic_corpus(ds, subsample_fraction=1.5)


@pytest.mark.parametrize("learner", ["logistic", "trees"])
def test_adapted_model_valid_and_equivariant(model, corpus, learner):
    ds, _ = corpus[6]
    dyn = bootstrap_dynamic_corpus(ds, replicas=4, rng=np.random.default_rng(9))
    adapted = adapt_model(model, dyn, AdaptConfig(learner=learner, max_iter=20))
    post = adapted.infer(ds)
    assert np.array_equal(post.p, post.p.T) and np.all(np.diag(post.p) == 0)
    perm = np.random.default_rng(10).permutation(ds.d)
    assert np.array_equal(adapted.infer(ds.permute(perm)).p, post.permute(perm).p)


def test_adapt_static_weight_one_is_static(model, corpus):
    ds, _ = corpus[6]
    dyn = bootstrap_dynamic_corpus(ds, replicas=3, rng=np.random.default_rng(9))
    adapted = adapt_model(model, dyn, AdaptConfig(static_weight=1.0))
    assert np.allclose(adapted.infer(ds).p, infer_posterior(model, ds).p, atol=1e-12)


def test_adapt_on_static_distribution_keeps_kl(model):
    """A/A check: adapting on data from the training distribution changes KL by < 10%."""
    fresh = generate_corpus(10, GraphSamplerConfig(d=(8, 12)), 300, 77)
    adapted = adapt_model(model, fresh[:6])
    kl_s = np.mean([posterior_quality(infer_posterior(model, ds), sk).kl for ds, sk in fresh[6:]])
    kl_a = np.mean([posterior_quality(adapted.infer(ds), sk).kl for ds, sk in fresh[6:]])
    assert kl_a <= 1.1 * kl_s


def test_adapt_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(learner="svm")
    with pytest.raises(ValueError):
        AdaptConfig(static_weight=1.5)


def test_adapt_single_class_passthrough(model, corpus):
    ds, _ = corpus[7]
    dyn = [(ds, Skeleton(np.zeros((ds.d, ds.d), dtype=bool)))]
    with pytest.warns(RuntimeWarning):
        adapted = adapt_model(model, dyn)
    assert np.allclose(adapted.infer(ds).p, infer_posterior(model, ds).p)


def test_dynamic_posterior_runs(model, corpus):
    ds, _ = corpus[8]
    post = dynamic_posterior(model, ds, replicas=3, rng=np.random.default_rng(11),
                             cfg=AdaptConfig(max_iter=10))
    assert post.d == ds.d


def test_fci_bootstrap_posterior(corpus):
    ds, sk = corpus[0]
    post = fci_bootstrap_posterior(ds, replicas=5, rng=np.random.default_rng(12))
    assert np.all(np.isin(np.round(post.p * 5, 9), np.arange(6)))
    assert np.all(np.diag(post.p) == 0)
