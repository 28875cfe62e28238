"""Dataset-specific training data and few-shot adaptation of the cascade.

The dynamic simulator resamples rows, re-learns a graph with FCI, refits
its parameters on the full data with RICF and draws a fresh dataset from
the fitted model. Those (dataset, skeleton) pairs then train a small
model on top of the static cascade's outputs, whose prediction is blended
with the static posterior.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import HistGradientBoostingClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from ..fci import FciConfig, fci_learn
from ..graph import Skeleton, skeleton_of
from ..ricf import RicfError, ricf_fit
from ..simulate import Dataset, SimulationError, as_rng, sample_dataset
from .cascade import (CascadeModel, SkeletonPosterior, _platt, _smooth, f_beta_threshold,
                      infer_posterior)
from .features import StageContext, canonical_order, extract_pair_features

log = logging.getLogger(__name__)


def bootstrap_dynamic_corpus(data: Dataset, replicas: int = 20, subsample_fraction: float = 0.9,
                             rng=None, fci_cfg: FciConfig = FciConfig(),
                             n_out: int | None = None) -> list[tuple[Dataset, Skeleton]]:
    """Regenerated ``(dataset, skeleton)`` pairs fitted to ``data``.

    Each replica subsamples rows without replacement, learns a MAG with
    FCI, fits it to the full data with RICF and samples ``n_out`` rows
    (default ``data.n``) from the fit. Replicas whose fit fails are skipped
    with a warning.
    """
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    if not 0 < subsample_fraction <= 1:
        raise ValueError("subsample_fraction must lie in (0, 1]")
    rng = as_rng(rng)
    n = data.n
    m = max(int(round(subsample_fraction * n)), 5)
    n_out = n if n_out is None else n_out
    out = []
    for r in range(replicas):
        rows = np.sort(rng.choice(n, size=min(m, n), replace=False))
        g = fci_learn(data.subset_rows(rows), fci_cfg)
        try:
            fit = ricf_fit(data, g)
            regen = sample_dataset(fit.params, n_out, rng, column_names=data.column_names)
        except (RicfError, SimulationError, np.linalg.LinAlgError) as exc:
            warnings.warn(f"dynamic replica {r} skipped: {exc}", RuntimeWarning)
            continue
        out.append((regen, skeleton_of(g)))
    return out


@dataclass(frozen=True)
class AdaptConfig:
    """Adaptation settings.

    ``learner="logistic"`` fits a regularized logistic model on the static
    per-stage scores and logits only; ``"trees"`` fits boosted trees on the
    full pair features plus those scores, Platt-calibrated on held-out
    replicas. The output is ``static_weight * static + (1 - static_weight)
    * adapted``.
    """

    learner: str = "logistic"
    static_weight: float = 0.5
    C: float = 1.0
    max_iter: int = 60
    learning_rate: float = 0.1
    max_leaf_nodes: int = 15
    min_samples_leaf: int = 20
    label_smoothing: float = 0.05
    calibration_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.learner not in ("logistic", "trees"):
            raise ValueError(f"unknown learner {self.learner!r}")
        if not 0 <= self.static_weight <= 1:
            raise ValueError("static_weight must lie in [0, 1]")
        if not 0 <= self.calibration_fraction < 1:
            raise ValueError("calibration_fraction must lie in [0, 1)")


def _adapt_features(static: CascadeModel, data: Dataset):
    """Last-stage pair features plus every stage's static score and its logit."""
    scores = static.stage_scores(data)
    cfg = static.config
    d = data.d
    last = scores[-2] if len(scores) > 1 else None
    if last is None:
        ctx = StageContext.initial(d, cfg.max_cond, cfg.pool_size)
    else:
        keep = last >= static.stages[-2].prune_threshold
        np.fill_diagonal(keep, False)
        ctx = StageContext(keep, last, cfg.max_cond, cfg.pool_size)
    pairs = np.argwhere(np.triu(np.ones((d, d), dtype=bool), 1))
    base = extract_pair_features(data, ctx, pairs).X
    I, J = pairs[:, 0], pairs[:, 1]
    extra = []
    for s in scores:
        v = np.clip(s[I, J], 1e-6, 1 - 1e-6)
        extra += [v, np.log(v) - np.log1p(-v)]
    return pairs, np.column_stack([base, *extra])


@dataclass
class AdaptedModel:
    static: CascadeModel
    classifier: object
    threshold: float = 0.5
    metadata: dict = field(default_factory=dict)
    calib_a: float = 1.0
    calib_b: float = 0.0
    config: AdaptConfig = AdaptConfig()

    def _columns(self, X):
        if self.config.learner == "logistic":
            return X[:, -2 * len(self.static.stages):]
        return X

    def predict(self, X) -> np.ndarray:
        """Blend of the static final-stage score and the adapted classifier."""
        static = X[:, -2]
        if isinstance(self.classifier, _StaticPassThrough):
            return static
        Xa = self._columns(X)
        if self.config.learner == "logistic":
            p = self.classifier.predict_proba(Xa)[:, 1]
        else:
            z = self.calib_a * self.classifier.decision_function(Xa) + self.calib_b
            p = 1.0 / (1.0 + np.exp(-z))
        w = self.config.static_weight
        return w * static + (1 - w) * p

    def infer(self, data: Dataset) -> SkeletonPosterior:
        order = canonical_order(data)
        inv = np.empty(data.d, dtype=int)
        inv[order] = np.arange(data.d)
        cdata = data.permute(order)
        pairs, X = _adapt_features(self.static, cdata)
        prob = self.predict(X)
        P = np.zeros((data.d, data.d))
        P[pairs[:, 0], pairs[:, 1]] = prob
        P = P + P.T
        return SkeletonPosterior(np.clip(P[np.ix_(inv, inv)], 0.0, 1.0))


def adapt_model(static: CascadeModel, dynamic_corpus, cfg: AdaptConfig = AdaptConfig()) -> AdaptedModel:
    """Train a light classifier on dynamic-simulator data, keeping ``static`` fixed.

    The classifier sees the static model's per-stage scores (and, for the
    tree learner, the pair features too), so it can correct the static
    posterior where the target data departs from the training
    distribution. Its output is blended with the static posterior.
    """
    corpus = list(dynamic_corpus)
    if not corpus:
        raise ValueError("dynamic corpus is empty")
    Xs, ys = [], []
    for ds, sk in corpus:
        order = canonical_order(ds)
        pairs, X = _adapt_features(static, ds.permute(order))
        S = np.asarray(sk.S, dtype=bool)[np.ix_(order, order)]
        Xs.append(X)
        ys.append(S[pairs[:, 0], pairs[:, 1]].astype(int))
    y_all = np.concatenate(ys)
    meta = {"replicas": len(corpus), "pairs": int(len(y_all)), "learner": cfg.learner}
    if y_all.min() == y_all.max():
        warnings.warn("dynamic corpus has a single label class; adaptation keeps the static model",
                      RuntimeWarning)
        return AdaptedModel(static, _StaticPassThrough(static), static.decision_threshold(),
                            {**meta, "passthrough": True}, config=cfg)
    if cfg.learner == "logistic":
        model = AdaptedModel(static, None, 0.5, meta, config=cfg)
        X = np.vstack(Xs)
        model.classifier = make_pipeline(StandardScaler(), LogisticRegression(C=cfg.C, max_iter=2000))
        model.classifier.fit(model._columns(X), y_all)
        model.threshold = f_beta_threshold(model.predict(X), y_all)
        return model
    n_cal = int(round(cfg.calibration_fraction * len(corpus))) if len(corpus) > 1 else 0
    cal = set(np.random.default_rng(cfg.seed).permutation(len(corpus))[:n_cal].tolist())
    fit_idx = [i for i in range(len(corpus)) if i not in cal]
    X = np.vstack([Xs[i] for i in fit_idx])
    y = np.concatenate([ys[i] for i in fit_idx])
    if y.min() == y.max():
        # the calibration split took every example of one class: fit on everything
        cal = set()
        X, y = np.vstack(Xs), y_all
    X2, y2, w = _smooth(X, y, cfg.label_smoothing)
    clf = HistGradientBoostingClassifier(max_iter=cfg.max_iter, learning_rate=cfg.learning_rate,
                                         max_leaf_nodes=cfg.max_leaf_nodes,
                                         min_samples_leaf=cfg.min_samples_leaf,
                                         early_stopping=False, random_state=cfg.seed)
    clf.fit(X2, y2, sample_weight=w)
    model = AdaptedModel(static, clf, 0.5, {**meta, "calibration_replicas": sorted(cal)}, config=cfg)
    if cal:
        Xc = np.vstack([Xs[i] for i in sorted(cal)])
        yc = np.concatenate([ys[i] for i in sorted(cal)])
        model.calib_a, model.calib_b = _platt(clf.decision_function(Xc), yc)
        model.threshold = f_beta_threshold(model.predict(Xc), yc)
    else:
        model.threshold = f_beta_threshold(model.predict(X), y)
    return model


class _StaticPassThrough:
    """Classifier interface returning the static final-stage score."""

    def __init__(self, static):
        self.n_stages = len(static.stages)

    def predict_proba(self, X):
        # the final stage's score is the second-to-last appended column
        p = X[:, -2]
        return np.column_stack([1 - p, p])


def fci_bootstrap_posterior(data: Dataset, replicas: int = 20, rng=None,
                            fci_cfg: FciConfig = FciConfig()) -> SkeletonPosterior:
    """Adjacency frequencies of FCI over nonparametric bootstrap resamples."""
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    rng = as_rng(rng)
    d = data.d
    freq = np.zeros((d, d))
    for _ in range(replicas):
        rows = rng.integers(0, data.n, size=data.n)
        g = fci_learn(data.subset_rows(rows), fci_cfg)
        freq += g.adjacency()
    P = freq / replicas
    np.fill_diagonal(P, 0.0)
    return SkeletonPosterior(P)


def dynamic_posterior(static: CascadeModel, data: Dataset, replicas: int = 20,
                      subsample_fraction: float = 0.9, rng=None,
                      cfg: AdaptConfig = AdaptConfig()) -> SkeletonPosterior:
    """Bootstrap a dynamic corpus for ``data``, adapt, and infer."""
    corpus = bootstrap_dynamic_corpus(data, replicas, subsample_fraction, rng)
    if not corpus:
        warnings.warn("no usable dynamic replicas; falling back to the static posterior", RuntimeWarning)
        return infer_posterior(static, data)
    return adapt_model(static, corpus, cfg).infer(data)
