"""Cascade of boosted-tree classifiers that amortizes p(S | data).

Stage ``k`` scores every pair that survived stage ``k - 1``; its features
use the surviving pairs as conditioning neighbourhoods and include the
previous score. Pairs dropped by a stage keep that stage's calibrated
score, so nothing is ever forced to exactly zero.
"""
from __future__ import annotations

import logging
import pickle
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.ensemble import HistGradientBoostingClassifier
from sklearn.linear_model import LogisticRegression

from ..graph import Skeleton
from ..simulate import Dataset
from .features import SCHEMA_VERSION, StageContext, canonical_order, extract_pair_features

log = logging.getLogger(__name__)

MODEL_FORMAT = "spotmag-cascade"
MODEL_VERSION = 1


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class CascadeConfig:
    n_stages: int = 3
    max_cond: int = 3
    pool_size: int = 8
    label_smoothing: float = 0.05
    prune_threshold: float = 0.01
    calibration_fraction: float = 0.25
    max_iter: int = 200
    learning_rate: float = 0.05
    max_leaf_nodes: int = 7
    min_samples_leaf: int = 50
    l2_regularization: float = 1.0
    recall_beta: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_stages < 1:
            raise ValueError("a cascade needs at least one stage")
        if not 0 <= self.label_smoothing < 0.5:
            raise ValueError("label_smoothing must lie in [0, 0.5)")
        if not 0 < self.calibration_fraction < 1:
            raise ValueError("calibration_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class SkeletonPosterior:
    """Symmetric matrix of pairwise adjacency probabilities."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("posterior must be square")
        if not np.allclose(p, p.T, atol=0):
            raise ValueError("posterior must be symmetric")
        if np.any(np.diag(p) != 0):
            raise ValueError("posterior diagonal must be zero")
        if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
            raise ValueError("posterior entries must lie in [0, 1]")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)

    @property
    def d(self) -> int:
        return self.p.shape[0]

    def threshold(self, tau: float = 0.5) -> Skeleton:
        return Skeleton(self.p >= tau)

    def to_dict(self) -> dict:
        return {"d": self.d, "p": self.p.tolist()}

    @classmethod
    def from_dict(cls, obj) -> "SkeletonPosterior":
        return cls(np.asarray(obj["p"], dtype=float))

    def permute(self, perm) -> "SkeletonPosterior":
        perm = np.asarray(perm)
        return SkeletonPosterior(self.p[np.ix_(perm, perm)])


class _Constant:
    """Stand-in classifier for single-class training data."""

    def __init__(self, p):
        self.p = float(p)

    def decision_function(self, X):
        return np.full(len(X), _logit(self.p))


def _logit(p):
    p = np.clip(p, 1e-9, 1 - 1e-9)
    return np.log(p) - np.log1p(-p)


@dataclass
class Stage:
    classifier: object
    calib_a: float = 1.0
    calib_b: float = 0.0
    threshold: float = 0.5
    prune_threshold: float = 0.01

    def raw(self, X):
        clf = self.classifier
        if isinstance(clf, _Constant):
            return clf.decision_function(X)
        return clf.decision_function(X)

    def predict(self, X):
        z = self.calib_a * self.raw(X) + self.calib_b
        return 1.0 / (1.0 + np.exp(-z))


@dataclass
class CascadeModel:
    stages: list
    config: CascadeConfig
    schema_version: int = SCHEMA_VERSION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ValueError("a cascade needs at least one stage")

    def stage_scores(self, data: Dataset) -> list[np.ndarray]:
        """Per-stage probability matrices (later stages overwrite surviving pairs)."""
        if self.schema_version != SCHEMA_VERSION:
            raise SchemaError(f"model schema {self.schema_version} != extractor schema {SCHEMA_VERSION}")
        cfg = self.config
        d = data.d
        ctx = StageContext.initial(d, cfg.max_cond, cfg.pool_size)
        score = np.zeros((d, d))
        out = []
        for stage in self.stages:
            feats = extract_pair_features(data, ctx)
            if len(feats.pairs):
                prob = stage.predict(feats.X)
                I, J = feats.pairs[:, 0], feats.pairs[:, 1]
                score = score.copy()
                score[I, J] = score[J, I] = prob
            out.append(score)
            keep = score >= stage.prune_threshold
            np.fill_diagonal(keep, False)
            ctx = StageContext(keep & ctx.candidates, score, cfg.max_cond, cfg.pool_size)
        return out

    def decision_threshold(self) -> float:
        return self.stages[-1].threshold

    def save(self, path) -> None:
        blob = {"format": MODEL_FORMAT, "version": MODEL_VERSION,
                "schema_version": self.schema_version, "config": asdict(self.config),
                "stages": self.stages, "metadata": self.metadata}
        with open(path, "wb") as fh:
            pickle.dump(blob, fh, protocol=4)

    @classmethod
    def load(cls, path) -> "CascadeModel":
        with open(path, "rb") as fh:
            blob = pickle.load(fh)
        if not isinstance(blob, dict) or blob.get("format") != MODEL_FORMAT:
            raise SchemaError(f"{path} is not a cascade model file")
        if blob.get("version") != MODEL_VERSION:
            raise SchemaError(f"unsupported model file version {blob.get('version')}")
        if blob.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"model schema {blob.get('schema_version')} != extractor schema {SCHEMA_VERSION}")
        return cls(blob["stages"], CascadeConfig(**blob["config"]), blob["schema_version"], blob["metadata"])


def _smooth(X, y, eps):
    """Label smoothing as a weighted duplication of every row."""
    if eps == 0:
        return X, y.astype(int), np.ones(len(y))
    X2 = np.vstack([X, X])
    y2 = np.r_[y, 1 - y].astype(int)
    w = np.r_[np.full(len(y), 1 - eps), np.full(len(y), eps)]
    return X2, y2, w


def _fit_classifier(X, y, cfg: CascadeConfig):
    if y.min() == y.max():
        warnings.warn("single-class stage; using a constant classifier", RuntimeWarning)
        floor = cfg.label_smoothing if y[0] == 0 else 1 - cfg.label_smoothing
        return _Constant(floor)
    Xs, ys, w = _smooth(X, y, cfg.label_smoothing)
    clf = HistGradientBoostingClassifier(
        max_iter=cfg.max_iter, learning_rate=cfg.learning_rate, max_leaf_nodes=cfg.max_leaf_nodes,
        min_samples_leaf=cfg.min_samples_leaf, l2_regularization=cfg.l2_regularization,
        early_stopping=False, random_state=cfg.seed)
    clf.fit(Xs, ys, sample_weight=w)
    return clf


def _platt(z, y):
    if y.min() == y.max():
        return 1.0, 0.0
    lr = LogisticRegression(C=1e6, solver="lbfgs", max_iter=1000)
    lr.fit(z.reshape(-1, 1), y)
    return float(lr.coef_[0, 0]), float(lr.intercept_[0])


def f_beta_threshold(p, y, beta: float = 2.0) -> float:
    """Score threshold maximizing F-beta (beta > 1 weights recall)."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=bool)
    if not y.any():
        return 0.5
    order = np.argsort(-p, kind="mergesort")
    ps, ys = p[order], y[order]
    tp = np.cumsum(ys)
    k = np.arange(1, len(ps) + 1)
    last = np.r_[ps[1:] != ps[:-1], True]
    prec = tp / k
    rec = tp / y.sum()
    b2 = beta * beta
    with np.errstate(invalid="ignore", divide="ignore"):
        f = (1 + b2) * prec * rec / (b2 * prec + rec)
    f = np.where(last, np.nan_to_num(f), -1)
    return float(ps[int(np.argmax(f))])


def _labels(skel: Skeleton, pairs):
    S = np.asarray(skel.S, dtype=bool)
    return S[pairs[:, 0], pairs[:, 1]].astype(int)


def train_cascade(corpus, cfg: CascadeConfig = CascadeConfig(), metadata: dict | None = None) -> CascadeModel:
    """Fit the cascade stage by stage on ``(Dataset, Skeleton)`` pairs.

    Datasets are split once into a fitting part and a calibration part; the
    calibration part fits each stage's Platt scaling and its recall-leaning
    decision threshold.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("training corpus is empty")
    rng = np.random.default_rng(cfg.seed)
    n_cal = max(1, int(round(cfg.calibration_fraction * len(corpus)))) if len(corpus) > 1 else 0
    perm = rng.permutation(len(corpus))
    cal_idx = set(perm[:n_cal].tolist())
    ctxs = [StageContext.initial(ds.d, cfg.max_cond, cfg.pool_size) for ds, _ in corpus]
    scores = [np.zeros((ds.d, ds.d)) for ds, _ in corpus]
    stages = []
    for k in range(cfg.n_stages):
        feats = [extract_pair_features(ds, ctx) for (ds, _), ctx in zip(corpus, ctxs)]
        labels = [_labels(sk, f.pairs) for (_, sk), f in zip(corpus, feats)]
        fit_rows = [i for i in range(len(corpus)) if i not in cal_idx] or list(range(len(corpus)))
        cal_rows = sorted(cal_idx) or fit_rows
        Xf = np.vstack([feats[i].X for i in fit_rows])
        yf = np.concatenate([labels[i] for i in fit_rows])
        if len(yf) == 0:
            raise ValueError(f"stage {k} has no candidate pairs to train on")
        clf = _fit_classifier(Xf, yf, cfg)
        stage = Stage(clf, prune_threshold=cfg.prune_threshold)
        Xc = np.vstack([feats[i].X for i in cal_rows])
        yc = np.concatenate([labels[i] for i in cal_rows])
        if len(yc) and not isinstance(clf, _Constant):
            stage.calib_a, stage.calib_b = _platt(stage.raw(Xc), yc)
        if len(yc):
            stage.threshold = f_beta_threshold(stage.predict(Xc), yc, cfg.recall_beta)
        stages.append(stage)
        log.info("stage %d trained on %d pairs", k, len(yf))
        for i, ((ds, _), f) in enumerate(zip(corpus, feats)):
            s = scores[i].copy()
            if len(f.pairs):
                prob = stage.predict(f.X)
                s[f.pairs[:, 0], f.pairs[:, 1]] = prob
                s[f.pairs[:, 1], f.pairs[:, 0]] = prob
            scores[i] = s
            keep = (s >= cfg.prune_threshold) & ctxs[i].candidates
            np.fill_diagonal(keep, False)
            ctxs[i] = StageContext(keep, s, cfg.max_cond, cfg.pool_size)
    meta = {"seed": cfg.seed, "n_datasets": len(corpus), "calibration_datasets": sorted(cal_idx)}
    meta.update(metadata or {})
    return CascadeModel(stages, cfg, SCHEMA_VERSION, meta)


def infer_posterior(model: CascadeModel, data: Dataset) -> SkeletonPosterior:
    """Final-stage probabilities for every pair."""
    if data.d == 1:
        return SkeletonPosterior(np.zeros((1, 1)))
    # evaluate in the canonical column order so relabeling commutes exactly
    order = canonical_order(data)
    inv = np.empty(data.d, dtype=int)
    inv[order] = np.arange(data.d)
    P = model.stage_scores(data.permute(order))[-1]
    P = P[np.ix_(inv, inv)]
    np.fill_diagonal(P, 0.0)
    return SkeletonPosterior(np.clip(P, 0.0, 1.0))
