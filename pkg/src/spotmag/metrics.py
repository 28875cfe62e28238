"""Evaluation measures for PAGs, skeletons and skeleton posteriors."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .graph import ARROW, TAIL, Admg, GraphError, Pag, Skeleton, mag_to_pag

KL_CLAMP = 1e-6


@dataclass(frozen=True)
class Scores:
    """Confusion-based scores for one endpoint class.

    ``flag`` is set when a ratio had an empty denominator: when both the
    prediction and the truth are empty the class counts as perfectly
    recovered, otherwise the undefined ratio is reported as 0.
    """

    f1: float
    tpr: float
    fdr: float
    tp: int
    n_pred: int
    n_true: int
    flag: bool = False


def _scores(pred: np.ndarray, true: np.ndarray) -> Scores:
    tp = int(np.count_nonzero(pred & true))
    n_pred = int(np.count_nonzero(pred))
    n_true = int(np.count_nonzero(true))
    if n_pred == 0 and n_true == 0:
        return Scores(1.0, 1.0, 0.0, 0, 0, 0, True)
    flag = n_pred == 0 or n_true == 0
    tpr = tp / n_true if n_true else 0.0
    fdr = 1.0 - tp / n_pred if n_pred else 0.0
    f1 = 2.0 * tp / (n_pred + n_true)
    return Scores(f1, tpr, fdr, tp, n_pred, n_true, flag)


@dataclass(frozen=True)
class PagMetrics:
    skeleton: Scores
    arrowhead: Scores
    tail: Scores

    def flat(self) -> dict:
        out = {}
        for cls in ("skeleton", "arrowhead", "tail"):
            s = getattr(self, cls)
            for k, v in asdict(s).items():
                out[f"{cls}_{k}"] = v
        return out


def _marks(g) -> np.ndarray:
    if isinstance(g, Pag):
        return np.asarray(g.M)
    if isinstance(g, Admg):
        return np.asarray(as_pag(g).M)
    raise TypeError(f"expected a Pag or Admg, got {type(g).__name__}")


def as_pag(g: Admg) -> Pag:
    """PAG of an estimated ancestral graph, which need not be maximal."""
    try:
        return mag_to_pag(g, check=True)
    except GraphError:
        return mag_to_pag(g, check=False)


def pag_metrics(predicted, truth) -> PagMetrics:
    """Skeleton, arrowhead and tail F1/TPR/FDR.

    Arrowhead and tail positions are ordered pairs ``(i, j)`` carrying that
    mark at ``j``; circles count as neither. ``Admg`` inputs are converted to
    PAGs first.
    """
    P, T = _marks(predicted), _marks(truth)
    if P.shape != T.shape:
        raise ValueError(f"dimension mismatch: {P.shape[0]} vs {T.shape[0]}")
    iu = np.triu_indices(P.shape[0], 1)
    skel = _scores((P != 0)[iu], (T != 0)[iu])
    arrow = _scores(P == ARROW, T == ARROW)
    tail = _scores(P == TAIL, T == TAIL)
    return PagMetrics(skel, arrow, tail)


def skeleton_metrics(predicted, truth) -> Scores:
    a = _adjacency(predicted)
    b = _adjacency(truth)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    iu = np.triu_indices(a.shape[0], 1)
    return _scores(a[iu], b[iu])


def _adjacency(g) -> np.ndarray:
    if isinstance(g, Skeleton):
        return np.asarray(g.S, dtype=bool)
    if isinstance(g, (Admg, Pag)):
        return np.asarray(g.adjacency(), dtype=bool)
    return np.asarray(g, dtype=bool)


def shd(predicted, truth) -> int:
    """Number of unordered pairs whose pair of end marks differs."""
    P, T = _marks(predicted), _marks(truth)
    if P.shape != T.shape:
        raise ValueError("dimension mismatch")
    diff = (P != T) | (P.T != T.T)
    return int(np.count_nonzero(np.triu(diff, 1)))


@dataclass(frozen=True)
class PosteriorQuality:
    auroc: float
    auprc: float
    kl: float
    one_class: bool = False


def auroc_rank(scores, labels) -> float:
    """Mann-Whitney form of the ROC area, with mid-ranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    r = rankdata(scores)
    return float((r[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve (tied scores form one step)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # keep the last index of each tie block
    last = np.r_[s[1:] != s[:-1], True]
    tp, k = tp[last], np.nonzero(last)[0] + 1
    precision = tp / k
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def bernoulli_kl(p, truth) -> float:
    """Mean KL from degenerate truth labels to clamped Bernoulli predictions."""
    p = np.clip(np.asarray(p, dtype=float), KL_CLAMP, 1 - KL_CLAMP)
    y = np.asarray(truth, dtype=bool)
    return float(np.mean(np.where(y, -np.log(p), -np.log1p(-p))))


def posterior_quality(posterior, truth) -> PosteriorQuality:
    P = np.asarray(getattr(posterior, "p", posterior), dtype=float)
    T = _adjacency(truth)
    if P.shape != T.shape:
        raise ValueError("dimension mismatch")
    iu = np.triu_indices(P.shape[0], 1)
    s, y = P[iu], T[iu]
    kl = bernoulli_kl(s, y)
    if y.all() or not y.any():
        return PosteriorQuality(float("nan"), float("nan"), kl, True)
    return PosteriorQuality(auroc_rank(s, y), average_precision(s, y), kl)
