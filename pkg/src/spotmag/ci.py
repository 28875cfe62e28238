"""Fisher-z conditional independence tests for Gaussian data."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import ndtr

from .simulate import Dataset


class CiError(ValueError):
    pass


@dataclass(frozen=True)
class CiResult:
    statistic: float
    p_value: float
    partial_correlation: float
    conditioning_size: int


def correlation_matrix(data: Dataset) -> np.ndarray:
    Xc = data.centered()
    sd = np.sqrt((Xc ** 2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        C = (Xc.T @ Xc) / np.outer(sd, sd)
    C[~np.isfinite(C)] = 0.0
    np.fill_diagonal(C, 1.0)
    return C


def fisher_z_pvalue(r, n: int, k) -> tuple:
    """Statistic and two-sided p-value for partial correlation(s) ``r`` given ``k`` controls."""
    r = np.clip(np.asarray(r, dtype=float), -1 + 1e-15, 1 - 1e-15)
    dof = np.sqrt(np.maximum(n - np.asarray(k) - 3, 0))
    stat = dof * np.abs(np.arctanh(r))
    p = 2.0 * ndtr(-stat)
    return stat, np.clip(p, 0.0, 1.0)


def partial_correlation(C: np.ndarray, i: int, j: int, z: Iterable[int] = ()) -> float:
    z = tuple(z)
    i, j = min(i, j), max(i, j)
    if not z:
        return float(np.clip(C[i, j], -1.0, 1.0))
    idx = [i, j, *sorted(z)]
    sub = C[np.ix_(idx, idx)]
    try:
        P = np.linalg.inv(sub)
    except np.linalg.LinAlgError as exc:
        raise CiError(f"singular covariance for ({i}, {j} | {tuple(z)})") from exc
    denom = P[0, 0] * P[1, 1]
    if not np.isfinite(denom) or denom <= 0:
        raise CiError(f"singular covariance for ({i}, {j} | {tuple(z)})")
    return float(-P[0, 1] / np.sqrt(denom))


def batched_partial_correlations(C: np.ndarray, i: np.ndarray, j: np.ndarray,
                                 z: np.ndarray) -> np.ndarray:
    """Partial correlations for many tests with equal conditioning size.

    ``i`` and ``j`` have shape ``(m,)`` and ``z`` has shape ``(m, k)``.
    Singular systems yield 0.
    """
    i = np.asarray(i)
    idx = np.column_stack([i, np.asarray(j), np.asarray(z).reshape(len(i), -1)])
    sub = C[idx[:, :, None], idx[:, None, :]]
    if idx.shape[1] == 2:
        return sub[:, 0, 1].copy()
    sub = sub + 1e-12 * np.eye(idx.shape[1])
    try:
        P = np.linalg.inv(sub)
    except np.linalg.LinAlgError:
        P = np.linalg.pinv(sub)
    denom = P[:, 0, 0] * P[:, 1, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = -P[:, 0, 1] / np.sqrt(denom)
    r[~np.isfinite(r)] = 0.0
    return np.clip(r, -1.0, 1.0)


class FisherZ:
    """Fisher-z test over a cached correlation matrix."""

    def __init__(self, data: Dataset):
        self.n = data.n
        self.C = correlation_matrix(data)

    def test(self, i: int, j: int, z: Iterable[int] = ()) -> CiResult:
        z = tuple(int(v) for v in z)
        if self.n <= len(z) + 3:
            raise CiError(f"n={self.n} too small for a conditioning set of size {len(z)}")
        r = partial_correlation(self.C, i, j, z)
        stat, p = fisher_z_pvalue(r, self.n, len(z))
        return CiResult(float(stat), float(p), r, len(z))

    def __call__(self, i: int, j: int, z: Iterable[int] = ()) -> float:
        try:
            return self.test(i, j, z).p_value
        except CiError:
            # degenerate systems carry no evidence of dependence
            return 1.0


def fisher_z(data: Dataset, i: int, j: int, z: Iterable[int] = ()) -> CiResult:
    """Fisher-z test of ``V_i _||_ V_j | V_z``."""
    return FisherZ(data).test(i, j, z)
