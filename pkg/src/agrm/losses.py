"""Score-fitting losses and agreement metrics for batches of ratings.

The training objective is mean absolute error plus a correlation penalty
computed on batch-standardized scores; evaluation uses Pearson correlation on
raw scores and on mid-ranks (Spearman).  Correlations on a constant vector
are undefined; these functions warn and return 0 instead of dividing by zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScoreBatch",
    "mae_loss",
    "plcc_loss",
    "total_loss",
    "srcc",
    "plcc_metric",
    "midranks",
]


def _as_score_array(name: str, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class ScoreBatch:
    """Predicted and target scores for one batch, aligned by position."""

    predicted: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "predicted", _as_score_array("predicted", self.predicted))
        object.__setattr__(self, "target", _as_score_array("target", self.target))
        if self.predicted.shape != self.target.shape:
            raise ValueError(
                f"predicted and target lengths differ: "
                f"{self.predicted.size} vs {self.target.size}"
            )

    def __len__(self) -> int:
        return self.predicted.size


def mae_loss(batch: ScoreBatch) -> float:
    """Mean absolute error between target and predicted scores."""
    return float(np.mean(np.abs(batch.target - batch.predicted)))


def plcc_loss(batch: ScoreBatch, epsilon: float = 1e-8, literal_target: bool = False) -> float:
    """Correlation-shaping penalty on batch-standardized scores.

    Both score vectors are standardized with their batch mean and population
    standard deviation (epsilon added to the deviation so constant batches
    stay finite).  With rho the mean product of the standardized vectors, the
    penalty averages ||qhat - that||^2 + ||rho * qhat - that||^2 over the
    batch.  ``literal_target`` switches the second term's reference to the raw
    target scores instead of the standardized ones; the default keeps both
    terms on the same scale.
    """
    if len(batch) < 2:
        raise ValueError(f"correlation penalty needs at least 2 scores, got {len(batch)}")
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    q, t = batch.predicted, batch.target
    qhat = (q - q.mean()) / (q.std() + epsilon)
    that = (t - t.mean()) / (t.std() + epsilon)
    rho = float(np.mean(qhat * that))
    ref = t if literal_target else that
    n = len(batch)
    first = float(np.sum((qhat - that) ** 2))
    second = float(np.sum((rho * qhat - ref) ** 2))
    return (first + second) / n


def total_loss(
    batch: ScoreBatch,
    lam: float = 1.0,
    epsilon: float = 1e-8,
    literal_target: bool = False,
) -> float:
    """mae_loss + lam * plcc_loss."""
    if lam < 0.0:
        raise ValueError(f"lam must be >= 0, got {lam!r}")
    if lam == 0.0:
        # pure-MAE runs must work on batches of one
        return mae_loss(batch)
    return mae_loss(batch) + lam * plcc_loss(batch, epsilon, literal_target)


def midranks(values) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their positions."""
    x = _as_score_array("values", values)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        # positions i..j (0-based) share the value; mean 1-based rank
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray, what: str) -> float:
    da = a - a.mean()
    db = b - b.mean()
    na = float(np.sqrt(np.dot(da, da)))
    nb = float(np.sqrt(np.dot(db, db)))
    if na == 0.0 or nb == 0.0:
        warnings.warn(
            f"constant input to {what}; correlation undefined, returning 0",
            RuntimeWarning,
            stacklevel=3,
        )
        return 0.0
    r = float(np.dot(da, db) / (na * nb))
    return max(-1.0, min(1.0, r))


def srcc(predicted, target) -> float:
    """Spearman rank correlation: Pearson on mid-ranks."""
    p = _as_score_array("predicted", predicted)
    t = _as_score_array("target", target)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    return _pearson(midranks(p), midranks(t), "srcc")


def plcc_metric(predicted, target) -> float:
    """Pearson linear correlation between raw scores."""
    p = _as_score_array("predicted", predicted)
    t = _as_score_array("target", target)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    return _pearson(p, t, "plcc")
