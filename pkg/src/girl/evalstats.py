"""Aggregate evaluation statistics: score normalization, interquartile
mean, probability of improvement, optimality gap, and stratified
percentile-bootstrap confidence intervals.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod


@dataclass
class ScoreMatrix:
    """Normalized scores keyed by task; runs may differ across tasks."""

    scores: dict  # task name -> list of floats

    def __post_init__(self):
        if not self.scores:
            raise ValueError("score matrix is empty")
        clean = {}
        for task, vals in self.scores.items():
            arr = np.asarray(vals, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"task {task!r} needs a non-empty 1-D score list")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"task {task!r} has non-finite scores")
            clean[task] = arr
        self.scores = clean

    @property
    def tasks(self):
        return list(self.scores)

    def pooled(self):
        return np.concatenate([self.scores[t] for t in self.tasks])


def normalize(raw, r_rand, r_expert):
    """(raw - r_rand) / (r_expert - r_rand)."""
    if r_expert == r_rand:
        raise ValueError("degenerate normalization: r_expert == r_rand")
    return (np.asarray(raw, dtype=np.float64) - r_rand) / (r_expert - r_rand)


def iqm(scores):
    """Interquartile mean: the mean of the central 50% of sorted scores.

    When N is not divisible by 4 the cut points fall inside an order
    statistic and that statistic enters with fractional weight (standard
    trimmed-mean convention).
    """
    xs = np.sort(np.asarray(scores, dtype=np.float64))
    n = xs.size
    if n == 0:
        raise ValueError("iqm of empty input")
    lo, hi = n / 4.0, 3.0 * n / 4.0
    # weight of order statistic i (occupying [i, i+1)) inside [lo, hi]
    idx = np.arange(n)
    w = np.clip(np.minimum(idx + 1.0, hi) - np.maximum(idx.astype(float), lo), 0.0, 1.0)
    return float(np.sum(w * xs) / np.sum(w))


def prob_improvement(xs, ys):
    """Mann-Whitney estimate of P(X > Y), ties counted 0.5."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size == 0 or ys.size == 0:
        raise ValueError("prob_improvement of empty input")
    diff = xs[:, None] - ys[None, :]
    wins = np.sum(diff > 0) + 0.5 * np.sum(diff == 0)
    return float(wins / (xs.size * ys.size))


def optimality_gap(iqm_val):
    return 1.0 - iqm_val


def _resample(sm, rng):
    return {t: vals[rng.integers(0, vals.size, size=vals.size)]
            for t, vals in sm.scores.items()}


def stratified_bootstrap_ci(sm, statistic, n_resamples=50_000, seed=0,
                            level=0.95, other=None):
    """Percentile bootstrap CI stratified by task.

    statistic: "iqm", or "pi" (requires `other`, a second ScoreMatrix with
    the same tasks; the statistic is PI(sm pooled, other pooled) with both
    matrices resampled).  Returns (lo, hi, point).
    """
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if statistic == "iqm":
        stat = lambda a, b: iqm(np.concatenate([a[t] for t in a]))
        point = stat(sm.scores, None)
    elif statistic == "pi":
        if other is None:
            raise ValueError("pi statistic needs a baseline matrix")
        stat = lambda a, b: prob_improvement(
            np.concatenate([a[t] for t in a]), np.concatenate([b[t] for t in b]))
        point = stat(sm.scores, other.scores)
    else:
        raise ValueError(f"unknown statistic {statistic!r}")

    vals = np.empty(n_resamples)
    for i in range(n_resamples):
        g = rngmod.stream(seed, "bootstrap", i)
        a = _resample(sm, g)
        b = _resample(other, g) if other is not None else None
        vals[i] = stat(a, b)
    alpha = (1.0 - level) / 2.0
    lo = float(np.percentile(vals, 100.0 * alpha))
    hi = float(np.percentile(vals, 100.0 * (1.0 - alpha)))
    return lo, hi, float(point)
