"""Scores for single predictions and benchmark-level aggregates."""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError, ShapeError


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ShapeError(f"length mismatch {y.shape} vs {yhat.shape}")
    return y, yhat


def r2(y, yhat) -> float:
    """Coefficient of determination with SST taken about the mean of ``y``."""
    y, yhat = _pair(y, yhat)
    sst = np.sum((y - y.mean()) ** 2)
    if sst == 0:
        raise DomainError("r2 is undefined for a constant target")
    return float(1.0 - np.sum((y - yhat) ** 2) / sst)


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def accuracy(y, labels) -> float:
    y, labels = _pair(y, labels)
    return float(np.mean(y == labels))


def auc(y, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic, ties averaged."""
    y, scores = _pair(y, scores)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("auc needs both classes present")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class BenchmarkReport:
    methods: list[str]
    datasets: list[str]
    mean_scores: dict[str, dict[str, float]]  # dataset -> method -> mean over splits
    p90: dict[str, float] = field(default_factory=dict)
    p95: dict[str, float] = field(default_factory=dict)
    p98: dict[str, float] = field(default_factory=dict)
    pma: dict[str, float] = field(default_factory=dict)
    friedman: dict[str, float] = field(default_factory=dict)
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "datasets": self.datasets,
            "mean_scores": self.mean_scores,
            "P90": self.p90,
            "P95": self.p95,
            "P98": self.p98,
            "PMA": self.pma,
            "friedman_rank": self.friedman,
            "mean": self.mean,
            "std": self.std,
            "excluded": self.excluded,
        }


def aggregate(rows) -> BenchmarkReport:
    """Aggregate raw ``(dataset, split, method, score)`` rows.

    Scores are first averaged over splits per (dataset, method). Then, per
    dataset, each method is compared with the best method on that dataset:
    P90/P95/P98 count datasets where it reaches that fraction of the best,
    PMA averages score/best, and the Friedman rank averages its rank
    (1 = best, ties averaged). Non-finite scores are dropped and counted in
    ``excluded``; a method absent from a dataset counts as a miss for the
    P-statistics and is left out of that dataset's PMA and rank.
    """
    per = defaultdict(lambda: defaultdict(list))
    methods, datasets = [], []
    excluded = 0
    for dataset, _split, method, score in rows:
        if dataset not in datasets:
            datasets.append(dataset)
        if method not in methods:
            methods.append(method)
        if score is None or not math.isfinite(score):
            excluded += 1
            continue
        per[dataset][method].append(float(score))
    if excluded:
        warnings.warn(f"{excluded} non-finite scores excluded from aggregation", RuntimeWarning)
    if not datasets or not methods:
        raise DomainError("aggregate needs at least one dataset and one method")

    mean_scores = {
        ds: {m: float(np.mean(v)) for m, v in per[ds].items()} for ds in datasets
    }
    hits = {q: defaultdict(int) for q in (0.90, 0.95, 0.98)}
    ratios, ranks = defaultdict(list), defaultdict(list)
    for ds in datasets:
        scores = mean_scores[ds]
        if not scores:
            continue
        names = list(scores)
        values = np.array([scores[m] for m in names])
        best = values.max()
        for q in hits:
            for m, s in zip(names, values):
                if s >= q * best:
                    hits[q][m] += 1
        for m, s in zip(names, values):
            ratios[m].append(s / best)
        for m, r in zip(names, rankdata(-values)):
            ranks[m].append(float(r))

    n_ds = len(datasets)
    report = BenchmarkReport(methods=methods, datasets=datasets, mean_scores=mean_scores, excluded=excluded)
    for m in methods:
        report.p90[m] = hits[0.90][m] / n_ds
        report.p95[m] = hits[0.95][m] / n_ds
        report.p98[m] = hits[0.98][m] / n_ds
        report.pma[m] = float(np.mean(ratios[m])) if ratios[m] else math.nan
        report.friedman[m] = float(np.mean(ranks[m])) if ranks[m] else math.nan
        all_scores = [s for ds in datasets for s in per[ds].get(m, [])]
        report.mean[m] = float(np.mean(all_scores)) if all_scores else math.nan
        report.std[m] = float(np.std(all_scores)) if all_scores else math.nan
    return report
