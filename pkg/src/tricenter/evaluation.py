"""Classification metrics, cross-validation splits, compactness, Wilcoxon test.

Macro metrics follow the unweighted class-mean convention and are reported
in percent.  Per-class quantities with a zero denominator (class never
predicted, or absent from the evaluated set) are defined as 0 and the class
is flagged; classes with neither true samples nor predictions are excluded
from the macro means entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .sampling import DatasetIndex


def confusion(true_labels, predicted_labels, n_classes: int) -> np.ndarray:
    """K x K count matrix; rows are true classes, columns predictions."""
    t = np.asarray(true_labels, dtype=np.intp)
    p = np.asarray(predicted_labels, dtype=np.intp)
    if t.shape != p.shape:
        raise ContractError("label streams differ in length")
    if t.size and (t.min() < 0 or t.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise ContractError(f"labels out of range [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass
class MetricsReport:
    """Per-class and macro precision/recall/F1, in percent."""

    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    present: np.ndarray  # bool: class had true samples or predictions
    flagged: list  # classes where a zero denominator was coerced to 0
    mcp: float
    mcr: float
    mf1: float
    status: str = "ok"  # "ok" | "empty"
    small_class: "MetricsReport | None" = None

    @property
    def n_classes(self) -> int:
        return len(self.precision)


def _macro(values: np.ndarray, present: np.ndarray) -> float:
    if not present.any():
        return 0.0
    return float(values[present].mean())


def macro_metrics(cm: np.ndarray) -> MetricsReport:
    """Per-class P/R/F1 plus their unweighted means over classes present."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.size == 0:
        raise ContractError("confusion matrix must be square and non-empty")
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    present = (cm.sum(axis=1) + cm.sum(axis=0)) > 0
    flagged = []
    k = cm.shape[0]
    precision = np.zeros(k)
    recall = np.zeros(k)
    f1 = np.zeros(k)
    for c in range(k):
        if not present[c]:
            continue
        denom_p = tp[c] + fp[c]
        denom_r = tp[c] + fn[c]
        if denom_p == 0 or denom_r == 0:
            flagged.append(c)
        precision[c] = tp[c] / denom_p if denom_p else 0.0
        recall[c] = tp[c] / denom_r if denom_r else 0.0
        pr = precision[c] + recall[c]
        f1[c] = 2.0 * precision[c] * recall[c] / pr if pr else 0.0
    return MetricsReport(
        precision=precision * 100.0, recall=recall * 100.0, f1=f1 * 100.0,
        present=present, flagged=flagged,
        mcp=_macro(precision, present) * 100.0,
        mcr=_macro(recall, present) * 100.0,
        mf1=_macro(f1, present) * 100.0,
    )


def small_class_report(report: MetricsReport, index: DatasetIndex, threshold: int) -> MetricsReport:
    """Macro metrics restricted to classes whose size in ``index`` is <= threshold."""
    if threshold < 1:
        raise ContractError(f"threshold must be >= 1, got {threshold}")
    sizes = index.sizes
    if len(sizes) != report.n_classes:
        raise ContractError("index class count does not match the report")
    small = sizes <= threshold
    present = report.present & small
    if not present.any():
        return MetricsReport(
            precision=report.precision, recall=report.recall, f1=report.f1,
            present=present, flagged=[], mcp=0.0, mcr=0.0, mf1=0.0, status="empty")
    return MetricsReport(
        precision=report.precision, recall=report.recall, f1=report.f1,
        present=present, flagged=[c for c in report.flagged if small[c]],
        mcp=float(report.precision[present].mean()),
        mcr=float(report.recall[present].mean()),
        mf1=float(report.f1[present].mean()),
    )


# -- splits --------------------------------------------------------------------

def stratified_kfold(index: DatasetIndex, k: int, seed: int) -> list:
    """Split every class as evenly as possible into k folds.

    Returns k (train_rows, test_rows) pairs; test folds are disjoint and
    cover the dataset.  Classes smaller than k simply appear in fewer test
    folds; downstream metrics handle their absence via the zero-division
    convention.
    """
    if k < 2:
        raise ContractError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    assignments = [[] for _ in range(k)]
    for c, members in enumerate(index.by_class):
        order = rng.permutation(members)
        for pos, row in enumerate(order):
            # rotate by class so the larger remainders do not pile on fold 0
            assignments[(pos + c) % k].append(row)
    folds = []
    all_rows = np.concatenate(index.by_class) if index.by_class else np.array([], dtype=np.intp)
    for f in range(k):
        test = np.sort(np.array(assignments[f], dtype=np.intp))
        train = np.sort(np.setdiff1d(all_rows, test))
        folds.append((train, test))
    return folds


def stratified_holdout(index: DatasetIndex, test_fraction: float, seed: int):
    """Per-class split into (train_rows, test_rows); every class with >= 2
    samples contributes at least one test row."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for members in index.by_class:
        order = rng.permutation(members)
        n_test = int(round(test_fraction * len(members)))
        if len(members) >= 2:
            n_test = min(max(n_test, 1), len(members) - 1)
        else:
            n_test = 0
        test.append(order[:n_test])
        train.append(order[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


# -- embedding diagnostics ------------------------------------------------------

def compactness(embeddings: np.ndarray, labels, center_matrix: np.ndarray,
                p_norm: int = 2):
    """(mean within-class distance to own center, mean pairwise inter-center distance)."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    matrix = np.asarray(center_matrix, dtype=np.float64)
    if labels.max() >= matrix.shape[0]:
        raise ContractError("centers do not cover the observed classes")
    diff = np.abs(emb - matrix[labels]) ** p_norm
    within = diff.sum(axis=1)
    within = within if p_norm == 1 else within ** (1.0 / p_norm)
    k = matrix.shape[0]
    pair_dists = []
    for i in range(k):
        for j in range(i + 1, k):
            d = np.abs(matrix[i] - matrix[j]) ** p_norm
            d = d.sum()
            pair_dists.append(d if p_norm == 1 else d ** (1.0 / p_norm))
    inter = float(np.mean(pair_dists)) if pair_dists else 0.0
    return float(within.mean()), inter


# -- Wilcoxon signed-rank test ----------------------------------------------------

@dataclass
class WilcoxonResult:
    statistic: float  # W+: rank sum of positive differences
    p_value: float
    significant: bool
    n: int
    method: str  # "exact" | "normal" | "undefined"

    @property
    def undefined(self) -> bool:
        return self.method == "undefined"


EXACT_LIMIT = 25


def _signed_midranks(diff: np.ndarray) -> np.ndarray:
    """Midranks of |diff| (average rank across ties)."""
    order = np.argsort(np.abs(diff), kind="stable")
    sorted_abs = np.abs(diff)[order]
    ranks = np.empty(len(diff))
    i = 0
    while i < len(diff):
        j = i
        while j + 1 < len(diff) and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    # Distribution of 2*W+ under random signs, by convolution over the
    # doubled (integral) midranks; equivalent to enumerating all 2^n sign
    # assignments.
    scaled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(scaled.sum())
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in scaled:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[:total + 1 - r]
        dist = dist + shifted
    dist /= 2.0 ** len(ranks)
    w2 = int(np.rint(2.0 * w_plus))
    p_low = dist[:w2 + 1].sum()
    p_high = dist[w2:].sum()
    return float(min(1.0, 2.0 * min(p_low, p_high)))


def wilcoxon_signed_rank(scores_a, scores_b, alpha: float = 0.05) -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test on scores_a - scores_b.

    Zero differences are dropped.  For n <= 25 the p-value is exact (full
    sign-assignment distribution, midranks for ties); beyond that a normal
    approximation with tie-corrected variance is used.  All-zero differences
    yield an undefined-test result rather than a p-value.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("paired score vectors must be 1-D and equal length")
    diff = a - b
    diff = diff[diff != 0.0]
    if len(diff) == 0:
        return WilcoxonResult(statistic=float("nan"), p_value=float("nan"),
                              significant=False, n=0, method="undefined")
    n = len(diff)
    if n < 5:
        raise ContractError(f"need >= 5 nonzero differences, got {n}")
    ranks = _signed_midranks(diff)
    w_plus = float(ranks[diff > 0].sum())
    if n <= EXACT_LIMIT:
        p = _exact_two_sided_p(ranks, w_plus)
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, counts = np.unique(np.abs(diff), return_counts=True)
        var -= (counts.astype(float) ** 3 - counts).sum() / 48.0
        z = (w_plus - mean) / math.sqrt(var)
        p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
        method = "normal"
    return WilcoxonResult(statistic=w_plus, p_value=p, significant=p < alpha,
                          n=n, method=method)


# -- fold aggregation --------------------------------------------------------------

@dataclass
class CrossvalSummary:
    """Mean and sample standard deviation of the macro metrics across folds."""

    fold_reports: list
    mf1_mean: float = field(init=False)
    mf1_std: float = field(init=False)
    mcp_mean: float = field(init=False)
    mcp_std: float = field(init=False)
    mcr_mean: float = field(init=False)
    mcr_std: float = field(init=False)

    def __post_init__(self):
        if not self.fold_reports:
            raise ContractError("no fold reports to aggregate")
        for name in ("mf1", "mcp", "mcr"):
            vals = np.array([getattr(r, name) for r in self.fold_reports])
            setattr(self, f"{name}_mean", float(vals.mean()))
            setattr(self, f"{name}_std", float(vals.std(ddof=1)) if len(vals) > 1 else 0.0)

    @property
    def k(self) -> int:
        return len(self.fold_reports)
