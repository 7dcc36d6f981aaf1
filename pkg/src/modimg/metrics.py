"""Task metrics and statistical comparisons.

AUROC is tie-aware Mann-Whitney, AUPRC is average precision with step
interpolation, and model comparisons use DeLong's paired AUROC test plus a
paired-bootstrap t-test over replicate AUROC differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size < 1:
        raise ValueError("scores and labels must be equal-length 1-D vectors")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    if labels.min() == labels.max():
        raise ValueError("need at least one positive and one negative")
    return scores, labels.astype(np.int64)


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based midranks (average rank over ties)."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    sorted_x = x[order]
    while i < x.size:
        j = i
        while j < x.size and sorted_x[j] == sorted_x[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def auroc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted 1/2."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = _midranks(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: sum of precision x recall-increment over descending
    distinct score thresholds."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = fp = 0
    prev_tp = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += int((j - i) - y[i:j].sum())
        if tp > prev_tp:
            precision = tp / (tp + fp)
            ap += precision * (tp - prev_tp) / n_pos
        prev_tp = tp
        i = j
    return float(ap)


def balanced_accuracy(scores, labels, threshold: float) -> float:
    """(sensitivity + specificity) / 2 with scores >= threshold positive."""
    scores, labels = _validate(scores, labels)
    pred = scores >= threshold
    tpr = float(pred[labels == 1].mean())
    tnr = float((~pred[labels == 0]).mean())
    return (tpr + tnr) / 2.0


def choose_threshold(scores, labels) -> float:
    """Threshold maximizing balanced accuracy on the given (validation) set;
    smallest optimum wins ties for determinism."""
    scores, labels = _validate(scores, labels)
    candidates = np.unique(scores)
    best_t = float(candidates[0])
    best_v = -1.0
    for t in candidates:
        v = balanced_accuracy(scores, labels, float(t))
        if v > best_v + 1e-15:
            best_v, best_t = v, float(t)
    return best_t


def delong_components(scores, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """AUROC with its structural components V10 (per positive) and V01
    (per negative), computed via midranks."""
    scores, labels = _validate(scores, labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    m, n = pos.size, neg.size
    all_ranks = _midranks(np.concatenate([pos, neg]))
    pos_ranks = _midranks(pos)
    neg_ranks = _midranks(neg)
    v10 = (all_ranks[:m] - pos_ranks) / n
    v01 = 1.0 - (all_ranks[m:] - neg_ranks) / m
    auc = float(v10.mean())
    return auc, v10, v01


def auroc_variance(scores, labels) -> float:
    """DeLong variance of a single AUROC estimate."""
    _, v10, v01 = delong_components(scores, labels)
    var10 = v10.var(ddof=1) if v10.size > 1 else 0.0
    var01 = v01.var(ddof=1) if v01.size > 1 else 0.0
    return float(var10 / v10.size + var01 / v01.size)


def _normal_two_sided_p(z: float) -> float:
    return float(special.erfc(abs(z) / math.sqrt(2.0)))


def delong_test(scores_a, scores_b, labels) -> tuple[float, float, float, float]:
    """Paired DeLong comparison of two correlated AUROCs.

    Returns (auroc_a, auroc_b, z, p). Identical score vectors give exactly
    z = 0, p = 1.
    """
    auc_a, v10_a, v01_a = delong_components(scores_a, labels)
    auc_b, v10_b, v01_b = delong_components(scores_b, labels)
    if np.array_equal(np.asarray(scores_a, dtype=np.float64), np.asarray(scores_b, dtype=np.float64)):
        return auc_a, auc_b, 0.0, 1.0
    m, n = v10_a.size, v01_a.size
    s10 = np.cov(np.stack([v10_a, v10_b]), ddof=1) if m > 1 else np.zeros((2, 2))
    s01 = np.cov(np.stack([v01_a, v01_b]), ddof=1) if n > 1 else np.zeros((2, 2))
    cov = s10 / m + s01 / n
    var = cov[0, 0] + cov[1, 1] - 2 * cov[0, 1]
    diff = auc_a - auc_b
    if var <= 0:
        return auc_a, auc_b, 0.0 if diff == 0 else math.copysign(math.inf, diff), 1.0 if diff == 0 else 0.0
    z = diff / math.sqrt(var)
    return auc_a, auc_b, float(z), _normal_two_sided_p(z)


def student_t_sf(t: float, df: int) -> float:
    """Two-sided p for a Student-t statistic via the regularized incomplete
    beta function."""
    if df < 1:
        raise ValueError("df must be >= 1")
    x = df / (df + t * t)
    return float(special.betainc(df / 2.0, 0.5, x))


def paired_t_test(a, b) -> tuple[float, int, float]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need equal-length vectors of length >= 2")
    d = a - b
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    df = n - 1
    if sd == 0:
        return (0.0, df, 1.0) if mean == 0 else (math.copysign(math.inf, mean), df, 0.0)
    t = mean / (sd / math.sqrt(n))
    return float(t), df, student_t_sf(t, df)


@dataclass
class ComparisonRecord:
    auroc_a: float
    auroc_b: float
    delong_z: float
    delong_p: float
    bootstrap_t: float
    bootstrap_df: int
    bootstrap_p: float
    n_boot: int
    seed: int
    replicate_diffs_mean: float


def compare_methods(preds_a, preds_b, labels, n_boot: int = 1000, seed: int = 0) -> ComparisonRecord:
    """DeLong on the full set plus a paired stratified bootstrap of AUROC
    replicates with a paired t-test over the replicate differences.

    Stratified resampling (positives and negatives resampled separately)
    keeps every replicate two-class.
    """
    scores_a, labels_arr = _validate(preds_a, labels)
    scores_b, _ = _validate(preds_b, labels)
    auc_a, auc_b, z, p_delong = delong_test(scores_a, scores_b, labels_arr)
    rng = np.random.default_rng(seed)
    pos_idx = np.flatnonzero(labels_arr == 1)
    neg_idx = np.flatnonzero(labels_arr == 0)
    rep_a = np.empty(n_boot)
    rep_b = np.empty(n_boot)
    for i in range(n_boot):
        idx = np.concatenate(
            [
                rng.choice(pos_idx, size=pos_idx.size, replace=True),
                rng.choice(neg_idx, size=neg_idx.size, replace=True),
            ]
        )
        y = labels_arr[idx]
        rep_a[i] = auroc(scores_a[idx], y)
        rep_b[i] = auroc(scores_b[idx], y)
    t, df, p_boot = paired_t_test(rep_a, rep_b)
    return ComparisonRecord(
        auroc_a=auc_a,
        auroc_b=auc_b,
        delong_z=z,
        delong_p=p_delong,
        bootstrap_t=t,
        bootstrap_df=df,
        bootstrap_p=p_boot,
        n_boot=n_boot,
        seed=seed,
        replicate_diffs_mean=float((rep_a - rep_b).mean()),
    )


def subgroup_compare(preds, labels, group_mask) -> tuple[float, float, float]:
    """AUROC inside vs outside a subgroup with an unpaired normal-approximate
    DeLong-style comparison. Returns (auroc_in, auroc_out, p)."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels)
    mask = np.asarray(group_mask, dtype=bool)
    if preds.shape != labels.shape or preds.shape != mask.shape:
        raise ValueError("shape mismatch")
    if mask.all() or not mask.any():
        raise ValueError("both subgroups must be non-empty")
    a_in = auroc(preds[mask], labels[mask])
    a_out = auroc(preds[~mask], labels[~mask])
    var = auroc_variance(preds[mask], labels[mask]) + auroc_variance(preds[~mask], labels[~mask])
    diff = a_in - a_out
    if var <= 0:
        return a_in, a_out, 1.0 if diff == 0 else 0.0
    return a_in, a_out, _normal_two_sided_p(diff / math.sqrt(var))


@dataclass
class MetricReport:
    auroc: float
    auprc: float
    bal_acc: float
    threshold: float
    per_phenotype_auroc: list[float] | None = None
    extras: dict = field(default_factory=dict)


def evaluate(scores, labels, threshold: float) -> MetricReport:
    return MetricReport(
        auroc=auroc(scores, labels),
        auprc=auprc(scores, labels),
        bal_acc=balanced_accuracy(scores, labels, threshold),
        threshold=threshold,
    )
