"""Evaluation metrics: MAE, mean accuracy, per-pixel MSE, fold CIs and
the paired significance test, plus the traditional count-based estimate."""

from __future__ import annotations

import numpy as np
from scipy import stats


def mae(predictions, truths) -> float:
    """Mean absolute error in grams."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise ValueError(f"mae needs equal non-empty lists, got {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t)))


def mean_accuracy(mae_g: float, mean_weight_g: float) -> float:
    """1 - MAE / mean grams per cordon, clamped below at zero."""
    if mean_weight_g <= 0:
        raise ValueError(f"mean weight must be positive, got {mean_weight_g}")
    return max(0.0, 1.0 - mae_g / mean_weight_g)


def per_pixel_mse(recons, targets) -> float:
    """Mean squared difference over all pixels, channels and images of a
    [0,1]-scaled stack."""
    a = np.asarray(recons, dtype=np.float64)
    b = np.asarray(targets, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"per_pixel_mse shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def ci95(fold_values) -> float:
    """Half-width of the Student-t 95% interval over fold metrics."""
    v = np.asarray(fold_values, dtype=np.float64)
    if v.size < 2:
        raise ValueError(f"ci95 needs at least 2 values, got {v.size}")
    sd = float(np.std(v, ddof=1))
    t_crit = float(stats.t.ppf(0.975, v.size - 1))
    return t_crit * sd / np.sqrt(v.size)


def paired_fold_comparison(a, b) -> float:
    """Confidence that mean(a) < mean(b), via a one-sided paired t-test over
    per-fold values. Identical lists give 0.5; a zero-variance difference
    gives a degenerate confidence of ~1 (or ~0 for the other direction)."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.size < 2:
        raise ValueError(f"paired comparison needs equal lists of >= 2 folds, got {av.shape} vs {bv.shape}")
    d = av - bv
    mean_d = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    n = d.size
    if sd == 0.0:
        if mean_d == 0.0:
            return 0.5
        return 1.0 - 1e-9 if mean_d < 0 else 1e-9
    t_stat = mean_d / (sd / np.sqrt(n))
    p_one_sided = float(stats.t.cdf(t_stat, n - 1))
    return 1.0 - p_one_sided


def traditional_estimate(cw_g: float, cv_clusters: float, n_vines: float) -> float:
    """Field method: average cluster weight x clusters per vine x vine count."""
    if cw_g < 0 or cv_clusters < 0 or n_vines < 0:
        raise ValueError("traditional_estimate takes non-negative inputs")
    return float(cw_g * cv_clusters * n_vines)
