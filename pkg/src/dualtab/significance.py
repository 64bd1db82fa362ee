"""One-sided Wilcoxon signed-rank test and Bonferroni thresholding.

The alternative hypothesis is always "candidate beats reference" with the
supplied direction deciding what beating means.  Zero differences are
dropped; tied absolute differences get averaged ranks; the exact null
distribution is enumerated over all sign patterns when feasible, otherwise
a normal approximation with continuity and tie corrections is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import ConfigError

EXACT_LIMIT = 12  # 2^12 sign patterns enumerate instantly

DIRECTIONS = ("lower-better", "higher-better")


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+: rank sum of differences favoring the candidate
    p_value: float
    n_nonzero: int
    method: str  # "exact" | "normal" | "degenerate"
    all_zero: bool = False


def wilcoxon_one_sided(
    candidate,
    reference,
    direction: str = "lower-better",
    method: str = "auto",
) -> WilcoxonResult:
    """P(candidate is not better) under the signed-rank null.

    Small p supports the claim that the candidate beats the reference.
    """
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if method not in ("auto", "exact", "normal"):
        raise ConfigError(f"method must be auto/exact/normal, got {method!r}")
    candidate = np.asarray(candidate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if candidate.shape != reference.shape or candidate.ndim != 1:
        raise ConfigError(
            f"paired samples must be equal-length 1-D, got {candidate.shape} vs {reference.shape}"
        )
    if candidate.size == 0:
        raise ConfigError("empty sample")

    # positive difference = candidate better
    if direction == "lower-better":
        diffs = reference - candidate
    else:
        diffs = candidate - reference
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate", all_zero=True)

    ranks = rankdata(np.abs(diffs))  # average ranks on ties
    w_plus = float(ranks[diffs > 0].sum())

    use_exact = method == "exact" or (method == "auto" and n <= EXACT_LIMIT)
    if use_exact:
        p = _exact_upper_tail(ranks, w_plus)
        return WilcoxonResult(w_plus, p, n, "exact")
    p = _normal_upper_tail(ranks, w_plus, n)
    return WilcoxonResult(w_plus, p, n, "normal")


def _exact_upper_tail(ranks: np.ndarray, w_obs: float) -> float:
    """P(W+ >= w_obs) by enumerating every sign assignment.

    Averaged ranks are exact multiples of 0.5, so sums and comparisons
    are exact in binary floating point; no tolerance is needed.
    """
    n = len(ranks)
    if n > 20:
        raise ConfigError(f"exact enumeration over 2^{n} patterns is unreasonable")
    signs = np.zeros((2**n, n), dtype=np.float64)
    for j in range(n):
        # bit j of the pattern index decides the sign of rank j
        signs[:, j] = (np.arange(2**n) >> j) & 1
    w_all = signs @ ranks
    return float(np.mean(w_all >= w_obs))


def _normal_upper_tail(ranks: np.ndarray, w_obs: float, n: int) -> float:
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(ranks, return_counts=True)
    # averaged tied ranks shrink the null variance
    var -= float(np.sum(counts**3 - counts)) / 48.0
    if var <= 0:
        return 1.0
    z = (w_obs - mean - 0.5) / np.sqrt(var)  # continuity-corrected upper tail
    return float(ndtr(-z))


def bonferroni(p_values, alpha: float = 0.05):
    """Per-comparison decisions at the family-corrected threshold alpha/m."""
    p_values = list(p_values)
    if len(p_values) < 1:
        raise ConfigError("bonferroni needs at least one p-value")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    threshold = alpha / len(p_values)
    return [p < threshold for p in p_values], threshold
