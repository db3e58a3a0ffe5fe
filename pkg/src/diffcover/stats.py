"""Binomial confidence intervals and finite-prefix divergence heuristics."""
from __future__ import annotations

import enum

import numpy as np
from scipy import stats


class Verdict(str, enum.Enum):
    DIVERGENT = "divergent"
    CONVERGENT = "convergent"
    INCONCLUSIVE = "inconclusive"


def clopper_pearson(k, n, confidence: float = 0.95):
    """Exact two-sided binomial interval ``(lower, upper)`` for ``k`` successes out of ``n``."""
    k = np.asarray(k, dtype=float)
    alpha = 1.0 - confidence
    with np.errstate(invalid="ignore"):
        lo = np.where(k > 0, stats.beta.ppf(alpha / 2, k, n - k + 1), 0.0)
        hi = np.where(k < n, stats.beta.ppf(1 - alpha / 2, k + 1, n - k), 1.0)
    return lo, hi


def doubling_verdict(at_quarter: float, at_half: float, at_full: float) -> Verdict:
    """Classify a positive series/integral from its partial values at N/4, N/2 and N.

    Convergent when the part past N/2 is below 1% of the total; divergent when
    the last doubling block is at least half the previous one (decay no faster
    than ``n^-2``); otherwise inconclusive.  A heuristic over a finite prefix.
    """
    tail = at_full - at_half
    prev = at_half - at_quarter
    if at_full > 0 and tail < 0.01 * at_full:
        return Verdict.CONVERGENT
    if prev > 0 and tail >= 0.5 * prev:
        return Verdict.DIVERGENT
    return Verdict.INCONCLUSIVE
