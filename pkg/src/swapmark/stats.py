"""One-sample t-test helpers used by the ownership audits.

Tail probabilities and quantiles of Student's t distribution come from
``scipy.stats.t`` (regularized incomplete beta under the hood).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

# p-values below this are reported as exactly 0 with an underflow flag.
UNDERFLOW = 1e-300


@dataclass(frozen=True)
class TTestResult:
    mean: float
    std: float
    t_statistic: float
    p_value: float
    underflow: bool
    dof: int


def t_quantile(alpha: float, dof: int) -> float:
    """Lower alpha-quantile of the t distribution (negative for alpha < 0.5)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    return float(stats.t.ppf(alpha, dof))


def t_cdf(t: float, dof: int) -> float:
    return float(stats.t.cdf(t, dof))


def t_sf(t: float, dof: int) -> float:
    return float(stats.t.sf(t, dof))


def _clean(p: float) -> tuple[float, bool]:
    if p < UNDERFLOW:
        return 0.0, True
    return min(max(p, 0.0), 1.0), False


def one_sample_ttest(values, threshold: float, alternative: str = "less") -> TTestResult:
    """One-sided one-sample t-test of ``mean(values)`` against ``threshold``.

    ``alternative="less"`` tests H1: mean < threshold (lower tail),
    ``"greater"`` tests H1: mean > threshold (upper tail).

    With zero sample variance the decision is made directly: p = 0 when the
    mean lies strictly on the alternative side of the threshold, else p = 1.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("values must be one-dimensional")
    m = x.size
    if m < 2:
        raise ValueError(f"need at least 2 samples for a variance estimate, got {m}")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    if alternative not in ("less", "greater"):
        raise ValueError(f"unknown alternative {alternative!r}")

    mean = float(x.mean())
    std = float(x.std(ddof=1))
    dof = m - 1
    if std == 0.0:
        if alternative == "less":
            hit = mean < threshold
        else:
            hit = mean > threshold
        t_stat = float(np.sign(mean - threshold)) * np.inf if mean != threshold else 0.0
        return TTestResult(mean, 0.0, t_stat, 0.0 if hit else 1.0, False, dof)

    t_stat = (mean - threshold) / (std / np.sqrt(m))
    p = t_cdf(t_stat, dof) if alternative == "less" else t_sf(t_stat, dof)
    p, under = _clean(p)
    return TTestResult(mean, std, float(t_stat), p, under, dof)


def batch_lower_ttest_pvalues(distances: np.ndarray, threshold: float) -> np.ndarray:
    """Vectorised lower-tail p-values, one per row of ``distances``.

    Same degenerate-variance rule as :func:`one_sample_ttest`.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[1] < 2:
        raise ValueError("distances must be (trials, m) with m >= 2")
    m = d.shape[1]
    mean = d.mean(axis=1)
    std = d.std(axis=1, ddof=1)
    p = np.empty(d.shape[0])
    flat = std == 0.0
    p[flat] = np.where(mean[flat] < threshold, 0.0, 1.0)
    ok = ~flat
    t_stat = (mean[ok] - threshold) / (std[ok] / np.sqrt(m))
    p[ok] = stats.t.cdf(t_stat, m - 1)
    return p
