import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swapmark import stats


def _t_cdf_oracle(t, dof):
    # direct numerical integration of the Student t density
    mpmath.mp.dps = 30
    nu = mpmath.mpf(dof)
    c = mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / 2))
    dens = lambda x: c * (1 + x * x / nu) ** (-(nu + 1) / 2)
    return float(mpmath.mpf("0.5") + mpmath.quad(dens, [0, t]))


@pytest.mark.parametrize("dof,alpha,table", [(99, 0.01, 2.3646), (99, 0.05, 1.6604), (19, 0.01, 2.5395)])
def test_quantiles_match_table(dof, alpha, table):
    assert stats.t_quantile(alpha, dof) == pytest.approx(-table, abs=1e-4)
    assert stats.t_quantile(1 - alpha, dof) == pytest.approx(table, abs=1e-4)


@pytest.mark.parametrize("t,dof", [(-2.3646, 99), (-0.7, 5), (1.3, 19), (-4.0, 2), (0.0, 10)])
def test_cdf_matches_integrated_density(t, dof):
    assert stats.t_cdf(t, dof) == pytest.approx(_t_cdf_oracle(t, dof), abs=1e-10)


def test_quantile_inverts_cdf():
    for dof in (1, 4, 19, 99):
        for a in (0.001, 0.01, 0.3, 0.5, 0.9):
            assert stats.t_cdf(stats.t_quantile(a, dof), dof) == pytest.approx(a, abs=1e-10)


def test_invalid_quantile_inputs():
    with pytest.raises(ValueError):
        stats.t_quantile(0.0, 10)
    with pytest.raises(ValueError):
        stats.t_quantile(0.1, 0)


def test_ttest_matches_hand_computation():
    x = np.array([0.0, 2.0, 0.0, 0.0, 2.0, 0.0])
    res = stats.one_sample_ttest(x, 0.5, "less")
    t = (x.mean() - 0.5) / (x.std(ddof=1) / np.sqrt(x.size))
    assert res.t_statistic == pytest.approx(t)
    assert res.p_value == pytest.approx(_t_cdf_oracle(t, 5), abs=1e-10)
    up = stats.one_sample_ttest(x, 0.5, "greater")
    assert up.p_value == pytest.approx(1 - res.p_value, abs=1e-12)


def test_degenerate_variance_rule():
    assert stats.one_sample_ttest(np.zeros(10), 0.5).p_value == 0.0
    assert stats.one_sample_ttest(np.full(10, 2.0), 0.5).p_value == 1.0
    assert stats.one_sample_ttest(np.full(10, 0.5), 0.5).p_value == 1.0
    assert stats.one_sample_ttest(np.full(10, 0.7), 0.5, "greater").p_value == 0.0


def test_underflow_flag():
    x = np.r_[np.zeros(99), 2.0]
    res = stats.one_sample_ttest(x, 0.5)
    assert res.p_value >= 0.0
    far = stats.one_sample_ttest(np.r_[np.zeros(999), 1e-3], 5.0)
    assert far.p_value == 0.0 and far.underflow


def test_ttest_rejects_bad_input():
    with pytest.raises(ValueError):
        stats.one_sample_ttest([1.0], 0.5)
    with pytest.raises(ValueError):
        stats.one_sample_ttest([1.0, np.nan], 0.5)
    with pytest.raises(ValueError):
        stats.one_sample_ttest([1.0, 2.0], 0.5, "two-sided")


def test_batch_matches_scalar():
    rng = np.random.default_rng(0)
    d = 2.0 * rng.integers(0, 3, size=(50, 20))
    d[0] = 0.0
    batch = stats.batch_lower_ttest_pvalues(d, 0.5)
    for row, p in zip(d, batch):
        assert p == pytest.approx(stats.one_sample_ttest(row, 0.5).p_value, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(mean=st.floats(0.0, 0.45), std=st.floats(0.05, 2.0), m=st.integers(2, 200), extra=st.integers(1, 300))
def test_p_value_weakly_decreases_with_m(mean, std, m, extra):
    # fixed mean below the threshold and fixed std: larger samples give stronger evidence
    def p(k):
        t = (mean - 0.5) / (std / np.sqrt(k))
        return stats.t_cdf(t, k - 1)
    assert p(m + extra) <= p(m) + 1e-15
