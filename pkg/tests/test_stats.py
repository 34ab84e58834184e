import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import special, stats as sps

from dailystudy.stats import betainc, normal_sf, t_cdf, t_sf, t_test, two_proportion_z

samples = st.lists(st.integers(1, 31), min_size=2, max_size=80)


@given(st.floats(-30, 30))
def test_normal_tail(z):
    assert normal_sf(z) == pytest.approx(sps.norm.sf(z), rel=1e-12, abs=1e-300)


@given(st.floats(0.1, 200), st.floats(0.1, 200), st.floats(0, 1))
def test_incomplete_beta(a, b, x):
    assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-9, abs=1e-12)


@given(st.floats(-50, 50), st.floats(1, 500))
def test_t_distribution(t, df):
    assert t_sf(t, df) == pytest.approx(sps.t.sf(t, df), rel=1e-8, abs=1e-14)
    assert t_sf(t, df) + t_cdf(t, df) == pytest.approx(1.0, abs=1e-12)


@given(st.integers(1, 200), st.integers(1, 200), st.data())
def test_z_against_scipy(na, nb, data):
    sa = data.draw(st.integers(0, na))
    sb = data.draw(st.integers(0, nb))
    pooled = (sa + sb) / (na + nb)
    assume(0 < pooled < 1)
    r = two_proportion_z(sa, na, sb, nb)
    se = math.sqrt(pooled * (1 - pooled) * (1 / na + 1 / nb))
    z = (sa / na - sb / nb) / se
    assert r.statistic == pytest.approx(z, abs=1e-12)
    assert r.p_value == pytest.approx(2 * sps.norm.sf(abs(z)), abs=1e-12)


@pytest.mark.filterwarnings("ignore:Precision loss:RuntimeWarning")
@given(samples, samples, st.sampled_from(["two_sided", "greater", "less"]), st.sampled_from(["welch", "pooled"]))
def test_t_against_scipy(a, b, alternative, variant):
    r = t_test(a, b, alternative, variant)
    assume(not r.degenerate)
    ref = sps.ttest_ind(a, b, equal_var=variant == "pooled",
                        alternative={"two_sided": "two-sided"}.get(alternative, alternative))
    assert r.statistic == pytest.approx(ref.statistic, rel=1e-9, abs=1e-12)
    assert r.p_value == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)


@given(samples, samples)
def test_one_sided_p_values_sum_to_one(a, b):
    r1 = t_test(a, b, "greater")
    r2 = t_test(a, b, "less")
    assume(not (r1.degenerate and r1.statistic == 0))  # no evidence either way: p = 1 both sides
    assert r1.p_value + r2.p_value == pytest.approx(1.0, abs=1e-12)


@given(samples, samples)
def test_swapping_samples_flips_sign(a, b):
    r = t_test(a, b)
    s = t_test(b, a)
    assert r.statistic == pytest.approx(-s.statistic, abs=1e-12)
    assert r.p_value == pytest.approx(s.p_value, abs=1e-12)


def test_degenerate_cases():
    same = t_test([5, 5, 5], [5, 5])
    assert same.degenerate and same.p_value == 1.0 and same.statistic == 0.0
    apart = t_test([6, 6, 6], [5, 5])
    assert apart.degenerate and apart.statistic == math.inf
    assert apart.p_value == 0.0
    assert t_test([6, 6, 6], [5, 5], "less").p_value == 1.0
    z = two_proportion_z(0, 10, 0, 12)
    assert z.degenerate and z.p_value == 1.0


@pytest.mark.parametrize("call", [
    lambda: t_test([1], [1, 2]),
    lambda: t_test([1, 2], [1, 2], alternative="bigger"),
    lambda: t_test([1, 2], [1, 2], variant="student"),
    lambda: two_proportion_z(5, 4, 1, 2),
    lambda: two_proportion_z(0, 0, 1, 2),
])
def test_argument_errors(call):
    with pytest.raises(ValueError):
        call()
