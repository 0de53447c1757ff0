import math

import numpy as np
import pytest
import scipy.stats

from modules.errors import InsufficientTail
from modules.rng import make_rng
from modules.stats import (
    EmpiricalDistribution, GofReport, hill_tail_slope, ks_distance, ks_two_sample, median_and_quartiles,
    nonincreasing, normal_cdf, poisson_pmf, sample_moments, strictly_decreasing, tv_distance_poisson,
)


def uniform_cdf(x):
    return np.clip(x, 0.0, 1.0)


def test_empirical_distribution():
    emp = EmpiricalDistribution.from_samples([3.0, 1.0, 2.0])
    assert list(emp.sorted_samples) == [1.0, 2.0, 3.0]
    assert emp.count == 3
    assert emp.cdf(2.0) == pytest.approx(2.0 / 3.0)
    assert emp.quantile(0.5) == 2.0


def test_ks_distance_examples(seed):
    assert ks_distance([0.25, 0.75], uniform_cdf) == pytest.approx(0.25)
    assert ks_distance([0.5], uniform_cdf) == pytest.approx(0.5)
    draws = make_rng(seed).random(10_000)
    assert ks_distance(draws, uniform_cdf) < 0.02
    assert ks_distance(EmpiricalDistribution.from_samples(draws), uniform_cdf) == ks_distance(draws, uniform_cdf)
    with pytest.raises(ValueError):
        ks_distance([], uniform_cdf)


def test_ks_two_sample_examples():
    assert ks_two_sample([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert ks_two_sample([1.0, 2.0], [5.0, 6.0]) == 1.0
    assert ks_two_sample([1.0, 2.0], [1.5, 2.5]) == pytest.approx(0.5)
    assert ks_two_sample([1.5, 2.5], [1.0, 2.0]) == ks_two_sample([1.0, 2.0], [1.5, 2.5])


def test_tv_distance_poisson():
    t, cutoff = 1.0, 10
    pmf = poisson_pmf(t, cutoff)
    assert pmf[0] == pytest.approx(math.exp(-1.0))
    exact = list(pmf) + [scipy.stats.poisson.sf(cutoff, t)]
    assert tv_distance_poisson(exact, t, cutoff) == pytest.approx(0.0, abs=1e-12)
    assert tv_distance_poisson([1000], t, cutoff) == pytest.approx(1.0 - math.exp(-1.0))
    with pytest.raises(ValueError):
        tv_distance_poisson([10, 5], 2.0, 10)


def test_tv_distance_is_bounded(seed):
    counts = np.bincount(make_rng(seed).poisson(3.0, 2000), minlength=40)
    tv = tv_distance_poisson(counts, 3.0, 30)
    assert 0.0 <= tv < 0.05
    assert tv_distance_poisson(counts, 8.0, 80) <= 1.0


def test_normal_cdf():
    assert normal_cdf(0.0, 2.5) == 0.5
    assert normal_cdf(1.96) == pytest.approx(0.975, abs=1e-4)
    assert normal_cdf(2.0, 4.0) == pytest.approx(normal_cdf(1.0))
    with pytest.raises(ValueError):
        normal_cdf(0.0, 0.0)


def test_sample_moments():
    mean, m2 = sample_moments([-1.0, 1.0], 2)
    assert mean == 0.0
    assert m2 == 1.0
    _, _, m3 = sample_moments([0.0, 0.0, 3.0], 3)
    assert m3 == pytest.approx(2.0)
    with pytest.raises(ValueError):
        sample_moments([], 2)


def test_hill_tail_slope_on_pareto_grid():
    n = 200_000
    u = (np.arange(n) + 0.5) / n
    x = (1.0 - u) ** (-3.0 / 8.0)
    assert hill_tail_slope(x, (5.0, 50.0)) == pytest.approx(-8.0 / 3.0, abs=0.01)


def test_hill_tail_slope_needs_samples():
    with pytest.raises(InsufficientTail):
        hill_tail_slope(np.linspace(1.0, 2.0, 1000), (5.0, 50.0))


def test_gof_report():
    ok = GofReport(name="ks", statistic=0.01, threshold=0.06, n_samples=100)
    bad = GofReport(name="ks", statistic=0.07, threshold=0.06, n_samples=100)
    assert ok.passed and not bad.passed
    assert ok.to_dict()["pass"] is True
    assert GofReport(name="edge", statistic=0.06, threshold=0.06, n_samples=1).passed


def test_trend_helpers():
    assert median_and_quartiles([1.0, 2.0, 3.0, 4.0, 5.0]) == (3.0, 2.0, 4.0)
    assert nonincreasing([3.0, 2.0, 2.0, 1.0])
    assert not nonincreasing([1.0, 1.5])
    assert nonincreasing([1.0, 1.05], slack=0.1)
    assert strictly_decreasing([3.0, 2.0, 1.0])
    assert not strictly_decreasing([3.0, 3.0])
