import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwspine.rng import Stream
from gwspine.stats import (
    McEstimate,
    batch_means,
    chi_square_counts,
    quantile_pairs,
    ratio_estimate,
    two_sample_z,
)


def test_identical_estimates():
    a = McEstimate(1.0, 0.1, 100)
    assert two_sample_z(a, a) == (0.0, True)


def test_ten_se_apart_fails():
    z, ok = two_sample_z(McEstimate(0.0, 0.3, 10), McEstimate(5.0, 0.4, 10))
    assert z == pytest.approx(10.0) and not ok


def test_one_side_deterministic():
    z, _ = two_sample_z(McEstimate(1.2, 0.1, 10), McEstimate.exact(1.0))
    assert z == pytest.approx(2.0)


def test_both_deterministic():
    assert two_sample_z(McEstimate.exact(1.0), McEstimate.exact(2.0)) == (math.inf, False)
    # rounding-level differences count as equal
    assert two_sample_z(McEstimate.exact(0.1 + 0.2), McEstimate.exact(0.3))[1]


def test_se_nonnegative():
    with pytest.raises(ValueError):
        McEstimate(0.0, -1.0, 2)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=200))
def test_from_samples(xs):
    e = McEstimate.from_samples(xs)
    assert e.se >= 0 and e.n == len(xs)
    assert e.mean == pytest.approx(np.mean(xs), rel=1e-9, abs=1e-6)


def test_se_halves_with_four_times_the_data():
    # doubling n shrinks the SE by 1/sqrt(2) within 20%
    x = Stream.from_seed(4).exponentials(40_000)
    a = McEstimate.from_samples(x[:20_000])
    b = McEstimate.from_samples(x)
    assert b.se / a.se == pytest.approx(1 / math.sqrt(2), rel=0.2)


def test_ratio_estimate_matches_pooled_ratio():
    num = np.array([1.0, 2.0, 3.0, 4.0])
    den = np.array([1.0, 1.0, 2.0, 2.0])
    r = ratio_estimate(num, den)
    assert r.mean == pytest.approx(10 / 6)
    resid = num - r.mean * den
    assert r.se == pytest.approx(math.sqrt(np.sum(resid**2) / 12) / 1.5)


def test_batch_means_iid():
    x = Stream.from_seed(0).normals(32_000)
    b = batch_means(x, 32)
    assert b.n == 32 and abs(b.mean) < 4 * b.se
    assert b.se == pytest.approx(1 / math.sqrt(32_000), rel=0.3)


def test_chi_square_pools_tail():
    probs = np.array([0.5, 0.25, 0.125, 0.0625, 0.0625])
    obs = np.array([50, 25, 13, 6, 6])
    stat, p, dof = chi_square_counts(obs, probs)
    assert dof == 4 and p > 0.9
    # expected counts 2.5 in the tail bins are pooled into one
    _, _, dof = chi_square_counts(np.array([25, 12, 7, 3, 3]), probs)
    assert dof == 3


def test_quantile_pairs_shape():
    from scipy.stats import norm

    theo, emp = quantile_pairs(Stream.from_seed(3).normals(10_000), norm.ppf)
    assert theo.shape == emp.shape == (99,)
    assert np.max(np.abs(theo - emp)) < 0.1
