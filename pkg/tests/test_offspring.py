import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwspine import offspring as O
from gwspine.errors import EmptySupport, NegativeWeight, PositiveP1, ZeroMean
from gwspine.rng import Stream

from conftest import binomial_z


def test_yule_moments():
    d = O.validate({2: 1.0})
    assert d.m == 2 and d.var == 0


def test_general_moments():
    d = O.validate({0: 0.25, 2: 0.75})
    assert d.m == pytest.approx(1.5, abs=1e-12)
    assert d.var == pytest.approx(0.75, abs=1e-12)


def test_list_of_pairs_and_normalisation():
    d = O.validate([(0, 1), (2, 3)])
    assert d.prob(2) == pytest.approx(0.75)


@pytest.mark.parametrize("raw, exc", [({1: 0.5, 2: 0.5}, PositiveP1), ({}, EmptySupport),
                                      ({0: 0.0}, EmptySupport), ({0: -1, 2: 2}, NegativeWeight)])
def test_invalid_laws(raw, exc):
    with pytest.raises(exc):
        O.validate(raw)


def test_sample_degenerate_and_frequency():
    s = Stream.from_seed(0, "off")
    assert set(O.yule().samples(s, 100).tolist()) == {2}
    d = O.validate({0: 0.25, 2: 0.75})
    n = 10**6
    draws = d.samples(Stream.from_seed(1, "off"), n)
    assert binomial_z(np.count_nonzero(draws == 2), n, 0.75) < 4


def test_sample_determinism():
    d = O.validate({0: 0.2, 2: 0.5, 3: 0.3})
    s = Stream.from_seed(9)
    assert [O.sample(d, s.copy()) for _ in range(3)] == [O.sample(d, s.copy()) for _ in range(3)]


def test_size_biased():
    d = O.validate({0: 0.25, 2: 0.75})
    assert set(d.size_biased_samples(Stream.from_seed(0), 1000).tolist()) == {2}
    d = O.validate({2: 0.5, 3: 0.5})
    n = 10**6
    h = d.size_biased_samples(Stream.from_seed(2), n)
    # 3 * 0.5 / 2.5
    assert binomial_z(np.count_nonzero(h == 3), n, 0.6) < 4
    with pytest.raises(ZeroMean):
        O.sample_size_biased(O.validate({0: 1.0}), Stream.from_seed(0))


laws = st.dictionaries(st.sampled_from([0, 2, 3, 4, 7]), st.floats(0.01, 10.0), min_size=1)


@given(laws)
def test_invariants(raw):
    d = O.validate(raw)
    p = np.array([raw[k] for k in sorted(raw)])
    p = p / p.sum()
    k = np.array(sorted(raw), dtype=float)
    assert abs(d.p.sum() - 1) < 1e-12
    assert d.m == pytest.approx(float(k @ p), abs=1e-12)
    assert d.var == pytest.approx(float(((k - d.m) ** 2) @ p), abs=1e-12)
    if d.m > 0:
        assert abs(d.size_biased.sum() - 1) < 1e-12


def test_sample_mean_within_bound():
    d = O.validate({0: 0.3, 2: 0.4, 4: 0.3})
    n = 10**5
    x = d.samples(Stream.from_seed(5), n)
    assert abs(x.mean() - d.m) < 5 * math.sqrt(d.var / n)
    h = d.size_biased_samples(Stream.from_seed(6), n)
    target = float((d.support.astype(float) ** 2) @ d.p / d.m)
    assert abs(h.mean() - target) < 5 * h.std() / math.sqrt(n)
