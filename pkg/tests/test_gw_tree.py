import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwspine import gw_tree as G
from gwspine.errors import BeyondHorizon, InvalidParameters, NotAlive, PopulationCapExceeded
from gwspine.offspring import validate, yule

E = math.e
labels = st.lists(st.integers(1, 4), max_size=6).map(tuple)


@given(labels)
def test_label_round_trip(u):
    assert G.parse_label(G.format_label(u)) == u


@given(labels, labels)
def test_mrca_is_common_prefix(u, v):
    w = G.mrca(u, v)
    assert G.is_ancestor(w, u) and G.is_ancestor(w, v)
    assert G.mrca(u, u) == u


def test_mrca_examples():
    assert G.mrca((1, 2, 1), (1, 3)) == (1,)
    assert G.mrca((1, 5), (2, 1)) == ()


def test_childless_tree():
    t = G.simulate_tree(validate({0: 1.0}), 2.0, 5.0, seed=1)
    assert len(t) == 1 and t.labels == [()] and t.nu[0] == 0


def test_tree_consistency():
    t = G.simulate_tree(validate({0: 0.2, 2: 0.5, 3: 0.3}), 1.0, 3.0, seed=4)
    labs = t.labels
    for i in range(1, len(t)):
        p = t.parent[i]
        # child born exactly when the parent dies
        assert t.birth[i] == t.death[p]
        assert labs[i][:-1] == labs[p]
        assert 1 <= labs[i][-1] <= t.nu[p]
    born = np.bincount(t.parent[1:], minlength=len(t))
    dead = t.death < t.horizon
    assert np.array_equal(born[dead], t.nu[dead])
    assert t.birth[0] == 0


def test_queries():
    t = G.simulate_tree(yule(), 1.0, 2.0, seed=2)
    assert t.alive_at(0.0) == [()]
    assert t.deaths_before(0.0) == 0
    assert t.alive_at(float(t.death[0]) * 0.999) == [()]
    with pytest.raises(BeyondHorizon):
        t.n_alive(2.5)
    leaf = max(t.labels, key=len)
    assert t.ancestor_at(leaf, 0.0) == ()
    i = t.index(leaf)
    assert t.ancestor_at(leaf, float(t.birth[i])) == leaf
    if len(leaf) >= 2:
        j = t.index(leaf[:1])
        assert t.ancestor_at(leaf, float(t.birth[j])) == leaf[:1]
    with pytest.raises(NotAlive):
        t.ancestor_at((), float(t.death[0]))
    with pytest.raises(NotAlive):
        t.index((9, 9, 9, 9, 9, 9, 9))


def test_dump_is_deterministic_and_breadth_first():
    a = G.simulate_tree(yule(), 1.0, 1.5, seed=7).dumps()
    b = G.simulate_tree(yule(), 1.0, 1.5, seed=7).dumps()
    assert a == b
    rows = [line.split("\t") for line in a.splitlines()]
    assert rows[0][0] == "root" and float(rows[0][1]) == 0.0
    gens = [0 if r[0] == "root" else r[0].count(".") + 1 for r in rows]
    assert gens == sorted(gens)
    buf = io.StringIO()
    G.simulate_tree(yule(), 1.0, 1.5, seed=7).dump(buf)
    assert buf.getvalue() == a


def test_cap():
    with pytest.raises(PopulationCapExceeded) as info:
        G.simulate_tree(yule(), 1.0, 20.0, max_nodes=500, seed=0)
    assert info.value.partial is not None and info.value.partial.truncated


def test_bad_parameters():
    with pytest.raises(InvalidParameters):
        G.simulate_tree(yule(), 0.0, 1.0)
    with pytest.raises(InvalidParameters):
        G.expected_moments(yule(), -1.0, 1.0)


def test_expected_moments_closed_forms():
    m = G.expected_moments(yule(), 1.0, 1.0)
    assert m["EN"] == pytest.approx(E)
    assert m["EN2"] == pytest.approx(2 * E**2 - E)
    assert m["EN2"] == pytest.approx(12.0598, abs=1e-4)
    assert m["ED"] == pytest.approx(E - 1)
    g = G.expected_moments(validate({0: 0.25, 2: 0.75}), 1.0, 1.0)
    assert g["ED"] == pytest.approx(2 * (math.exp(0.5) - 1))
    assert g["ED"] == pytest.approx(1.29744, abs=1e-5)
    crit = validate({0: 0.5, 2: 0.5})
    c = G.expected_moments(crit, 1.0, 2.0)
    assert c == pytest.approx({"EN": 1.0, "EN2": 1.0 + crit.var * 2.0, "ED": 2.0})
    assert G.expected_moments(yule(), 1.0, 0.0) == pytest.approx({"EN": 1.0, "EN2": 1.0, "ED": 0.0})


def test_yule_counts_geometric():
    from gwspine.stats import chi_square_counts

    n = 20_000
    N = G.tree_counts(yule(), 1.0, [1.0], n, seed=3)["N"][:, 0]
    obs = np.bincount(N)[1:]
    _, p, _ = chi_square_counts(obs, G.geometric_pmf(math.exp(-1), obs.size))
    assert p > 1e-3
    assert abs(N.mean() - E) < 4 * N.std() / math.sqrt(n)


def test_moments_critical_and_supercritical():
    for law, t in (({0: 0.25, 2: 0.75}, 1.0), ({0: 0.5, 2: 0.5}, 1.5)):
        d = validate(law)
        out = G.tree_counts(d, 1.0, [t], 20_000, seed=5)
        ex = G.expected_moments(d, 1.0, t)
        for key, samples in (("EN", out["N"][:, 0]), ("EN2", out["N"][:, 0] ** 2), ("ED", out["D"][:, 0])):
            samples = samples.astype(float)
            assert abs(samples.mean() - ex[key]) < 4 * samples.std() / math.sqrt(samples.size), key


def test_lifetimes_exponential():
    t = G.simulate_tree(yule(), 2.0, 4.0, seed=8)
    # lifetimes are censored at the horizon: exponential MLE with censoring
    exposure = np.minimum(t.death, t.horizon) - t.birth
    deaths = np.count_nonzero(t.death < t.horizon)
    rate = deaths / exposure.sum()
    assert abs(rate - 2.0) < 4 * 2.0 / math.sqrt(deaths)


def test_fast_path_matches_law():
    N = G.yule_counts_fast(1.0, 8.0, 10_000, seed=0)
    w = N * math.exp(-8.0)
    from scipy.stats import expon, kstest

    assert kstest(w, expon.cdf).statistic < 0.02
