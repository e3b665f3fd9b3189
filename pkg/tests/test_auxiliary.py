import math

import numpy as np
import pytest
from scipy import stats as sps

from gwspine import models
from gwspine.auxiliary import (
    apply_j1,
    apply_j2,
    draw_pairs,
    estimate_semigroup,
    estimate_stationary,
    run_spines,
    simulate_auxiliary,
)
from gwspine.errors import DegeneratePairs, DivergenceDetected, ZeroMean
from gwspine.motion import Additive, IdentityKernel, LinearDiffusion, UniformFraction
from gwspine.rng import Stream, replica_keys
from gwspine.stats import chi_square_counts, index_of_dispersion

from conftest import make_model


def _within(est_mean, target, se, k=4.0):
    return abs(est_mean - target) <= k * se


def test_jump_counts_are_poisson(splitted_bm):
    t = 1.5
    b = simulate_auxiliary(splitted_bm, t, n=20000, seed=1, record_jumps=False)
    S = b.S.astype(float)
    assert _within(S.mean(), 2 * t, S.std(ddof=1) / math.sqrt(S.size))
    disp = index_of_dispersion(b.S)
    assert _within(disp.mean, 1.0, disp.se)


def test_inter_jump_times(splitted_bm):
    b = simulate_auxiliary(splitted_bm, 50.0, n=200, seed=2, record_jumps=True)
    gaps = []
    for i in range(len(b)):
        ts = np.array([j.time for j in b.path(i).jumps])
        gaps.append(np.diff(np.concatenate([[0.0], ts])))
    g = np.concatenate(gaps)
    assert _within(g.mean(), 0.5, g.std(ddof=1) / math.sqrt(g.size))


def test_size_biased_H_law():
    model = make_model(offspring={0: 0.2, 2: 0.4, 3: 0.3, 5: 0.1})
    b = simulate_auxiliary(model, 40.0, n=1200, seed=3, record_jumps=True)
    H = b.jumps["jump_H"]
    assert H.size > 10**5
    d = model.offspring
    counts = np.array([(H == k).sum() for k in d.support])
    _, p, _ = chi_square_counts(counts, d.size_biased)
    assert p > 1e-3
    assert not np.any(H == 0)
    # I uniform on {1..H}
    I = b.jumps["jump_I"]
    assert I.min() >= 1 and np.all(I <= H)
    sel = H == 3
    _, p, _ = chi_square_counts(np.bincount(I[sel], minlength=4)[1:], np.full(3, 1 / 3))
    assert p > 1e-3


def test_marks_and_restarts(equal_split_still):
    b = simulate_auxiliary(equal_split_still, 3.0, n=500, seed=4, record_jumps=True)
    for i in range(50):
        p = b.path(i)
        assert p.end_mark == pytest.approx(sum(math.log(j.H) for j in p.jumps))
        assert p.end_state == 2.0 ** -len(p.jumps)


def test_equal_split_mean(equal_split_still):
    t = 1.2
    b = simulate_auxiliary(equal_split_still, t, n=40000, seed=5, record_jumps=False)
    assert _within(b.x.mean(), math.exp(-t), b.x.std(ddof=1) / math.sqrt(b.x.size))


def test_local_births_give_plain_motion():
    model = make_model(kernel=IdentityKernel(), motion=LinearDiffusion(0.3, 0.0, 1.0), initial=1.0)
    b = simulate_auxiliary(model, 2.0, n=20000, seed=6, record_jumps=False)
    ks = sps.kstest(b.x, sps.norm(1.6, math.sqrt(2.0)).cdf)
    assert ks.pvalue > 1e-3


def test_observation_grid_consistency(splitted_ou):
    b1 = simulate_auxiliary(splitted_ou, 2.0, n=100, seed=7, obs_times=[0.5, 1.0])
    b2 = simulate_auxiliary(splitted_ou, 2.0, n=100, seed=7)
    np.testing.assert_array_equal(b1.x, b2.x)
    assert b1.obs_x.shape == (100, 2)


def test_run_spines_reduce(splitted_ou):
    keys = replica_keys(8, "r", 0, 20000)
    full = run_spines(splitted_ou, keys, 0.0, 0, 1.0, [0.5])
    red = run_spines(splitted_ou, keys, 0.0, 0, 1.0, [0.5], jobs=3,
                     reduce=lambda b: {"y": b.obs_x[:, 0] + b.x})
    np.testing.assert_array_equal(red["y"], full.obs_x[:, 0] + full.x)


def test_zero_mean_spine():
    with pytest.raises(ZeroMean):
        simulate_auxiliary(make_model(offspring={0: 1.0}), 1.0)


def test_semigroup_trivial(splitted_ou):
    one = estimate_semigroup(splitted_ou, lambda x: np.ones_like(x), 1.0, 0.3, n_reps=100)
    assert one.mean == 1.0 and one.se == 0.0
    at0 = estimate_semigroup(splitted_ou, lambda x: x * x, 0.0, 0.3, n_reps=10)
    assert at0.mean == pytest.approx(0.09) and at0.se == 0.0
    with pytest.raises(ValueError):
        estimate_semigroup(splitted_ou, lambda x: x, 1.0, n_reps=1)


def test_semigroup_trend_to_stationary(splitted_ou):
    f = lambda x: x * x  # noqa: E731
    q = [estimate_semigroup(splitted_ou, f, t, 3.0, n_reps=20000, seed=9) for t in (1, 2, 4, 8)]
    for a, b in zip(q, q[1:]):
        assert a.mean + 4 * math.hypot(a.se, b.se) > b.mean
    pi = estimate_stationary(splitted_ou, 2e4, seed=10).expect(f)
    assert _within(q[-1].mean, pi.mean, math.hypot(q[-1].se, pi.se))


def test_j1_values(equal_split_still):
    one = lambda x: np.ones_like(x)  # noqa: E731
    ident = lambda x: x  # noqa: E731
    assert apply_j1(equal_split_still, one, 1.0).mean == 2.0
    assert apply_j1(equal_split_still, ident, 4.0).mean == 4.0
    add = make_model(kernel=Additive({2: (0.7, -0.7)}))
    assert apply_j1(add, ident, 1.3).mean == pytest.approx(2.6)
    gen = make_model(offspring={0: 0.25, 2: 0.5, 3: 0.25})
    assert apply_j1(gen, one, 0.0).mean == pytest.approx(gen.m)


def test_j1_monte_carlo_agrees():
    model = models.build("yule_splitted_bm")
    f = lambda x: np.exp(-x * x)  # noqa: E731
    exact = apply_j1(model, f, 1.5).mean
    mc = apply_j1(model, f, 1.5, exact=False, n_reps=10**5, seed=11)
    assert _within(mc.mean, exact, mc.se)


def test_j2_values(splitted_bm):
    one = lambda x: np.ones_like(x)  # noqa: E731
    ident = lambda x: x  # noqa: E731
    assert apply_j2(splitted_bm, one, one, 0.0).mean == pytest.approx(2.0)
    assert apply_j2(splitted_bm, ident, ident, 1.0).mean == pytest.approx(1 / 3)
    m = make_model(offspring={0: 0.25, 2: 0.75})
    assert apply_j2(m, one, one, 0.0).mean == pytest.approx(1.5)
    mc = apply_j2(splitted_bm, ident, ident, 1.0, exact=False, n_reps=10**5, seed=12)
    assert _within(mc.mean, 1 / 3, mc.se)


def test_j2_degenerate():
    from gwspine.branching import BranchingModel
    from gwspine.offspring import OffspringDistribution

    # support {0, 1} is refused by validate(); build it directly to reach the guard
    d = OffspringDistribution(np.array([0, 1]), np.array([0.5, 0.5]), 0.5, 0.25)
    m = BranchingModel(rate=1.0, offspring=d, motion=LinearDiffusion(0.0, 0.0, 1.0), kernel=IdentityKernel())
    one = lambda x: np.ones_like(x)  # noqa: E731
    assert apply_j2(m, one, one, 0.0).mean == 0.0
    with pytest.raises(DegeneratePairs):
        apply_j2(m, one, one, 0.0, strict=True)


def test_draw_pairs():
    d = make_model(offspring={2: 0.5, 4: 0.5}).offspring
    h, i, k = draw_pairs(d, Stream.from_seed(13), 10**5)
    assert np.all(i != k) and np.all(i < h) and np.all(k < h) and np.all(k >= 0)
    # H' ~ k (k-1) p_k: weights 2 and 12
    assert abs(np.mean(h == 4) - 12 / 14) < 4 * math.sqrt((12 / 14) * (2 / 14) / 1e5)


def test_stationary_examples(splitted_ou):
    law = estimate_stationary(splitted_ou, 5e3, seed=14)
    assert np.isfinite(law.samples).all()
    growth = models.build("yule_linear_growth")
    # d/dt E[Y] = 1 + r m (E[U] - 1) E[Y] with E[U] = 1/2, so <pi, x> = 1
    mean = estimate_stationary(growth, 2e4, seed=15).expect(lambda x: x)
    assert _within(mean.mean, 1.0, mean.se)
    still = models.build("yule_equal_split")
    assert estimate_stationary(still, 200.0, seed=16).samples.max() < 1e-9


def test_divergence():
    bad = make_model(kernel=UniformFraction(), motion=LinearDiffusion(0.0, 3.0, 0.0), initial=1.0)
    with pytest.raises(DivergenceDetected):
        estimate_stationary(bad, 2e3, seed=0)


def test_stationary_csv(tmp_path, splitted_ou):
    law = estimate_stationary(splitted_ou, 500.0, seed=17)
    p = tmp_path / "pi.csv"
    law.write_csv(p, bins=10)
    lines = p.read_text().splitlines()
    assert lines[0] == "bin_left,bin_right,mass"
    assert len(lines) == 12 and lines[-1].startswith("moments,")
    assert sum(float(l.split(",")[2]) for l in lines[1:-1]) == pytest.approx(1.0)
