import csv
import math

import numpy as np
import pytest

from gwspine import models
from gwspine import rng as R
from gwspine.branching import estimate_W, replica_statistics, simulate_population
from gwspine.errors import BeyondHorizon, PathsNotRecorded, PopulationCapExceeded, Subcritical
from gwspine.motion import EqualSplit, LinearDiffusion, UniformFraction

from conftest import make_model


def _se4(x, target):
    return abs(x.mean() - target) <= 4 * x.std(ddof=1) / math.sqrt(x.size)


def test_no_offspring_single_lifetime():
    pop = simulate_population(make_model(offspring={0: 1.0}), 5.0, n_reps=50, seed=1)
    assert np.all(np.diff(pop.offsets) == 1)
    assert np.all(pop.nu == 0)


def test_equal_split_states_follow_generation():
    model = make_model(kernel=EqualSplit(), motion=LinearDiffusion(0.0, 0.0, 0.0), initial=8.0)
    pop = simulate_population(model, 3.0, n_reps=20, seed=2, obs_times=[1.0, 2.0])
    for t in (1.0, 2.0, 3.0):
        rows, x, _ = pop.states_at(t)
        np.testing.assert_array_equal(x, 8.0 / 2.0 ** pop.gen[rows])


@pytest.mark.parametrize("t", [0.5, 1.5, 3.0])
def test_mass_conservation(still_fraction, t):
    pop = simulate_population(still_fraction, 3.0, n_reps=30, seed=3, obs_times=[0.5, 1.5])
    s, n = pop.sum_over_alive(t, lambda x: x)
    np.testing.assert_allclose(s, 3.0, rtol=1e-9)
    assert np.all(n >= 1)


def test_children_states_come_from_kernel(splitted_bm):
    pop = simulate_population(splitted_bm, 3.0, n_reps=5, seed=4)
    kids = np.nonzero(pop.parent >= 0)[0]
    assert kids.size > 0
    for c in kids[:200]:
        u = pop.parent[c]
        theta = R.uniform_at(R.stream_base(int(pop.key[u]), R.KERNEL), 0)
        expect = UniformFraction()(pop.x_end[u], int(pop.nu[u]), theta)
        assert pop.x_birth[c] == expect[pop.child[c] - 1]
        assert pop.birth[c] == pop.death[u]
        assert pop.mark[c] == pytest.approx(pop.mark[u] + math.log(pop.nu[u]))


def test_genealogy_mark_ternary():
    model = make_model(offspring={2: 0.5, 3: 0.5})
    pop = simulate_population(model, 2.0, n_reps=10, seed=5)
    kids = pop.parent >= 0
    np.testing.assert_allclose(pop.mark[kids], pop.mark[pop.parent[kids]] + np.log(pop.nu[pop.parent[kids]]))


def test_subtree_replay(splitted_ou):
    H = 3.0
    pop = simulate_population(splitted_ou, H, n_reps=3, seed=6)
    c = int(np.nonzero(pop.gen == 1)[0][0])
    a, b = pop.offsets[pop.rep[c]], pop.offsets[pop.rep[c] + 1]
    # descendants of c inside its replica
    desc = [c]
    for i in range(c + 1, b):
        if pop.parent[i] in desc:
            desc.append(i)
    sub = splitted_ou.with_changes(initial=float(pop.x_birth[c]))
    from gwspine.branching import Population, simulate_chunk

    raw = simulate_chunk(sub, H - pop.birth[c], np.array([pop.key[c]], dtype=np.uint64))
    rep = Population(sub, H - pop.birth[c], np.array([]), raw)
    assert rep.n_nodes == len(desc)
    np.testing.assert_array_equal(np.sort(rep.key), np.sort(pop.key[desc]))
    order = np.argsort(rep.key)
    mine = np.array(desc)[np.argsort(pop.key[desc])]
    np.testing.assert_allclose(rep.death[order] + pop.birth[c], pop.death[mine], rtol=1e-12)
    np.testing.assert_allclose(rep.x_end[order], pop.x_end[mine], rtol=1e-9, atol=1e-12)


def test_terminal_states_independent_of_recording(splitted_ou):
    a = simulate_population(splitted_ou, 2.5, n_reps=20, seed=7)
    b = simulate_population(splitted_ou, 2.5, n_reps=20, seed=7, paths_grid=0.1)
    np.testing.assert_array_equal(a.x_end, b.x_end)
    np.testing.assert_array_equal(a.death, b.death)


def test_alive_sum_matches_cardinality(splitted_bm):
    grid = [0.25 * k for k in range(1, 12)]
    pop = simulate_population(splitted_bm, 3.0, n_reps=40, seed=8, obs_times=grid)
    for t in grid + [3.0]:
        s, n = pop.sum_over_alive(t)
        np.testing.assert_array_equal(s, n)
        np.testing.assert_array_equal(n, pop.counts_alive(t))


def test_extinct_replica_convention():
    model = make_model(offspring={0: 0.5, 2: 0.5})
    pop = simulate_population(model, 4.0, n_reps=200, seed=9)
    s, n = pop.sum_over_alive(4.0, lambda x: x * x + 1)
    dead = n == 0
    assert dead.any()
    assert np.all(s[dead] == 0)


def test_dead_sums(splitted_bm):
    pop = simulate_population(splitted_bm, 2.0, n_reps=50, seed=10)
    s, d = pop.sum_over_dead(0.0)
    assert np.all(s == 0) and np.all(d == 0)
    s, d = pop.sum_over_dead(2.0)
    np.testing.assert_array_equal(s, d)
    np.testing.assert_array_equal(d, pop.counts_dead(2.0))


def test_dead_sum_equal_split_mean(equal_split_still):
    # many-to-one: E sum = int_0^t r e^{s} E[2^{-S_s}] ds with S_s ~ Poisson(2 s), i.e. t
    out = replica_statistics(equal_split_still, 1.0, lambda p: {"s": p.sum_over_dead(1.0, lambda x: x)[0]},
                             n_reps=20000, seed=11, domain="dead")
    assert _se4(out["s"], 1.0)


def test_forks(splitted_bm):
    pop = simulate_population(splitted_bm, 1.0, n_reps=20000, seed=12)
    n = pop.counts_alive(1.0)
    f = pop.sum_over_forks(1.0)
    np.testing.assert_array_equal(f, n * (n - 1))
    assert np.all(f[n <= 1] == 0)
    assert _se4(f.astype(float), 2 * math.e**2 - 2 * math.e)


def test_fork_sum_brute_force(splitted_ou):
    pop = simulate_population(splitted_ou, 2.0, n_reps=4, seed=13)
    got = pop.sum_over_forks(2.0, np.cos, lambda x: x)
    rows, x, _ = pop.states_at(2.0)
    for i in range(4):
        xi = x[pop.rep[rows] == i]
        brute = sum(math.cos(a) * b for p, a in enumerate(xi) for q, b in enumerate(xi) if p != q)
        assert got[i] == pytest.approx(brute, abs=1e-9)


def test_sum_over_tree(splitted_bm):
    pop = simulate_population(splitted_bm, 2.0, n_reps=30, seed=14)
    np.testing.assert_array_equal(pop.sum_over_tree(lambda s, x: np.ones_like(x), 2.0), pop.counts_dead(2.0))


def test_ancestral_window(splitted_ou):
    pop = simulate_population(splitted_ou, 2.0, n_reps=30, seed=15, paths_grid=0.125)
    end = pop.ancestral_window_functional(2.0, 1.0, lambda p: p.states[-1])
    s, n = pop.sum_over_alive(2.0, lambda x: x)
    np.testing.assert_allclose(end, s, rtol=1e-12, atol=1e-12)
    ones = pop.ancestral_window_functional(2.0, 1.0, lambda p: 1.0)
    np.testing.assert_array_equal(ones, n)
    start = pop.ancestral_window_functional(1.5, 0.5, lambda p: p.states[0])
    np.testing.assert_allclose(start.sum(), pop.ancestral_states(1.5, [1.0])[1].sum())


def test_ancestral_window_branch_probability(splitted_bm):
    # spine branch events are Poisson(r m): P(at least one in [t - T, t]) = 1 - e^{-r m T}
    T, t = 0.5, 1.5

    def stat(p):
        hit = p.ancestral_window_functional(t, T, lambda a: float(a.branch_times.size > 0))
        return {"hit": hit, "n": p.counts_alive(t).astype(float)}

    out = replica_statistics(splitted_bm, t, stat, n_reps=4000, seed=16, domain="window",
                             paths_grid=0.5)
    from gwspine.stats import ratio_estimate

    est = ratio_estimate(out["hit"], out["n"])
    assert abs(est.mean - (1 - math.exp(-2 * T))) < 4 * est.se


def test_window_needs_paths(splitted_bm):
    pop = simulate_population(splitted_bm, 1.0, n_reps=2, seed=0)
    with pytest.raises(PathsNotRecorded):
        pop.ancestral_window_functional(1.0, 0.5, lambda p: 1.0)
    with pytest.raises(PathsNotRecorded):
        pop.sum_over_alive(0.5)
    with pytest.raises(BeyondHorizon):
        pop.sum_over_dead(1.5)


def test_estimate_W(splitted_bm):
    out = replica_statistics(splitted_bm, 3.0, lambda p: {"n": p.counts_alive(3.0)},
                             n_reps=4000, seed=17, domain="w")
    est, w = estimate_W(out["n"], splitted_bm, 3.0)
    assert abs(est.mean - 1.0) < 4 * est.se
    sub = make_model(offspring={0: 0.3, 2: 0.7})
    pop = simulate_population(sub, 3.0, n_reps=300, seed=18)
    n = pop.counts_alive(3.0)
    _, w = estimate_W(n, sub, 3.0)
    np.testing.assert_array_equal(w == 0, n == 0)
    with pytest.raises(Subcritical):
        estimate_W(n, make_model(offspring={0: 0.5, 2: 0.5}), 1.0)


@pytest.mark.parametrize("chunk", [1, 7, 64])
def test_chunking_and_jobs_do_not_change_results(splitted_ou, chunk):
    def stat(p):
        return {"s": p.sum_over_alive(2.0, np.cos)[0]}

    ref = replica_statistics(splitted_ou, 2.0, stat, n_reps=64, seed=19, domain="d", chunk=64, jobs=1)
    got = replica_statistics(splitted_ou, 2.0, stat, n_reps=64, seed=19, domain="d", chunk=chunk, jobs=4)
    np.testing.assert_array_equal(ref["s"], got["s"])


def test_first_replica_offset(splitted_bm):
    full = simulate_population(splitted_bm, 1.5, n_reps=6, seed=20)
    tail = simulate_population(splitted_bm, 1.5, n_reps=3, seed=20, first_replica=3)
    np.testing.assert_array_equal(full.counts_alive(1.5)[3:], tail.counts_alive(1.5))


def test_cap():
    model = models.build("yule_splitted_bm", {"rate": 3.0})
    with pytest.raises(PopulationCapExceeded) as exc:
        simulate_population(model, 5.0, n_reps=2, seed=0, max_nodes=50)
    assert exc.value.partial.truncated.all()
    pop = simulate_population(model, 5.0, n_reps=2, seed=0, max_nodes=50, on_cap="flag")
    assert np.all(np.diff(pop.offsets) <= 50)


def test_snapshot_csv(tmp_path, splitted_bm):
    pop = simulate_population(splitted_bm, 1.0, n_reps=2, seed=21, obs_times=[0.5])
    path = tmp_path / "snap.csv"
    pop.write_snapshot(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["replica", "label", "t", "state"]
    total = pop.counts_alive(0.5).sum() + pop.counts_alive(1.0).sum()
    assert len(rows) - 1 == total
    assert {r[2] for r in rows[1:]} == {"0.5", "1.0"}


def test_two_type_snapshot(tmp_path):
    pop = simulate_population(models.build("cellular_aging"), 1.0, n_reps=2, seed=22)
    path = tmp_path / "snap.csv"
    pop.write_snapshot(path)
    header = next(csv.reader(open(path)))
    assert header[-1] == "type"


def test_replica_view(splitted_bm):
    pop = simulate_population(splitted_bm, 1.0, n_reps=3, seed=23)
    r = pop.replica(1)
    s, n = r.sum_over_alive(1.0)
    assert n == pop.counts_alive(1.0)[1] == len(r.tree.alive_at(1.0))
    assert r.birth_state[0] == 1.0
