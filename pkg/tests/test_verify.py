import json
import math

import numpy as np
import pytest
from scipy import integrate

from gwspine import models, verify
from gwspine.errors import AllExtinct, InvalidParameters, QuadratureUnderResolved, Subcritical
from gwspine.motion import IdentityKernel
from gwspine.stats import McEstimate

from conftest import make_model

SMALL = dict(seed=3, jobs=2)


def _crit(rep, name):
    return next(c for c in rep.criteria if c["name"] == name)


def test_report_pass_is_conjunction():
    e = McEstimate(1.0, 0.1, 10)
    rep = verify._report("x", e, e, 4.0, [verify.criterion("ks", 0.05, 0.02, "<")])
    assert rep.z == 0.0 and not rep.passed
    d = rep.to_dict()
    assert d["pass"] is False and d["criteria"][0]["name"] == "z"
    bad = verify.CheckReport.failed("y", ValueError("boom"))
    d = bad.to_dict()
    assert d["z"] == "inf" and d["lhs"]["mean"] == "nan" and d["error"] == "ValueError: boom"
    json.dumps(d)


@pytest.mark.parametrize("op,value,ok", [("<=", 1.0, True), ("<", 1.0, False), (">", 2.0, True), (">=", 0.5, False)])
def test_criterion_ops(op, value, ok):
    assert verify.criterion("c", value, 1.0, op)["passed"] is ok


def test_midpoint_rule():
    nodes, h = verify.midpoint_rule(2.0, 4)
    np.testing.assert_allclose(nodes, [0.25, 0.75, 1.25, 1.75])
    assert h * np.sum(3 * nodes + 1) == pytest.approx(8.0)


def test_truncated_exponential():
    u = np.linspace(0.001, 0.999, 999)
    a = verify.truncated_exponential(u, 1.0, 2.0)
    assert np.all((a > 0) & (a < 2.0)) and np.all(np.diff(a) > 0)
    # inverse CDF of the density c e^{-c a} / (1 - e^{-c t}) on [0, t]
    np.testing.assert_allclose((1 - np.exp(-a)) / (1 - math.exp(-2.0)), u, rtol=1e-12)
    np.testing.assert_allclose(verify.truncated_exponential(u, 0.0, 2.0), 2.0 * u)


def test_fork_normalizer():
    bm = models.build("yule_splitted_bm")
    # r int_0^t e^{-c s} ds * sum k (k-1) p_k with c = r (m - 1)
    assert verify.fork_normalizer(bm, 1.0) == pytest.approx(2 * (1 - math.exp(-1.0)))
    gen = make_model(offspring={0: 0.25, 2: 0.5, 3: 0.25}, rate=2.0)
    c = gen.growth
    expect = 2.0 * integrate.quad(lambda s: math.exp(-c * s), 0, 1.5)[0] * (2 * 0.5 + 6 * 0.25)
    assert verify.fork_normalizer(gen, 1.5) == pytest.approx(expect)


def test_tree_moments_small():
    rep = verify.check_tree_moments({2: 1.0}, 1.0, 1.0, n_reps=4000, **SMALL)
    assert rep.passed, rep.criteria
    assert {c["name"] for c in rep.criteria} >= {"z", "z_EN2", "z_ED", "chi2_geometric_p"}


def test_se_halves_with_four_times_replicas():
    a = verify.check_tree_moments({2: 1.0}, n_reps=5000, seed=1)
    b = verify.check_tree_moments({2: 1.0}, n_reps=10000, seed=1)
    assert b.lhs.se / a.lhs.se == pytest.approx(1 / math.sqrt(2), rel=0.2)


def test_many_to_one_fixed_constant():
    rep = verify.check_many_to_one_fixed(models.build("yule_splitted_bm"), None, 1.0, n_reps=4000, **SMALL)
    assert rep.passed and rep.rhs.mean == 1.0


def test_many_to_one_fixed_local_births():
    ou = models.build("yule_splitted_ou", {"x0": 2.0})
    local = ou.with_changes(kernel=IdentityKernel())
    rep = verify.check_many_to_one_fixed(local, lambda x: x, 1.0, n_reps=20000, **SMALL)
    assert rep.passed
    assert rep.rhs.mean == pytest.approx(2.0 * math.exp(-1.0), abs=4 * rep.rhs.se)


def test_many_to_one_fixed_path_functional():
    bm = models.build("yule_splitted_bm")
    rep = verify.check_many_to_one_fixed(bm, lambda X: X[:, 0] * X[:, 1], 1.0, path_times=[0.5, 1.0],
                                         n_reps=20000, **SMALL)
    assert rep.passed, rep.criteria


def test_many_to_one_tree_indicator_closed_form():
    rep = verify.check_many_to_one_tree(models.build("yule_splitted_bm"), None, 1.0, n_reps=20000, **SMALL)
    assert rep.rhs.mean == pytest.approx(math.e - 1, rel=1e-3)
    assert rep.passed


def test_quadrature_under_resolved():
    f = lambda s, x: np.exp(6 * s)  # noqa: E731
    with pytest.raises(QuadratureUnderResolved):
        verify.check_many_to_one_tree(models.build("yule_splitted_bm"), f, 1.0, n_reps=2000,
                                      quad_points=2, **SMALL)


def test_fork_constant_closed_form():
    rep = verify.check_fork_second_moment(models.build("yule_splitted_bm"), t=1.0, n_reps=20000, **SMALL)
    assert rep.passed, rep.criteria
    # E[N(N-1)] / E[N]^2 = (2 e^2 - 2 e) / e^2
    assert rep.rhs.mean == pytest.approx(2 - 2 / math.e, rel=1e-12)


def test_fork_extinction_contributes_zero():
    model = make_model(offspring={0: 0.25, 2: 0.75})
    rep = verify.check_fork_second_moment(model, t=1.0, n_reps=20000, **SMALL)
    assert rep.passed, rep.criteria


def test_lln_alive_errors():
    dying = models.build("yule_splitted_ou", {"offspring": {0: 0.9, 2: 0.1}})
    with pytest.raises(AllExtinct):
        verify.check_lln_alive(dying, (30.0,), n_reps=20, min_surviving=5, stationary_run=100.0, **SMALL)


def test_lln_dead_needs_supercritical():
    with pytest.raises(Subcritical):
        verify.check_lln_dead(models.build("yule_splitted_ou", {"offspring": {0: 0.5, 2: 0.5}}), 2.0,
                              n_reps=10, **SMALL)


def test_lln_dead_constant():
    rep = verify.check_lln_dead(models.build("yule_equal_split"), 6.0, n_reps=300, f=lambda x: np.ones_like(x),
                                stationary_run=200.0, **SMALL)
    assert rep.passed, rep.criteria


def test_levy_clt_plain_bm():
    bm = models.build("branching_levy", {"deltas": (0.0, 0.0), "drift": 1.0})
    assert models.levy_clt_parameters(bm) == (1.0, 1.0)
    rep = verify.check_levy_clt(bm, t=4.0, n_reps=300, **SMALL)
    assert rep.metadata["beta"] == 1.0 and rep.metadata["Sigma"] == 1.0
    assert rep.passed, rep.criteria


def test_fluctuation_zero_window():
    rep = verify.check_fluctuation_bracket(models.build("yule_splitted_ou"), T=1.0, t=0.0, n_reps=50,
                                           stationary_run=50.0, **SMALL)
    assert rep.metadata["var_M"] == 0.0 and rep.metadata["bracket_mean"] == 0.0
    assert rep.passed


def test_fluctuation_equal_split_no_motion():
    eq = models.build("yule_equal_split", {"x0": 1.5})
    rep = verify.check_fluctuation_bracket(eq, T=0.5, t=1.0, grid=2.0**-5, n_reps=3000,
                                           stationary_run=50.0, **SMALL)
    assert rep.passed, rep.criteria


def test_fluctuation_argument_errors():
    ou = models.build("yule_splitted_ou")
    with pytest.raises(InvalidParameters):
        verify.check_fluctuation_bracket(ou, f=np.cos, n_reps=10)
    with pytest.raises(InvalidParameters):
        verify.check_fluctuation_bracket(ou, t=0.3, grid=0.25, n_reps=10)
    with pytest.raises(InvalidParameters):
        verify.check_fluctuation_bracket(models.build("branching_levy"), n_reps=10)


def test_run_checks_records_errors():
    def boom():
        raise Subcritical("nope")

    seen = []
    reps = verify.run_checks({"a": boom, "b": lambda: verify.CheckReport.failed("b", ValueError("x"))},
                             seen.append)
    assert [r.name for r in reps] == ["a", "b"] and len(seen) == 2
    assert reps[0].error == "Subcritical: nope" and not reps[0].passed


def test_core_suite_shape():
    suite = verify.core_suite(0)
    assert len(suite) == 15 and list(suite)[0] == "tree_moments_yule"
    with pytest.raises(InvalidParameters):
        verify.core_suite(0, overrides={"nonexistent": {}})


def test_checks_are_seed_deterministic():
    a = verify.check_many_to_one_fixed(models.build("yule_splitted_bm"), lambda x: x * x, 1.0, n_reps=2000, seed=5, jobs=1)
    b = verify.check_many_to_one_fixed(models.build("yule_splitted_bm"), lambda x: x * x, 1.0, n_reps=2000, seed=5, jobs=4)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
