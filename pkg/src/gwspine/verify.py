"""Tree-side versus spine-side verification of the branching identities.

Every check simulates both sides independently (different RNG domains),
reduces them to :class:`~gwspine.stats.McEstimate` and compares with a
two-sample z statistic.  Some checks add further criteria (KS distances,
variance ratios, trends); a report passes only when all of them hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats as _st
from scipy.special import roots_legendre

from . import _backend, models
from . import rng as R
from .auxiliary import _pair_law, apply_j1, draw_pairs, estimate_stationary, run_spines
from .branching import BranchingModel, core_call, eval_fn, replica_statistics
from .errors import (
    AllExtinct,
    DegeneratePairs,
    GridUnderResolved,
    InvalidParameters,
    QuadratureUnderResolved,
    Subcritical,
)
from .gw_tree import expected_moments, geometric_pmf, tree_counts, yule_counts_fast
from .motion import LinearDiffusion
from .offspring import OffspringDistribution, validate, yule
from .stats import (
    McEstimate,
    batch_means,
    chi_square_counts,
    ks_distance,
    ks_vs_cdf,
    quantile_pairs,
    ratio_estimate,
    two_sample_z,
)

Z_MAX = 4.0


@dataclass
class CheckReport:
    """Outcome of one check.

    ``z`` compares ``lhs`` and ``rhs``; ``criteria`` lists every pass/fail
    condition (the z test included) and ``passed`` is their conjunction.
    ``series`` holds plot-ready ``(x, y)`` data keyed by series name.
    """

    name: str
    lhs: McEstimate
    rhs: McEstimate
    z: float
    z_max: float
    criteria: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c["passed"] for c in self.criteria)

    def to_dict(self) -> dict:
        return {"name": self.name, "pass": self.passed, "z": _num(self.z), "z_max": self.z_max,
                "lhs": _est(self.lhs), "rhs": _est(self.rhs), "criteria": self.criteria,
                "metadata": self.metadata, "series": self.series, "error": self.error}

    @classmethod
    def failed(cls, name: str, error: BaseException, metadata: dict | None = None) -> "CheckReport":
        nan = McEstimate(math.nan, 0.0, 0)
        return cls(name, nan, nan, math.inf, Z_MAX, [], dict(metadata or {}), {},
                   f"{type(error).__name__}: {error}")


def _num(v):
    # JSON has no inf/nan; keep them as strings so reports stay valid JSON
    v = float(v)
    return v if math.isfinite(v) else str(v)


def _est(e: McEstimate) -> dict:
    return {"mean": _num(e.mean), "se": _num(e.se), "n": int(e.n)}


def criterion(name: str, value: float, threshold: float, op: str = "<=") -> dict:
    ops = {"<=": lambda a, b: a <= b, "<": lambda a, b: a < b, ">=": lambda a, b: a >= b,
           ">": lambda a, b: a > b}
    return {"name": name, "value": _num(value), "op": op, "threshold": _num(threshold),
            "passed": bool(ops[op](float(value), float(threshold)))}


def z_criterion(name: str, lhs: McEstimate, rhs: McEstimate, z_max: float) -> dict:
    z, _ = two_sample_z(lhs, rhs, z_max)
    c = criterion(name, z, z_max)
    c.update(lhs=_est(lhs), rhs=_est(rhs))
    return c


def _report(name, lhs, rhs, z_max, extra=(), metadata=None, series=None) -> CheckReport:
    z, _ = two_sample_z(lhs, rhs, z_max)
    crits = [criterion("z", z, z_max)] + list(extra)
    return CheckReport(name, lhs, rhs, z, z_max, crits, dict(metadata or {}), dict(series or {}))


def _meta(model: BranchingModel | None, **kw) -> dict:
    out = {}
    if model is not None:
        out["model"] = model.name
    for k, v in kw.items():
        out[k] = _num(v) if isinstance(v, float) else v
    return out


def _series(x, y) -> dict:
    return {"x": [_num(a) for a in np.asarray(x, dtype=float)],
            "y": [_num(b) for b in np.asarray(y, dtype=float)]}


def _spine_start(model: BranchingModel, seed: int, domain: str, n: int):
    keys = R.replica_keys(seed, domain, 0, n)
    x0, ty0 = model.initial_states(keys)
    return keys, x0, ty0


# --------------------------------------------------------------------------
# genealogy


def check_tree_moments(offspring: OffspringDistribution | dict, r: float = 1.0, t: float = 1.0, *,
                       n_reps: int = 10**5, z_max: float = Z_MAX, geometric: bool | None = None,
                       p_min: float = 1e-3, seed: int = 0, jobs: int | None = None,
                       name: str = "tree_moments") -> CheckReport:
    """``E[N_t]``, ``E[N_t^2]`` and ``E[D_t]`` against their closed forms.

    For the Yule law a chi-square test of ``N_t`` against the geometric law
    with parameter ``exp(-r t)`` is added.
    """
    d = offspring if isinstance(offspring, OffspringDistribution) else validate(offspring)
    if geometric is None:
        geometric = d.support.tolist() == [2]
    out = tree_counts(d, r, [t], n_reps, seed=seed, jobs=jobs, domain=f"{name}-trees")
    N = out["N"][:, 0].astype(float)
    D = out["D"][:, 0].astype(float)
    ex = expected_moments(d, r, t)
    lhs = McEstimate.from_samples(N)
    rhs = McEstimate.exact(ex["EN"])
    extra = [z_criterion("z_EN2", McEstimate.from_samples(N * N), McEstimate.exact(ex["EN2"]), z_max),
             z_criterion("z_ED", McEstimate.from_samples(D), McEstimate.exact(ex["ED"]), z_max)]
    series = {}
    if geometric:
        p = math.exp(-r * t)
        kmax = int(N.max())
        obs = np.bincount(N.astype(np.int64), minlength=kmax + 1)[1:]
        _, pval, dof = chi_square_counts(obs, geometric_pmf(p, kmax))
        extra.append(criterion("chi2_geometric_p", pval, p_min, ">"))
        series["N_pmf"] = _series(np.arange(1, kmax + 1), obs / N.size)
    return _report(name, lhs, rhs, z_max, extra, _meta(None, offspring=d.to_dict(), r=r, t=t,
                                                       n=n_reps, seed=seed), series)


def check_w_law(r: float = 1.0, t: float = 8.0, *, n: int = 10**4, ks_max: float = 0.02,
                z_max: float = Z_MAX, bins: int = 64, fast: bool = True, seed: int = 0,
                jobs: int | None = None, name: str = "w_law") -> CheckReport:
    """``N_t e^{-rt}`` of the Yule tree against Exp(1)."""
    if fast:
        counts = yule_counts_fast(r, t, n, seed=seed)
    else:
        counts = tree_counts(yule(), r, [t], n, seed=seed, jobs=jobs, domain=f"{name}-trees")["N"][:, 0]
    w = counts * math.exp(-r * t)
    ks = ks_vs_cdf(w, _st.expon.cdf)
    mass, edges = np.histogram(w, bins=bins, range=(0.0, float(w.max())))
    centers = 0.5 * (edges[:-1] + edges[1:])
    return _report(name, McEstimate.from_samples(w), McEstimate.exact(1.0), z_max,
                   [criterion("ks_exp1", ks, ks_max, "<")],
                   _meta(None, r=r, t=t, n=n, seed=seed, fast=fast),
                   {"w_hist": _series(centers, mass / (w.size * (edges[1] - edges[0])))})


# --------------------------------------------------------------------------
# many-to-one identities


def check_many_to_one_fixed(model: BranchingModel, f: Callable | None, t: float, *,
                            n_reps: int = 10**5, z_max: float = Z_MAX,
                            path_times: Sequence[float] | None = None, exact: float | None = None,
                            seed: int = 0, jobs: int | None = None,
                            name: str = "many_to_one_fixed") -> CheckReport:
    """``E[sum_{u in V_t} f(X^u)] / E[N_t]`` against ``E[f(Y)]``.

    ``f`` acts on terminal states, or with ``path_times`` on the matrix of
    ancestral states at those times (one row per particle).  ``exact``
    adds z criteria of both sides against a known value.
    """
    en = math.exp(model.growth * t)
    two = model.n_types == 2
    obs = () if path_times is None else tuple(float(s) for s in path_times)
    if path_times is not None and max(obs) > t:
        raise InvalidParameters("path times must not exceed t")

    def stat(pop):
        if path_times is None:
            s, _ = pop.sum_over_alive(t, f)
        else:
            rows, X, _ = pop.ancestral_states(t, obs)
            vals = np.ones(rows.size) if f is None else np.asarray(f(X), dtype=float)
            s = np.bincount(pop.rep[rows], weights=vals, minlength=pop.n_reps)
        return {"s": s}

    tree = replica_statistics(model, t, stat, n_reps=n_reps, seed=seed, domain=f"{name}-trees",
                              obs_times=obs, jobs=jobs)
    lhs = McEstimate.from_samples(tree["s"] / en)

    keys, x0, ty0 = _spine_start(model, seed, f"{name}-spines", n_reps)

    def reduce(b):
        if f is None:
            return {"v": np.ones(len(b))}
        if path_times is None:
            return {"v": eval_fn(f, b.x, b.ty, two)}
        return {"v": np.asarray(f(b.obs_x), dtype=float)}

    rhs = McEstimate.from_samples(run_spines(model, keys, x0, ty0, t, obs, jobs=jobs, reduce=reduce)["v"])
    extra = []
    if exact is not None:
        extra = [z_criterion("z_lhs_exact", lhs, McEstimate.exact(exact), z_max),
                 z_criterion("z_rhs_exact", rhs, McEstimate.exact(exact), z_max)]
    return _report(name, lhs, rhs, z_max, extra,
                   _meta(model, t=t, n=n_reps, seed=seed, EN=en, exact=exact))


def midpoint_rule(T: float, points: int) -> tuple[np.ndarray, float]:
    h = T / points
    return h * (np.arange(points) + 0.5), h


def check_many_to_one_tree(model: BranchingModel, f: Callable[[np.ndarray, np.ndarray], np.ndarray] | None,
                           T: float, *, n_reps: int = 10**5, quad_points: int = 64,
                           z_max: float = Z_MAX, seed: int = 0, jobs: int | None = None,
                           name: str = "many_to_one_tree") -> CheckReport:
    """``E[sum_{beta(u) < T} f(beta(u), X^u)]`` against
    ``r int_0^T e^{r(m-1)s} E[f(s, Y_s)] ds``.

    ``f(s, x)`` is vectorised; ``None`` means ``1_{s < T}``, whose right
    side is computed exactly.  The integral uses the composite midpoint
    rule on one spine ensemble observed at all nodes; the rule is rerun
    with twice the nodes and a shift above one SE raises
    :class:`QuadratureUnderResolved`.
    """
    r, c = model.rate, model.growth
    two = model.n_types == 2

    def stat(pop):
        if f is None:
            s = pop.counts_dead(T).astype(float)
        else:
            s = pop.sum_over_tree(f, before=T)
        return {"s": s, "D": pop.counts_dead(T).astype(float)}

    tree = replica_statistics(model, T, stat, n_reps=n_reps, seed=seed, domain=f"{name}-trees", jobs=jobs)
    lhs = McEstimate.from_samples(tree["s"])
    ed = expected_moments(model.offspring, r, T)["ED"]

    if f is None:
        rhs = McEstimate.exact(ed)
        shift = 0.0
    else:
        s1, h1 = midpoint_rule(T, quad_points)
        s2, h2 = midpoint_rule(T, 2 * quad_points)
        grid = np.union1d(s1, s2)
        j1 = np.searchsorted(grid, s1)
        j2 = np.searchsorted(grid, s2)
        w1 = r * h1 * np.exp(c * s1)
        w2 = r * h2 * np.exp(c * s2)

        def reduce(b):
            if two:
                vals = np.asarray(f(grid[None, :], b.obs_x, b.obs_ty), dtype=float)
            else:
                vals = np.asarray(f(grid[None, :], b.obs_x), dtype=float)
            return {"v1": vals[:, j1] @ w1, "v2": vals[:, j2] @ w2}

        keys, x0, ty0 = _spine_start(model, seed, f"{name}-spines", n_reps)
        out = run_spines(model, keys, x0, ty0, T, grid, jobs=jobs, reduce=reduce)
        rhs = McEstimate.from_samples(out["v1"])
        fine = McEstimate.from_samples(out["v2"])
        shift = abs(fine.mean - rhs.mean)
        if shift > rhs.se:
            raise QuadratureUnderResolved(
                f"doubling the quadrature nodes moved the right side by {shift:.3g} > 1 SE ({rhs.se:.3g})")
    extra = [z_criterion("z_DT_closed_form", McEstimate.from_samples(tree["D"]), McEstimate.exact(ed), z_max)]
    return _report(name, lhs, rhs, z_max, extra,
                   _meta(model, T=T, n=n_reps, seed=seed, quad_points=quad_points, ED=ed,
                         quadrature_shift=float(shift)))


def truncated_exponential(u: np.ndarray, c: float, t: float) -> np.ndarray:
    """Inverse CDF of the density proportional to ``exp(-c a)`` on ``[0, t]``."""
    if abs(c) < 1e-12:
        return u * t
    return -np.log1p(-u * (-math.expm1(-c * t))) / c


def fork_normalizer(model: BranchingModel, t: float) -> float:
    """``r int_0^t e^{-r(m-1)a} da * sum_k k(k-1) p_k``."""
    _, _, pair_mass = _pair_law(model.offspring)
    c = model.growth
    if abs(c) < 1e-12:
        return model.rate * t * pair_mass
    return -math.expm1(-c * t) / (model.m - 1.0) * pair_mass


def check_fork_second_moment(model: BranchingModel, f: Callable | None = None, g: Callable | None = None,
                             t: float = 1.0, *, n_reps: int = 10**5, z_max: float = Z_MAX,
                             seed: int = 0, jobs: int | None = None,
                             name: str = "fork_second_moment") -> CheckReport:
    """``E[sum_{u != v in V_t} f(X^u_t) g(X^v_t)] / E[N_t]^2`` against the
    two-legged spine.

    The fork time ``a`` is drawn with density proportional to
    ``exp(-r(m-1)a)`` on ``[0, t]``; the trunk runs to ``a``, then
    ``H' ~ k(k-1)p_k`` children are produced and an ordered pair ``I != K``
    restarts two independent spines for ``t - a``.  Each sample is
    ``Z f(leg 1) g(leg 2)`` with ``Z`` the :func:`fork_normalizer`, which
    is exactly the importance weight ``r e^{-r(m-1)a} / q(a)`` times the
    total pair mass.  With ``f = g = 1`` the right side is the closed form
    ``(E[N_t^2] - E[N_t]) / E[N_t]^2``.
    """
    if not t > 0:
        raise InvalidParameters("t must be positive")
    d = model.offspring
    _, _, pair_mass = _pair_law(d)
    if pair_mass == 0:
        raise DegeneratePairs("offspring support has no k >= 2; both sides vanish")
    two = model.n_types == 2
    en = math.exp(model.growth * t)

    def stat(pop):
        return {"s": pop.sum_over_forks(t, f, g)}

    tree = replica_statistics(model, t, stat, n_reps=n_reps, seed=seed, domain=f"{name}-trees", jobs=jobs)
    lhs = McEstimate.from_samples(tree["s"] / en**2)

    Z = fork_normalizer(model, t)
    c = model.growth
    keys, x0, ty0 = _spine_start(model, seed, f"{name}-trunk", n_reps)
    stream = R.Stream.from_seed(seed, f"{name}-fork")
    a = truncated_exponential(stream.spawn(1).uniforms(n_reps), c, t)
    trunk = run_spines(model, keys, x0, ty0, a, jobs=jobs)
    h, i, k = draw_pairs(d, stream.spawn(2), n_reps)
    theta = stream.spawn(3).uniforms(n_reps)
    enc = model.encode()
    core = _backend.kernels(enc)
    xi, ti = core_call(core.pick_children, enc, trunk.x, trunk.ty, h, theta, i)
    xk, tk = core_call(core.pick_children, enc, trunk.x, trunk.ty, h, theta, k)
    left = run_spines(model, R.replica_keys(seed, f"{name}-left", 0, n_reps), xi, ti, t - a, jobs=jobs)
    right = run_spines(model, R.replica_keys(seed, f"{name}-right", 0, n_reps), xk, tk, t - a, jobs=jobs)
    v = Z * eval_fn(f, left.x, left.ty, two) * eval_fn(g, right.x, right.ty, two)
    is_est = McEstimate.from_samples(v)

    # weight audit: the proposal integrates to one and its sample mean of a
    # matches the analytic mean
    zq, wq = roots_legendre(64)
    nodes = 0.5 * t * (zq + 1.0)
    dens = np.exp(-c * nodes) / (t if abs(c) < 1e-12 else -math.expm1(-c * t) / c)
    mass = float(0.5 * t * np.sum(wq * dens))
    mean_a = float(0.5 * t * np.sum(wq * nodes * dens))
    extra = [criterion("proposal_mass_error", abs(mass - 1.0), 1e-10),
             z_criterion("z_proposal_mean", McEstimate.from_samples(a), McEstimate.exact(mean_a), z_max)]
    closed = None
    if f is None and g is None:
        ex = expected_moments(d, model.rate, t)
        closed = (ex["EN2"] - ex["EN"]) / ex["EN"] ** 2
        rhs = McEstimate.exact(closed)
        extra.append(criterion("importance_vs_closed_form", abs(is_est.mean - closed), 1e-9 * max(1.0, closed)))
    else:
        rhs = is_est
    return _report(name, lhs, rhs, z_max, extra,
                   _meta(model, t=t, n=n_reps, seed=seed, normalizer=Z, pair_mass=pair_mass,
                         importance_rhs=is_est.mean, closed_form=closed))


# --------------------------------------------------------------------------
# laws of large numbers


def _battery(stationary) -> list[tuple[str, Callable]]:
    q = np.quantile(stationary.samples, [0.25, 0.5, 0.75])
    edges = [-np.inf, *q, np.inf]
    fns = [("x", lambda x: x), ("x^2", lambda x: x * x), ("exp(-x^2)", lambda x: np.exp(-x * x))]
    for j in range(4):
        lo, hi = edges[j], edges[j + 1]
        fns.append((f"bin{j}", lambda x, lo=lo, hi=hi: ((x > lo) & (x <= hi)).astype(float)))
    return fns


def check_lln_alive(model: BranchingModel, t_list: Sequence[float] = (2.0, 4.0, 6.0, 10.0), *,
                    n_reps: int = 200, min_surviving: int = 200, ks_max: float = 0.02,
                    z_max: float = Z_MAX, stationary_run: float = 1e4, analytic_cdf: Callable | None = None,
                    require_trend: bool = True, seed: int = 0, jobs: int | None = None,
                    name: str = "lln_alive") -> CheckReport:
    """Pooled population law of the surviving replicas against the spine's
    stationary law.

    The oracle is a long spine run (or ``analytic_cdf`` when the stationary
    law is known).  Criteria: KS distance at the last time below
    ``ks_max``, the KS distances decreasing along ``t_list``, and a z test
    per battery function on the pooled ratio ``<Z_t, f> / N_t`` at the last
    time.
    """
    times = sorted(float(s) for s in t_list)
    horizon = times[-1]
    pi = estimate_stationary(model, stationary_run, seed=seed)
    battery = _battery(pi)

    def stat(pop):
        out = {}
        for j, s in enumerate(times):
            rows, x, _ = pop.states_at(s)
            rep = pop.rep[rows]
            out[f"N{j}"] = np.bincount(rep, minlength=pop.n_reps)
            out[f"x{j}"] = x[np.argsort(rep, kind="stable")]
        for k, (_, fn) in enumerate(battery):
            out[f"f{k}"], _ = pop.sum_over_alive(horizon, fn)
        return out

    obs = times[:-1]
    res = replica_statistics(model, horizon, stat, n_reps=n_reps, seed=seed, domain=f"{name}-trees",
                             obs_times=obs, jobs=jobs)
    last = len(times) - 1
    alive = res[f"N{last}"] > 0
    n_surv = int(alive.sum())
    if n_surv == 0:
        raise AllExtinct("every replica died out")
    ks = []
    for j in range(len(times)):
        # particles of replicas extinct by the last time are dropped at every t
        keep = np.repeat(alive, res[f"N{j}"])
        x = res[f"x{j}"][keep]
        ks.append(ks_vs_cdf(x, analytic_cdf) if analytic_cdf is not None else ks_distance(x, pi.samples))
    extra = [criterion("surviving_replicas", n_surv, min_surviving, ">="),
             criterion("ks_last", ks[-1], ks_max, "<")]
    if require_trend:
        worst = max((b - a for a, b in zip(ks, ks[1:])), default=-math.inf)
        extra.append(criterion("ks_max_increase", worst, 0.0, "<"))
    N = res[f"N{last}"][alive].astype(float)
    for k, (label, fn) in enumerate(battery):
        if label == "x^2":
            continue
        extra.append(z_criterion(f"z_{label}", ratio_estimate(res[f"f{k}"][alive], N), pi.expect(fn), z_max))
    k2 = [label for label, _ in battery].index("x^2")
    lhs = ratio_estimate(res[f"f{k2}"][alive], N)
    rhs = pi.expect(battery[k2][1])
    mean_n = [float(res[f"N{j}"][alive].mean()) for j in range(len(times))]
    series = {"lln_ks": _series(times, ks)}
    mass, edges = pi.histogram(64)
    series["stationary_hist"] = _series(0.5 * (edges[:-1] + edges[1:]), mass / np.diff(edges))
    return _report(name, lhs, rhs, z_max, extra,
                   _meta(model, t_list=times, n=n_reps, seed=seed, surviving=n_surv,
                         ks=[float(v) for v in ks], mean_N=mean_n, stationary_run=stationary_run,
                         oracle="analytic" if analytic_cdf is not None else "stationary_run"),
                   series)


def _j1_values(model: BranchingModel, f: Callable, xs: np.ndarray) -> np.ndarray:
    """Exact ``J_1 f`` at many states (kernels without hashed randomness)."""
    from .auxiliary import _exact_ok, _theta_nodes

    enc = model.encode()
    if not _exact_ok(enc):
        return np.array([apply_j1(model, f, float(x), exact=False).mean for x in xs])
    core = _backend.kernels(enc)
    th, w = _theta_nodes(enc)
    n, q = xs.size, th.size
    X = np.repeat(xs, q)
    TH = np.tile(th, n)
    ty = np.zeros(n * q, dtype=np.int32)
    out = np.zeros(n)
    for k, pk in model.offspring.items:
        if k == 0:
            continue
        kk = np.full(n * q, k, dtype=np.int64)
        acc = np.zeros(n * q)
        for j in range(k):
            cx, cty = core_call(core.pick_children, enc, X, ty, kk, TH, np.full(n * q, j, dtype=np.int64))
            acc += np.asarray(f(cx), dtype=float)
        out += pk * (acc.reshape(n, q) @ w)
    return out


def check_lln_dead(model: BranchingModel, t: float = 12.0, *, n_reps: int = 200,
                   f: Callable | None = None, path_functionals: Sequence | None = None,
                   z_max: float = Z_MAX, stationary_run: float = 1e4, oracle_points: int = 20000,
                   seed: int = 0, jobs: int | None = None, name: str = "lln_dead") -> CheckReport:
    """Dead population: ``sum_{beta(u) < t} f(X^u_{beta-}) / E[D_t]`` against
    ``<pi, f> * mean(W)`` with ``W = N_t e^{-r(m-1)t}`` from the same trees.

    ``path_functionals`` are triples ``(label, phi, f_hat)``: ``phi(birth
    state, lifetime, death state)`` is summed over the dead, and the target
    is ``<pi, J_1 f_hat> / m * mean(W)`` where ``f_hat(x)`` is the expected
    ``phi`` over one lifetime started at ``x``.  The two sides use
    independent standard errors.
    """
    if model.growth <= 0:
        raise Subcritical("the dead-population limit needs m > 1")
    f = f if f is not None else (lambda x: np.exp(-x))
    paths = list(path_functionals or ())
    ed = expected_moments(model.offspring, model.rate, t)["ED"]

    def stat(pop):
        out = {"dead": pop.sum_over_dead(t, f)[0], "N": pop.counts_alive(t).astype(float)}
        for j, (_, phi, _) in enumerate(paths):
            out[f"p{j}"] = pop.sum_over_dead_lifetimes(t, phi)
        return out

    res = replica_statistics(model, t, stat, n_reps=n_reps, seed=seed, domain=f"{name}-trees", jobs=jobs)
    W = McEstimate.from_samples(res["N"] * math.exp(-model.growth * t))
    pi = estimate_stationary(model, stationary_run, seed=seed)

    def target(pf: McEstimate) -> McEstimate:
        mean = pf.mean * W.mean
        return McEstimate(mean, math.sqrt((pf.mean * W.se) ** 2 + (W.mean * pf.se) ** 2), W.n)

    lhs = McEstimate.from_samples(res["dead"] / ed)
    pf = pi.expect(f)
    rhs = target(pf)
    extra = []
    step = max(1, pi.samples.size // oracle_points)
    sub = pi.samples[::step]
    batches = min(pi.batches, sub.size)
    for j, (label, _, fhat) in enumerate(paths):
        jv = _j1_values(model, fhat, sub) / model.m
        extra.append(z_criterion(f"z_path_{label}", McEstimate.from_samples(res[f"p{j}"] / ed),
                                 target(batch_means(jv, batches)), z_max))
    return _report(name, lhs, rhs, z_max, extra,
                   _meta(model, t=t, n=n_reps, seed=seed, ED=ed, mean_W=W.mean, pi_f=pf.mean,
                         stationary_run=stationary_run))


# --------------------------------------------------------------------------
# branching Levy central limit


def check_levy_clt(model: BranchingModel, t: float = 8.0, *, n_reps: int = 2000, z_max: float = Z_MAX,
                   tol_var: float = 0.05, ks_max: float = 0.02, seed: int = 0, jobs: int | None = None,
                   name: str = "levy_clt") -> CheckReport:
    """Cross-section ``(X^u_t - beta t) / sqrt(t)`` pooled over surviving
    replicas against ``N(0, Sigma)``."""
    beta, sigma2 = models.levy_clt_parameters(model)
    x0 = float(model.initial) if not callable(model.initial) else 0.0
    st = math.sqrt(t)

    def stat(pop):
        rows, x, _ = pop.states_at(t)
        z = (x - x0 - beta * t) / st
        r = pop.rep[rows]
        return {"s1": np.bincount(r, weights=z, minlength=pop.n_reps),
                "s2": np.bincount(r, weights=z * z, minlength=pop.n_reps),
                "N": np.bincount(r, minlength=pop.n_reps).astype(float), "z": z}

    res = replica_statistics(model, t, stat, n_reps=n_reps, seed=seed, domain=f"{name}-trees", jobs=jobs)
    alive = res["N"] > 0
    if not alive.any():
        raise AllExtinct("every replica died out")
    N = res["N"][alive]
    lhs = ratio_estimate(res["s1"][alive], N)
    var = ratio_estimate(res["s2"][alive], N)
    z = res["z"]
    ks = ks_vs_cdf(z, _st.norm(scale=math.sqrt(sigma2)).cdf)
    theo, emp = quantile_pairs(z, _st.norm(scale=math.sqrt(sigma2)).ppf, 99)
    extra = [criterion("variance_rel_error", abs(var.mean - sigma2) / sigma2, tol_var),
             criterion("ks_normal", ks, ks_max, "<")]
    return _report(name, lhs, McEstimate.exact(0.0), z_max, extra,
                   _meta(model, t=t, n=n_reps, seed=seed, beta=beta, Sigma=sigma2, variance=var.mean,
                         variance_se=var.se, particles=int(z.size), surviving=int(alive.sum())),
                   {"clt_qq": _series(theo, emp)})


# --------------------------------------------------------------------------
# fluctuation martingale


class _Tabulated:
    """``g(x)`` by linear interpolation on a fixed grid, exact off the grid."""

    def __init__(self, fn: Callable, lo: float = -12.0, hi: float = 12.0, points: int = 24001):
        self.fn = fn
        self.lo, self.hi = lo, hi
        self.grid = np.linspace(lo, hi, points)
        self.vals = fn(self.grid)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.grid, self.vals)
        off = (x < self.lo) | (x > self.hi)
        if off.any():
            out[off] = self.fn(x[off])
        return out


def _split_operators(model: BranchingModel, f: Callable, df: Callable, d2f: Callable):
    """``(L + J) f`` and the bracket density for a binary splitted diffusion.

    With ``c = r (m - 1)`` and children ``F_1, F_2``::

        J f   = r int (f(F_1) + f(F_2)) dtheta - r f - (c/2) f
        bracket density = r int (f(F_1) + f(F_2) - f)^2 dtheta + sigma^2 f'^2

    The diffusion generator is ``b f' + sigma^2/2 f''``, whose carre du
    champ is ``sigma^2 f'^2``.
    """
    motion = model.motion
    if not isinstance(motion, LinearDiffusion):
        raise InvalidParameters("the bracket check needs a linear diffusion motion")
    if model.offspring.support.tolist() != [2]:
        raise InvalidParameters("the bracket check needs binary splitting (p_2 = 1)")
    enc = model.encode()
    core = _backend.kernels(enc)
    from .auxiliary import _theta_nodes

    th, w = _theta_nodes(enc)
    r, c, s2 = model.rate, model.growth, motion.sigma**2
    q = th.size

    def children_sums(x):
        n = x.size
        X = np.repeat(x, q)
        TH = np.tile(th, n)
        ty = np.zeros(n * q, dtype=np.int32)
        two = np.full(n * q, 2, dtype=np.int64)
        tot = np.zeros(n * q)
        for j in range(2):
            cx, _ = core_call(core.pick_children, enc, X, ty, two, TH, np.full(n * q, j, dtype=np.int64))
            tot += f(cx)
        return tot.reshape(n, q), f(x)

    def gen(x):
        sums, fx = children_sums(x)
        drift = (motion.b0 + motion.b1 * x) * df(x) + 0.5 * s2 * d2f(x)
        return drift + r * (sums @ w) - r * fx - 0.5 * c * fx

    def bracket(x):
        sums, fx = children_sums(x)
        return r * (((sums - fx[:, None]) ** 2) @ w) + s2 * df(x) ** 2

    return _Tabulated(gen), _Tabulated(bracket)


def _window_integrals(pop, lo: float, hi: float, obs_keep: np.ndarray, fns, rates) -> list[np.ndarray]:
    """Per replica ``sum_u int_{[lo, hi] & life(u)} g(X^u_s) e^{-k s} ds`` for
    each ``(g, k)``, by the trapezoid rule through the recorded states of
    every particle plus its exact birth and end states."""
    obs_t = pop.obs_times[pop.obs_idx[obs_keep]]
    node = [pop.obs_node[obs_keep]]
    tt = [obs_t]
    xx = [pop.obs_x[obs_keep]]
    born = np.nonzero((pop.birth >= lo) & (pop.birth <= hi))[0]
    node.append(born)
    tt.append(pop.birth[born])
    xx.append(pop.x_birth[born])
    live = np.nonzero((pop.death > lo) & (pop.birth <= hi))[0]
    node.append(live)
    tt.append(np.minimum(pop.death[live], hi))
    xx.append(pop.x_end[live])
    node = np.concatenate(node)
    tt = np.concatenate(tt)
    xx = np.concatenate(xx)
    order = np.lexsort((tt, node))
    node, tt, xx = node[order], tt[order], xx[order]
    same = node[1:] == node[:-1]
    dt = np.where(same, tt[1:] - tt[:-1], 0.0)
    rep = pop.rep[node[:-1]]
    out = []
    for g, k in zip(fns, rates):
        v = g(xx) * np.exp(-k * tt)
        seg = 0.5 * dt * (v[1:] + v[:-1])
        out.append(np.bincount(rep, weights=seg, minlength=pop.n_reps))
    return out


def check_fluctuation_bracket(model: BranchingModel, T: float = 1.0, t: float = 1.0, *,
                              f: Callable | None = None, df: Callable | None = None,
                              d2f: Callable | None = None, grid: float = 2.0**-8,
                              n_reps: int = 10**4, tol_rel: float = 0.10, z_max: float = Z_MAX,
                              stationary_run: float = 2e3, seed: int = 0, jobs: int | None = None,
                              name: str = "fluctuation_bracket") -> CheckReport:
    """Martingale ``M = A(T+t) - A(T) - int_T^{T+t} <Z_s, (L+J) f> e^{-cs/2} ds``
    with ``A(s) = <Z_s, f> e^{-cs/2}``.

    Checks that ``mean(M)`` vanishes and that ``Var(M)`` matches the mean
    bracket ``int_T^{T+t} <Z_s, bracket density> e^{-cs} ds`` within
    ``tol_rel``.  Both time integrals run on the observation grid; the same
    trees observed on a grid twice as fine must give a variance within
    ``tol_rel / 2`` or :class:`GridUnderResolved` is raised.
    """
    if f is None:
        f = lambda x: np.exp(-x * x)  # noqa: E731
        df = lambda x: -2.0 * x * np.exp(-x * x)  # noqa: E731
        d2f = lambda x: (4.0 * x * x - 2.0) * np.exp(-x * x)  # noqa: E731
    elif df is None or d2f is None:
        raise InvalidParameters("pass the first two derivatives of f")
    gen, brk = _split_operators(model, f, df, d2f)
    c = model.growth
    hi = T + t
    fine = grid / 2.0
    n_fine = int(round(t / fine))
    if abs(n_fine * fine - t) > 1e-12 * max(1.0, t):
        raise InvalidParameters("t must be a multiple of the grid")
    obs = T + fine * np.arange(n_fine + 1)

    def stat(pop):
        if t == 0:
            z = np.zeros(pop.n_reps)
            return {"M1": z, "M2": z, "B1": z, "B2": z, "N": pop.counts_alive(T).astype(float)}
        sT, _ = pop.sum_over_alive(T, f)
        sH, nH = pop.sum_over_alive(hi, f)
        a = sH * math.exp(-0.5 * c * hi) - sT * math.exp(-0.5 * c * T)
        out = {"N": nH.astype(float)}
        for tag, keep in (("1", pop.obs_idx % 2 == 0), ("2", np.ones(pop.obs_idx.size, dtype=bool))):
            drift, b = _window_integrals(pop, T, hi, keep, (gen, brk), (0.5 * c, c))
            out["M" + tag] = a - drift
            out["B" + tag] = b
        return out

    res = replica_statistics(model, hi, stat, n_reps=n_reps, seed=seed, domain=f"{name}-trees",
                             obs_times=obs, jobs=jobs)
    M1, M2 = res["M1"], res["M2"]
    lhs = McEstimate.from_samples(M1)
    var1 = float(np.var(M1, ddof=1))
    var2 = float(np.var(M2, ddof=1))
    bracket = McEstimate.from_samples(res["B1"])
    if t > 0 and abs(var1 - var2) > 0.5 * tol_rel * var2:
        raise GridUnderResolved(f"halving the grid moved Var(M) from {var1:.4g} to {var2:.4g}")
    rel = abs(var1 - bracket.mean) / bracket.mean if bracket.mean > 0 else (0.0 if var1 == 0 else math.inf)
    extra = [criterion("variance_vs_bracket_rel", rel, tol_rel)]
    # limit variance V(f) = <pi, bracket density>; informational only
    pi = estimate_stationary(model, stationary_run, seed=seed)
    vf = pi.expect(brk)
    w_mean = float(np.mean(res["N"]) * math.exp(-c * hi))
    return _report(name, lhs, McEstimate.exact(0.0), z_max, extra,
                   _meta(model, T=T, t=t, n=n_reps, seed=seed, grid=grid, var_M=var1,
                         var_M_half_grid=var2, bracket_mean=bracket.mean, bracket_se=bracket.se,
                         V_f=vf.mean, V_f_times_t_mean_W=vf.mean * t * w_mean))


# --------------------------------------------------------------------------
# the acceptance suite


def _x2(x):
    return x * x


def _ident(x):
    return x


def _tree_f(s, x):
    return np.exp(-s) * x * x


def _gauss(loc, var):
    return _st.norm(loc=loc, scale=math.sqrt(var)).cdf


def _core_suite_specs() -> dict:
    bm = models.build("yule_splitted_bm")
    ou = models.build("yule_splitted_ou")
    sub = models.build("yule_splitted_bm", {"offspring": {0: 0.75, 2: 0.25}})
    local = ou.with_changes(kernel=models.make_kernel("identity"), name="yule_ou_local_births")
    eq = models.build("yule_equal_split")
    levy = models.build("branching_levy")
    e_t = math.exp(-2.0)
    return {
        "tree_moments_yule": (check_tree_moments, dict(offspring={2: 1.0}, r=1.0, t=1.0, n_reps=10**5)),
        "tree_moments_general": (check_tree_moments, dict(offspring={0: 0.25, 2: 0.75}, r=1.0, t=1.0,
                                                          n_reps=10**5)),
        "w_law": (check_w_law, dict(r=1.0, t=8.0, n=10**4)),
        "many_to_one_fixed_bm": (check_many_to_one_fixed, dict(model=bm, f=_x2, t=2.0, n_reps=10**5)),
        "many_to_one_fixed_equal_split": (check_many_to_one_fixed, dict(model=eq, f=_ident, t=2.0,
                                                                        n_reps=10**5, exact=e_t)),
        "many_to_one_tree_bm": (check_many_to_one_tree, dict(model=bm, f=_tree_f, T=2.0, n_reps=10**5)),
        "many_to_one_tree_indicator": (check_many_to_one_tree, dict(model=bm, f=None, T=2.0,
                                                                    n_reps=10**5, z_max=1.0)),
        "many_to_one_tree_subcritical": (check_many_to_one_tree, dict(model=sub, f=_tree_f, T=2.0,
                                                                      n_reps=10**5)),
        "fork_constant": (check_fork_second_moment, dict(model=bm, f=None, g=None, t=1.0, n_reps=10**5)),
        "fork_terminal_x": (check_fork_second_moment, dict(model=bm, f=_ident, g=_ident, t=1.0,
                                                           n_reps=10**5)),
        "lln_alive_ou": (check_lln_alive, dict(model=ou, t_list=(2.0, 4.0, 6.0, 10.0), n_reps=200)),
        "lln_alive_local_births": (check_lln_alive, dict(model=local, t_list=(2.0, 4.0, 6.0, 10.0),
                                                         n_reps=200, analytic_cdf=_gauss(0.0, 0.5),
                                                         require_trend=False)),
        "lln_dead_equal_split": (check_lln_dead, dict(
            model=eq, t=12.0, n_reps=200,
            path_functionals=(("birth_state", _birth_phi, _exp_neg), ("lifetime", _life_phi, _half)))),
        "levy_clt": (check_levy_clt, dict(model=levy, t=8.0, n_reps=2000)),
        "fluctuation_bracket": (check_fluctuation_bracket, dict(model=ou, T=1.0, t=1.0, grid=2.0**-8,
                                                                n_reps=10**4)),
    }


def _birth_phi(xb, life, xe):
    return np.exp(-xb)


def _life_phi(xb, life, xe):
    return life


def _exp_neg(x):
    return np.exp(-x)


def _half(x):
    # expected Exp(r m) lifetime for the default Yule rate r = 1
    return np.full_like(x, 0.5)


def core_suite_kinds() -> dict[str, Callable]:
    return {name: fn for name, (fn, _) in _core_suite_specs().items()}


def core_suite(seed: int = 0, jobs: int | None = None, overrides: dict | None = None) -> dict[str, Callable[[], CheckReport]]:
    """The default suite: name -> zero-argument callable producing a report.

    ``overrides`` maps a check name to keyword arguments replacing the
    defaults (replica counts, times, tolerances).
    """
    ov = overrides or {}
    specs = _core_suite_specs()
    unknown = set(ov) - set(specs)
    if unknown:
        raise InvalidParameters(f"unknown checks in overrides: {sorted(unknown)}")
    suite = {}
    for name, (fn, kw) in specs.items():
        kw = {**kw, **ov.get(name, {})}
        suite[name] = _bind(fn, name, kw, seed, jobs)
    return suite


def _bind(fn, name, kw, seed, jobs):
    def run():
        return fn(**kw, seed=seed, jobs=jobs, name=name)

    run.check_name = name
    return run


SUITES = {"paper-core": core_suite}


def run_checks(checks: dict[str, Callable[[], CheckReport]], on_result: Callable | None = None) -> list[CheckReport]:
    """Run checks in order; an exception becomes a failed report instead of
    aborting the rest."""
    from .errors import GWSpineError

    reports = []
    for name, fn in checks.items():
        try:
            rep = fn()
        except (GWSpineError, ValueError, FloatingPointError, ZeroDivisionError) as exc:
            rep = CheckReport.failed(name, exc)
        reports.append(rep)
        if on_result is not None:
            on_result(rep)
    return reports
