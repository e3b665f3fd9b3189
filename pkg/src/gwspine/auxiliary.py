"""The auxiliary (spine) process and the operators built on it.

The spine ``Y`` follows the motion between jumps; jumps come at rate
``r m``, the number of children ``H`` is size-biased (``h p_h / m``), one of
them ``I`` is picked uniformly and ``Y`` restarts at ``F_I^(H)(Y_-, theta)``.
``Lambda`` accumulates ``log H`` at every jump.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import roots_legendre

from . import _backend, farm
from . import rng as R
from ._encoded import KER_ADDITIVE, KER_BETA, KER_EQUAL, KER_IDENTITY, KER_UNIFORM
from .branching import BranchingModel, core_call, eval_fn
from .errors import DegeneratePairs, DivergenceDetected, NonFiniteState, ZeroMean
from .stats import McEstimate, batch_means

SPINE_CHUNK = 8192
QUAD_POINTS = 64


class Jump(NamedTuple):
    time: float
    H: int
    I: int  # 1-based child index
    theta: float


@dataclass
class AuxiliaryPath:
    """One spine: states and marks at the observation times plus its jumps."""

    times: np.ndarray
    states: np.ndarray
    types: np.ndarray
    marks: np.ndarray
    counts: np.ndarray  # S at each observation time
    jumps: list
    end_state: float
    end_type: int
    end_mark: float


@dataclass
class SpineBatch:
    """Many spines run for given durations from given starts."""

    obs_times: np.ndarray
    x: np.ndarray
    ty: np.ndarray
    S: np.ndarray
    lam: np.ndarray
    obs_x: np.ndarray
    obs_ty: np.ndarray
    obs_S: np.ndarray
    obs_lam: np.ndarray
    jumps: Optional[dict] = None

    def __len__(self):
        return self.x.size

    def path(self, i: int) -> AuxiliaryPath:
        jl = []
        if self.jumps is not None:
            sel = self.jumps["jump_spine"] == i
            jl = [Jump(float(t), int(h), int(k), float(th)) for t, h, k, th in zip(
                self.jumps["jump_t"][sel], self.jumps["jump_H"][sel],
                self.jumps["jump_I"][sel], self.jumps["jump_theta"][sel])]
        return AuxiliaryPath(self.obs_times, self.obs_x[i], self.obs_ty[i], self.obs_lam[i],
                             self.obs_S[i], jl, float(self.x[i]), int(self.ty[i]), float(self.lam[i]))


def run_spines(model: BranchingModel, keys: np.ndarray, x0, ty0, durations, obs_times=(),
               record_jumps: bool = False, branching: bool = True, jobs: int | None = None,
               backend: str | None = None, reduce: Callable | None = None):
    """Low-level spine runner: one spine per key, each for its own duration.

    Without ``reduce`` the result is a :class:`SpineBatch`.  With it, each
    chunk's batch is passed to ``reduce`` (which returns a dict of arrays)
    and the arrays are concatenated in spine order; observation matrices
    then never exist for more than one chunk at a time.
    """
    enc = model.encode()
    if branching and enc.m <= 0:
        raise ZeroMean("the spine needs a positive mean offspring number")
    core = _backend.kernels(enc, backend)
    n = len(keys)
    keys = np.asarray(keys, dtype=np.uint64)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n,))
    ty0 = np.broadcast_to(np.asarray(ty0, dtype=np.int32), (n,))
    dur = np.broadcast_to(np.asarray(durations, dtype=float), (n,))
    obs = np.asarray(obs_times, dtype=float)

    def work(s, c):
        out = core_call(core.simulate_spines, enc, keys[s:s + c], x0[s:s + c], ty0[s:s + c],
                        dur[s:s + c], obs, record_jumps, branching)
        if record_jumps:
            out["jump_spine"] = out["jump_spine"] + s
        if reduce is not None:
            return reduce(_batch(obs, out))
        return out

    parts = farm.run(work, n, SPINE_CHUNK, jobs)
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    if reduce is not None:
        return cat
    return _batch(obs, cat)


def _batch(obs, out) -> SpineBatch:
    jumps = None
    if "jump_spine" in out:
        jumps = {k: out[k] for k in ("jump_spine", "jump_t", "jump_H", "jump_I", "jump_theta")}
    return SpineBatch(obs, out["x"], out["ty"], out["S"], out["lam"], out["obs_x"], out["obs_ty"],
                      out["obs_S"], out["obs_lam"], jumps)


def simulate_auxiliary(model: BranchingModel, horizon: float, *, n: int = 1, seed: int = 0,
                       domain: str = "spine", obs_times: Sequence[float] = (),
                       record_jumps: bool = True, start=None, jobs: int | None = None,
                       backend: str | None = None) -> SpineBatch:
    """``n`` spines on ``[0, horizon]`` started from the model's initial law
    (or from ``start``)."""
    keys = R.replica_keys(seed, domain, 0, n)
    if start is None:
        x0, ty0 = model.initial_states(keys)
    elif isinstance(start, tuple):
        x0, ty0 = np.full(n, float(start[0])), np.full(n, int(start[1]), dtype=np.int32)
    else:
        x0, ty0 = np.full(n, float(start)), np.zeros(n, dtype=np.int32)
    obs = sorted(set(float(s) for s in obs_times if 0 <= s <= horizon))
    return run_spines(model, keys, x0, ty0, horizon, obs, record_jumps, True, jobs, backend)


def estimate_semigroup(model: BranchingModel, f: Callable, t: float, start=None, *,
                       n_reps: int = 10**4, seed: int = 0, jobs: int | None = None) -> McEstimate:
    """Monte Carlo ``Q_t f(x) = E_x[f(Y_t)]`` (x from ``start`` or the initial law)."""
    if n_reps < 2:
        raise ValueError("need at least two replicas")
    two = model.n_types == 2
    if t == 0:
        keys = R.replica_keys(seed, "semigroup", 0, n_reps)
        if start is None:
            x0, ty0 = model.initial_states(keys)
        else:
            x0 = np.full(n_reps, float(start[0] if isinstance(start, tuple) else start))
            ty0 = np.full(n_reps, int(start[1]) if isinstance(start, tuple) else 0)
        return McEstimate.from_samples(eval_fn(f, x0, ty0, two))
    b = simulate_auxiliary(model, t, n=n_reps, seed=seed, domain="semigroup", start=start,
                           record_jumps=False, jobs=jobs)
    return McEstimate.from_samples(eval_fn(f, b.x, b.ty, two))


# --------------------------------------------------------------------------
# J operators


def _theta_nodes(enc) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature in theta for the kernel; a single node for theta-free kernels."""
    if enc.ker_kind in (KER_IDENTITY, KER_EQUAL, KER_ADDITIVE) and enc.kernel_fn is None:
        return np.array([0.5]), np.array([1.0])
    z, w = roots_legendre(QUAD_POINTS)
    return 0.5 * (z + 1.0), 0.5 * w


def _exact_ok(enc) -> bool:
    return enc.kernel_fn is None and enc.ker_kind in (
        KER_IDENTITY, KER_EQUAL, KER_ADDITIVE, KER_UNIFORM, KER_BETA)


def _children_table(model, x, ty, k, thetas):
    """States of the k children at each quadrature node: arrays (n_theta, k)."""
    enc = model.encode()
    core = _backend.kernels(enc)
    n = thetas.size
    X = np.empty((n, k))
    T = np.empty((n, k), dtype=np.int32)
    for j in range(k):
        X[:, j], T[:, j] = core_call(core.pick_children, enc, np.full(n, float(x)),
                                     np.full(n, int(ty), dtype=np.int32), np.full(n, k, dtype=np.int64),
                                     thetas, np.full(n, j, dtype=np.int64))
    return X, T


def apply_j1(model: BranchingModel, f: Callable, x: float, ty: int = 0, *, exact: bool = True,
             n_reps: int = 10**5, seed: int = 0) -> McEstimate:
    """``J_1 f(x) = m E[f(F_I^(H)(x, theta))] = sum_k p_k sum_j int f(F_j^(k)(x, theta)) dtheta``.

    Exact mode enumerates the offspring support and integrates theta with
    Gauss-Legendre nodes; kernels with hashed extra randomness (aging,
    custom) fall back to Monte Carlo.
    """
    d = model.offspring
    if d.m <= 0:
        raise ZeroMean("J_1 needs m > 0")
    enc = model.encode()
    two = model.n_types == 2
    if exact and _exact_ok(enc):
        th, w = _theta_nodes(enc)
        total = 0.0
        for k, pk in d.items:
            if k == 0:
                continue
            X, T = _children_table(model, x, ty, k, th)
            vals = eval_fn(f, X.ravel(), T.ravel(), two).reshape(X.shape)
            total += pk * float(np.sum(w * vals.sum(axis=1)))
        return McEstimate.exact(total)
    stream = R.Stream.from_seed(seed, "j1")
    h = d.size_biased_samples(stream.spawn(1), n_reps)
    idx = np.floor(stream.spawn(2).uniforms(n_reps) * h).astype(np.int64)
    theta = stream.spawn(3).uniforms(n_reps)
    core = _backend.kernels(enc)
    cx, cty = core_call(core.pick_children, enc, np.full(n_reps, float(x)),
                        np.full(n_reps, int(ty), dtype=np.int32), h.astype(np.int64), theta, idx)
    return McEstimate.from_samples(d.m * eval_fn(f, cx, cty, two))


def _pair_law(d):
    """Law of ``H'`` proportional to ``k (k - 1) p_k``, and its total mass."""
    k = d.support.astype(float)
    w = k * (k - 1.0) * d.p
    tot = float(w.sum())
    return d.support, (w / tot if tot > 0 else w), tot


def draw_pairs(d, stream: R.Stream, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(H', I, K)`` with ``H' ~ k (k-1) p_k`` and ``(I, K)`` a uniform ordered
    pair of distinct 0-based child indices."""
    ks, w, _ = _pair_law(d)
    u = stream.spawn(1).uniforms(n)
    h = ks[np.minimum(np.searchsorted(np.cumsum(w), u, side="right"), len(ks) - 1)]
    i = np.floor(stream.spawn(2).uniforms(n) * h).astype(np.int64)
    kk = np.floor(stream.spawn(3).uniforms(n) * (h - 1)).astype(np.int64)
    kk = kk + (kk >= i)
    return h.astype(np.int64), i, kk


def apply_j2(model: BranchingModel, f: Callable, g: Callable, x: float, ty: int = 0, *,
             exact: bool = True, n_reps: int = 10**5, seed: int = 0,
             strict: bool = False) -> McEstimate:
    """``J_2(f (x) g)(x) = m E[(H - 1) f(F_I) g(F_K)]`` over ordered pairs ``I != K``,
    i.e. ``sum_k p_k sum_{i != j} int f(F_i^(k)) g(F_j^(k)) dtheta``.

    Offspring laws without any ``k >= 2`` give an exact zero (or raise
    :class:`DegeneratePairs` with ``strict=True``).
    """
    d = model.offspring
    if d.m <= 0:
        raise ZeroMean("J_2 needs m > 0")
    _, _, tot = _pair_law(d)
    if tot == 0:
        if strict:
            raise DegeneratePairs("offspring support has no k >= 2")
        return McEstimate.exact(0.0)
    enc = model.encode()
    two = model.n_types == 2
    if exact and _exact_ok(enc):
        th, w = _theta_nodes(enc)
        total = 0.0
        for k, pk in d.items:
            if k < 2:
                continue
            X, T = _children_table(model, x, ty, k, th)
            fv = eval_fn(f, X.ravel(), T.ravel(), two).reshape(X.shape)
            gv = eval_fn(g, X.ravel(), T.ravel(), two).reshape(X.shape)
            pairs = fv.sum(axis=1) * gv.sum(axis=1) - (fv * gv).sum(axis=1)
            total += pk * float(np.sum(w * pairs))
        return McEstimate.exact(total)
    stream = R.Stream.from_seed(seed, "j2")
    h, i, k = draw_pairs(d, stream, n_reps)
    theta = stream.spawn(4).uniforms(n_reps)
    core = _backend.kernels(enc)
    xs = np.full(n_reps, float(x))
    ts = np.full(n_reps, int(ty), dtype=np.int32)
    xi, ti = core_call(core.pick_children, enc, xs, ts, h, theta, i)
    xk, tk = core_call(core.pick_children, enc, xs, ts, h, theta, k)
    return McEstimate.from_samples(tot * eval_fn(f, xi, ti, two) * eval_fn(g, xk, tk, two))


# --------------------------------------------------------------------------
# stationary law


@dataclass
class StationaryLaw:
    """Long-run empirical law of the spine from one trajectory."""

    samples: np.ndarray
    types: np.ndarray
    dt: float
    batches: int
    burn_in: float
    run_length: float

    def expect(self, f: Callable, two_type: bool = False) -> McEstimate:
        """``<pi, f>`` with a batch-means standard error."""
        return batch_means(eval_fn(f, self.samples, self.types, two_type), self.batches)

    def moments(self, order: int = 4) -> list[McEstimate]:
        return [batch_means(self.samples**p, self.batches) for p in range(1, order + 1)]

    def cdf(self, x) -> np.ndarray:
        s = np.sort(self.samples)
        return np.searchsorted(s, np.asarray(x), side="right") / s.size

    def histogram(self, bins: int = 64, range_=None) -> tuple[np.ndarray, np.ndarray]:
        mass, edges = np.histogram(self.samples, bins=bins, range=range_)
        return mass / self.samples.size, edges

    def write_csv(self, path, bins: int = 64) -> None:
        """Histogram rows ``bin_left,bin_right,mass`` followed by a moments row."""
        mass, edges = self.histogram(bins)
        mom = self.moments(4)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "mass"])
            for a, b, p in zip(edges[:-1], edges[1:], mass):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(p))])
            w.writerow(["moments"] + [repr(m.mean) for m in mom])


def estimate_stationary(model: BranchingModel, run_length: float = 1e4, *, burn_in: float | None = None,
                        batches: int = 32, sample_dt: float = 0.05, seed: int = 0, start=None,
                        bound: float = 1e9) -> StationaryLaw:
    """Sample the spine every ``sample_dt`` along one long run.

    The first ``burn_in`` time units (default 10% of the run) are dropped.
    Raises :class:`DivergenceDetected` if the trajectory leaves ``[-bound, bound]``.
    """
    if burn_in is None:
        burn_in = 0.1 * run_length
    n_obs = int(math.floor((run_length - burn_in) / sample_dt))
    obs = burn_in + sample_dt * np.arange(1, n_obs + 1)
    obs = obs[obs <= run_length]
    keys = R.replica_keys(seed, "stationary", 0, 1)
    if start is None:
        x0, ty0 = model.initial_states(keys)
    else:
        x0 = np.array([float(start)])
        ty0 = np.zeros(1, dtype=np.int32)
    try:
        b = run_spines(model, keys, x0, ty0, run_length, obs, False)
    except NonFiniteState as exc:
        raise DivergenceDetected("spine produced a non-finite state") from exc
    xs = b.obs_x[0]
    if not np.all(np.abs(xs) <= bound) or not abs(b.x[0]) <= bound:
        raise DivergenceDetected(f"spine left [-{bound:g}, {bound:g}]; parameters are likely not ergodic")
    return StationaryLaw(xs, b.obs_ty[0], sample_dt, batches, burn_in, run_length)
