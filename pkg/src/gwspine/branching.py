"""Markov processes indexed by continuous-time Galton-Watson trees.

:class:`BranchingModel` bundles the branching rate, the offspring law, the
motion, the branching kernel and the initial law.  :func:`simulate_population`
produces a :class:`Population`: the replicas' node tables (one row per
individual) plus states at requested observation times, from which the
population functionals are evaluated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import _backend, farm
from . import rng as R
from ._encoded import Encoded
from .errors import (
    BeyondHorizon,
    InvalidParameters,
    KernelArityMismatch,
    NonFiniteState,
    NotAlive,
    PathsNotRecorded,
    PopulationCapExceeded,
    Subcritical,
)
from .gw_tree import GWTree, expected_moments, format_label
from .motion import BranchingKernel, MotionModel, _blank_fields
from .offspring import OffspringDistribution
from .stats import McEstimate

DEFAULT_MAX_NODES = 10**6


@dataclass(frozen=True, eq=False)
class BranchingModel:
    """Rate ``r``, offspring law, motion, kernel and initial law.

    ``initial`` is a point (float, or ``(x, type)`` for two-type motions) or
    a callable drawing a state from a :class:`~gwspine.rng.Stream`.
    """

    rate: float
    offspring: OffspringDistribution
    motion: MotionModel
    kernel: BranchingKernel
    initial: object = 0.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidParameters("branching rate must be positive")
        bad = [int(k) for k in self.offspring.support if not self.kernel.supports(int(k))]
        if bad:
            raise KernelArityMismatch(
                f"kernel {type(self.kernel).__name__} does not cover offspring counts {bad}")

    @property
    def m(self) -> float:
        return self.offspring.m

    @property
    def growth(self) -> float:
        """Malthusian parameter ``r (m - 1)``."""
        return self.rate * (self.offspring.m - 1.0)

    @property
    def n_types(self) -> int:
        return max(self.motion.n_types, 2 if self.kernel.two_type else 1)

    def encode(self) -> Encoded:
        cached = self.__dict__.get("_enc")
        if cached is not None:
            return cached
        fields = _blank_fields()
        d = self.offspring
        fields.update(rate=float(self.rate), m=float(d.m), off_k=d.support.astype(np.int64),
                      off_cum=np.cumsum(d.p))
        if d.m > 0:
            fields.update(sb_k=d.support.astype(np.int64), sb_cum=np.cumsum(d.size_biased))
        self.motion.encode_into(fields)
        self.kernel.encode_into(fields)
        enc = Encoded(**fields)
        object.__setattr__(self, "_enc", enc)
        return enc

    def initial_states(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = len(keys)
        init = self.initial
        if callable(init):
            xs = np.empty(n)
            ts = np.zeros(n, dtype=np.int32)
            for i, k in enumerate(keys):
                s = init(R.Stream(int(k), R.INIT))
                if isinstance(s, tuple):
                    xs[i], ts[i] = s
                else:
                    xs[i] = s
            return xs, ts
        if isinstance(init, tuple):
            return np.full(n, float(init[0])), np.full(n, int(init[1]), dtype=np.int32)
        return np.full(n, float(init)), np.zeros(n, dtype=np.int32)

    def with_changes(self, **kw) -> "BranchingModel":
        from dataclasses import replace

        return replace(self, **kw)

    def expected_nodes(self, horizon: float) -> float:
        """Expected number of individuals born before ``horizon``."""
        mom = expected_moments(self.offspring, self.rate, horizon)
        return 1.0 + self.offspring.m * mom["ED"]


def core_call(fn, *args):
    """Call a backend kernel, translating its error codes."""
    try:
        return fn(*args)
    except _backend.CoreErrors as exc:
        if exc.code == 2:
            raise KernelArityMismatch(f"kernel arity mismatch (replica {exc.index})") from None
        raise NonFiniteState(f"non-finite state in replica/spine {exc.index}") from None


def eval_fn(f, x, ty, two_type: bool) -> np.ndarray:
    """Evaluate a vectorised state function; two-type models pass the type too.

    ``None`` stands for the constant 1.
    """
    x = np.asarray(x, dtype=float)
    if f is None:
        return np.ones_like(x)
    if two_type:
        try:
            return np.asarray(f(x, ty), dtype=float) * np.ones_like(x)
        except TypeError:
            pass
    return np.asarray(f(x), dtype=float) * np.ones_like(x)


# --------------------------------------------------------------------------
# population container


class AncestralPath(NamedTuple):
    """Ancestral lineage of one particle sampled on a time grid."""

    times: np.ndarray
    states: np.ndarray
    types: np.ndarray
    branch_times: np.ndarray  # birth times of the lineage's members inside the window


class Population:
    """Node tables for a batch of replicas.

    Row ``i`` describes one individual: its replica, parent row, child
    index, birth and death times, offspring count, state at birth, state at
    death (or at the horizon when still alive), genealogy mark and random key.
    """

    def __init__(self, model: BranchingModel, horizon: float, obs_times: np.ndarray,
                 raw: dict, first_replica: int = 0, paths_grid: Optional[float] = None):
        self.model = model
        self.horizon = float(horizon)
        self.obs_times = np.asarray(obs_times, dtype=float)
        self.paths_grid = paths_grid
        self.first_replica = first_replica
        self.offsets = raw["offsets"]
        self.n_reps = len(self.offsets) - 1
        self.rep = np.repeat(np.arange(self.n_reps), np.diff(self.offsets))
        self.parent = raw["parent"]
        self.child = raw["child"]
        self.gen = raw["gen"]
        self.birth = raw["birth"]
        self.death = raw["death"]
        self.nu = raw["nu"]
        self.x_birth = raw["x_birth"]
        self.x_end = raw["x_end"]
        self.ty_birth = raw["ty_birth"]
        self.ty_end = raw["ty_end"]
        self.mark = raw["mark"]
        self.key = raw["key"]
        self.truncated = raw["truncated"]
        self.obs_node = raw["obs_node"]
        self.obs_idx = raw["obs_idx"]
        self.obs_x = raw["obs_x"]
        self.obs_ty = raw["obs_ty"]
        self._obs_sort = None

    def __len__(self):
        return self.n_reps

    @property
    def n_nodes(self) -> int:
        return int(self.offsets[-1])

    # -- time lookup -------------------------------------------------------

    def _check_t(self, t):
        if t > self.horizon + 1e-12:
            raise BeyondHorizon(f"t={t} is beyond the horizon {self.horizon}")
        if t < 0:
            raise BeyondHorizon("negative time")

    def _obs_index(self, t) -> Optional[int]:
        if self.obs_times.size == 0:
            return None
        j = int(np.argmin(np.abs(self.obs_times - t)))
        return j if abs(self.obs_times[j] - t) <= 1e-9 * max(1.0, abs(t)) else None

    def alive_mask(self, t: float) -> np.ndarray:
        self._check_t(t)
        return (self.birth <= t) & (self.death > t)

    def states_at(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rows, states and types of the individuals alive at t."""
        self._check_t(t)
        if t >= self.horizon - 1e-12 * max(1.0, self.horizon):
            rows = np.nonzero(self.death >= self.horizon)[0]
            return rows, self.x_end[rows], self.ty_end[rows]
        j = self._obs_index(t)
        if j is None:
            raise PathsNotRecorded(
                f"states at t={t} were not recorded; pass it in obs_times when simulating")
        sel = self.obs_idx == j
        return self.obs_node[sel], self.obs_x[sel], self.obs_ty[sel]

    def counts_alive(self, t: float) -> np.ndarray:
        """``N_t`` per replica."""
        return np.bincount(self.rep[self.alive_mask(t)], minlength=self.n_reps)

    def counts_dead(self, t: float) -> np.ndarray:
        """``D_t`` per replica (deaths strictly before t)."""
        self._check_t(t)
        return np.bincount(self.rep[self.death < t], minlength=self.n_reps)

    # -- functionals ---------------------------------------------------------

    def _apply(self, f, x, ty):
        return eval_fn(f, x, ty, self.model.n_types == 2)

    def sum_over_alive(self, t: float, f: Callable = None) -> tuple[np.ndarray, np.ndarray]:
        """``sum_{u in V_t} f(X^u_t)`` and ``N_t``, one entry per replica.

        ``f`` is vectorised over states (two-type models: ``f(x, type)``);
        ``None`` means ``f = 1``.
        """
        rows, x, ty = self.states_at(t)
        r = self.rep[rows]
        vals = self._apply(f, x, ty)
        s = np.bincount(r, weights=vals, minlength=self.n_reps)
        n = np.bincount(r, minlength=self.n_reps)
        return s, n

    def sum_over_dead(self, t: float, f: Callable = None) -> tuple[np.ndarray, np.ndarray]:
        """``sum_{beta(u) < t} f(X^u_{beta(u)-})`` and ``D_t`` per replica."""
        self._check_t(t)
        rows = np.nonzero(self.death < t)[0]
        vals = self._apply(f, self.x_end[rows], self.ty_end[rows])
        r = self.rep[rows]
        return (np.bincount(r, weights=vals, minlength=self.n_reps),
                np.bincount(r, minlength=self.n_reps))

    def sum_over_dead_lifetimes(self, t: float, phi: Callable) -> np.ndarray:
        """``sum_{beta(u) < t} phi(birth state, lifetime, death state)`` per replica."""
        self._check_t(t)
        rows = np.nonzero(self.death < t)[0]
        vals = np.asarray(phi(self.x_birth[rows], self.death[rows] - self.birth[rows],
                              self.x_end[rows]), dtype=float) * np.ones(rows.size)
        return np.bincount(self.rep[rows], weights=vals, minlength=self.n_reps)

    def sum_over_forks(self, t: float, f: Callable = None, g: Callable = None) -> np.ndarray:
        """``sum_{u != v in V_t} f(X^u_t) g(X^v_t)`` per replica (ordered pairs)."""
        rows, x, ty = self.states_at(t)
        r = self.rep[rows]
        fv = self._apply(f, x, ty)
        gv = self._apply(g, x, ty)
        sf = np.bincount(r, weights=fv, minlength=self.n_reps)
        sg = np.bincount(r, weights=gv, minlength=self.n_reps)
        sfg = np.bincount(r, weights=fv * gv, minlength=self.n_reps)
        return sf * sg - sfg

    def sum_over_tree(self, f: Callable[[np.ndarray, np.ndarray], np.ndarray], before: float) -> np.ndarray:
        """``sum_{u : beta(u) < before} f(beta(u), X^u_{beta(u)-})`` per replica."""
        self._check_t(before)
        rows = np.nonzero(self.death < before)[0]
        vals = np.asarray(f(self.death[rows], self.x_end[rows]), dtype=float) * np.ones(rows.size)
        return np.bincount(self.rep[rows], weights=vals, minlength=self.n_reps)

    # -- genealogy -------------------------------------------------------------

    def ancestor_rows(self, rows: np.ndarray, s: float) -> np.ndarray:
        """Row of the ancestor alive at time s for each row in ``rows``."""
        cur = np.array(rows, dtype=np.int64, copy=True)
        while True:
            up = self.birth[cur] > s
            if not up.any():
                return cur
            par = self.parent[cur[up]]
            if (par < 0).any():
                raise NotAlive(f"time {s} precedes the root's birth")
            cur[up] = par

    def _obs_lookup(self, rows: np.ndarray, j: int) -> tuple[np.ndarray, np.ndarray]:
        if self._obs_sort is None:
            nobs = max(1, self.obs_times.size)
            code = self.obs_node.astype(np.int64) * nobs + self.obs_idx
            order = np.argsort(code, kind="stable")
            self._obs_sort = (code[order], order)
        codes, order = self._obs_sort
        nobs = max(1, self.obs_times.size)
        want = rows.astype(np.int64) * nobs + j
        pos = np.searchsorted(codes, want)
        pos = np.minimum(pos, codes.size - 1)
        if codes.size == 0 or not np.all(codes[pos] == want):
            raise PathsNotRecorded("ancestral states missing at a grid time")
        hit = order[pos]
        return self.obs_x[hit], self.obs_ty[hit]

    def ancestral_states(self, t: float, times: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rows alive at t and, per row, the lineage's states at ``times``.

        Every entry of ``times`` (at most t) must be an observation time,
        except t itself when it is the horizon.
        """
        rows, xt, tyt = self.states_at(t)
        X = np.empty((rows.size, len(times)))
        TY = np.empty((rows.size, len(times)), dtype=np.int32)
        for c, s in enumerate(times):
            if s > t + 1e-12:
                raise BeyondHorizon("window time after t")
            if abs(s - t) <= 1e-12 * max(1.0, t):
                X[:, c], TY[:, c] = xt, tyt
                continue
            j = self._obs_index(s)
            if j is None:
                raise PathsNotRecorded(f"no recorded states at t={s}")
            anc = self.ancestor_rows(rows, s)
            X[:, c], TY[:, c] = self._obs_lookup(anc, j)
        return rows, X, TY

    def ancestral_window_functional(self, t: float, T: float, phi: Callable[[AncestralPath], float]) -> np.ndarray:
        """``sum_{u in V_t} phi(ancestral path of u on [t - T, t])`` per replica.

        Requires paths recorded on a grid (``paths_grid`` at simulation).
        """
        if self.paths_grid is None:
            raise PathsNotRecorded("simulate with paths_grid to use ancestral windows")
        if T > t + 1e-12:
            raise BeyondHorizon("window longer than t")
        lo = t - T
        grid = self.obs_times[(self.obs_times >= lo - 1e-12) & (self.obs_times < t - 1e-12)]
        times = np.append(grid, t)
        rows, X, TY = self.ancestral_states(t, times)
        out = np.zeros(self.n_reps)
        for i, row in enumerate(rows):
            bt = []
            cur = int(row)
            while cur >= 0 and self.birth[cur] > lo:
                bt.append(self.birth[cur])
                cur = int(self.parent[cur])
            out[self.rep[row]] += phi(AncestralPath(times, X[i], TY[i], np.array(bt[::-1])))
        return out

    # -- per-replica views -----------------------------------------------------

    def tree(self, i: int) -> GWTree:
        a, b = int(self.offsets[i]), int(self.offsets[i + 1])
        par = self.parent[a:b].copy()
        par[par >= 0] -= a
        return GWTree(birth=self.birth[a:b], death=self.death[a:b], nu=self.nu[a:b],
                      parent=par, child=self.child[a:b], horizon=self.horizon,
                      truncated=bool(self.truncated[i]), rate=self.model.rate)

    def replica(self, i: int) -> "PopulationRealization":
        return PopulationRealization(self, i)

    def labels(self, i: int) -> list[tuple]:
        return self.tree(i).labels

    def write_snapshot(self, path, times: Sequence[float] = None) -> None:
        """CSV ``replica,label,t,state[,type]`` at the given times (default: all
        observation times and the horizon)."""
        if times is None:
            times = list(self.obs_times) + [self.horizon]
        two = self.model.n_types == 2
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "label", "t", "state"] + (["type"] if two else []))
            labels = {}
            for t in times:
                rows, x, ty = self.states_at(float(t))
                order = np.lexsort((rows, self.rep[rows]))
                for k in order:
                    row = int(rows[k])
                    rp = int(self.rep[row])
                    if rp not in labels:
                        labels[rp] = self.labels(rp)
                    lab = format_label(labels[rp][row - int(self.offsets[rp])])
                    rec = [self.first_replica + rp, lab, repr(float(t)), repr(float(x[k]))]
                    if two:
                        rec.append(int(ty[k]))
                    w.writerow(rec)


class PopulationRealization:
    """One replica of a :class:`Population`, with scalar-valued functionals."""

    def __init__(self, pop: Population, index: int):
        self.pop = pop
        self.index = index
        self.rows = slice(int(pop.offsets[index]), int(pop.offsets[index + 1]))
        self.tree = pop.tree(index)

    @property
    def birth_state(self) -> np.ndarray:
        return self.pop.x_birth[self.rows]

    @property
    def terminal_state_at_death(self) -> np.ndarray:
        return self.pop.x_end[self.rows]

    @property
    def genealogy_mark(self) -> np.ndarray:
        return self.pop.mark[self.rows]

    @property
    def types_at_birth(self) -> np.ndarray:
        return self.pop.ty_birth[self.rows]

    def sum_over_alive(self, t, f=None) -> tuple[float, int]:
        s, n = self.pop.sum_over_alive(t, f)
        return float(s[self.index]), int(n[self.index])

    def sum_over_dead(self, t, f=None) -> tuple[float, int]:
        s, n = self.pop.sum_over_dead(t, f)
        return float(s[self.index]), int(n[self.index])

    def sum_over_forks(self, t, f=None, g=None) -> float:
        return float(self.pop.sum_over_forks(t, f, g)[self.index])

    def ancestral_window_functional(self, t, T, phi) -> float:
        return float(self.pop.ancestral_window_functional(t, T, phi)[self.index])


# --------------------------------------------------------------------------
# simulation


def _obs_grid(horizon: float, grid: float) -> np.ndarray:
    n = int(math.floor(horizon / grid + 1e-9))
    return np.array([k * grid for k in range(n + 1) if k * grid <= horizon])


def simulate_chunk(model: BranchingModel, horizon: float, keys: np.ndarray,
                   obs_times=(), max_nodes: int = DEFAULT_MAX_NODES, backend: str | None = None) -> dict:
    """Raw node tables for the replicas with the given root keys."""
    enc = model.encode()
    core = _backend.kernels(enc, backend)
    x0, ty0 = model.initial_states(keys)
    return core_call(core.simulate_trees, enc, keys, x0, ty0, float(horizon),
                     np.asarray(obs_times, dtype=float), int(max_nodes))


def simulate_population(model: BranchingModel, horizon: float, *, n_reps: int = 1, seed: int = 0,
                        domain: str = "population", obs_times: Sequence[float] = (),
                        paths_grid: Optional[float] = None, max_nodes: int = DEFAULT_MAX_NODES,
                        first_replica: int = 0, backend: str | None = None,
                        on_cap: str = "raise") -> Population:
    """Simulate ``n_reps`` independent replicas up to ``horizon``.

    States are recorded at ``obs_times`` (and on the ``paths_grid`` if
    given); death and birth states are always kept.  ``max_nodes`` caps each
    replica; ``on_cap="raise"`` raises :class:`PopulationCapExceeded`
    carrying the partial population, ``"flag"`` just marks ``truncated``.
    """
    if not horizon > 0:
        raise InvalidParameters("horizon must be positive")
    obs = np.asarray(sorted(set(float(s) for s in obs_times if 0 <= s <= horizon)), dtype=float)
    if paths_grid is not None:
        obs = np.union1d(obs, _obs_grid(horizon, paths_grid))
    keys = R.replica_keys(seed, domain, first_replica, n_reps)
    raw = simulate_chunk(model, horizon, keys, obs, max_nodes, backend)
    pop = Population(model, horizon, obs, raw, first_replica, paths_grid)
    if on_cap == "raise" and raw["truncated"].any():
        bad = np.nonzero(raw["truncated"])[0]
        raise PopulationCapExceeded(
            f"{bad.size} replica(s) hit max_nodes={max_nodes}", partial=pop)
    return pop


def replica_statistics(model: BranchingModel, horizon: float, stat: Callable[[Population], dict],
                       *, n_reps: int, seed: int, domain: str, obs_times=(), paths_grid=None, jobs=None,
                       max_nodes: int = 10**8, chunk: int | None = None,
                       backend: str | None = None) -> dict:
    """Run replicas in fixed chunks and reduce each chunk with ``stat``.

    ``stat`` maps a chunk's :class:`Population` to a dict of per-replica
    arrays; the arrays are concatenated in replica order.  Node tables are
    dropped after each chunk, so memory is bounded by the chunk size.
    """
    if chunk is None:
        chunk = farm.chunk_size_for(model.expected_nodes(horizon))

    def work(start, count):
        pop = simulate_population(model, horizon, n_reps=count, seed=seed, domain=domain,
                                  obs_times=obs_times, paths_grid=paths_grid, max_nodes=max_nodes,
                                  first_replica=start, backend=backend)
        return stat(pop)

    parts = farm.run(work, n_reps, chunk, jobs)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def estimate_W(counts: np.ndarray, model_or_growth, t: float) -> tuple[McEstimate, np.ndarray]:
    """W-proxies ``N_t exp(-r (m - 1) t)`` and their mean.

    ``model_or_growth`` is a :class:`BranchingModel` or the Malthusian
    parameter ``r (m - 1)``.
    """
    growth = model_or_growth.growth if isinstance(model_or_growth, BranchingModel) else float(model_or_growth)
    if growth <= 0:
        raise Subcritical("W is only defined for supercritical trees (m > 1)")
    w = np.asarray(counts, dtype=float) * math.exp(-growth * t)
    return McEstimate.from_samples(w), w
