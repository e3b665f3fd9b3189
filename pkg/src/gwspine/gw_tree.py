"""Continuous-time Galton-Watson trees (genealogy only).

Nodes carry Ulam-Harris labels: tuples of positive integers, the root being
the empty tuple.  A tree is stored as flat arrays in creation order; the
parent of row ``i`` is ``parent[i]`` (-1 for the root) and ``child[i]`` is
the last letter of its label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import rng as R
from .errors import BeyondHorizon, InvalidParameters, NotAlive, PopulationCapExceeded
from .offspring import OffspringDistribution

Label = tuple


def format_label(label: Label) -> str:
    """``(1, 2, 1)`` -> ``"1.2.1"``; the root is ``"root"``."""
    return ".".join(str(j) for j in label) if label else "root"


def parse_label(text: str) -> Label:
    text = text.strip()
    if text in ("", "root"):
        return ()
    return tuple(int(p) for p in text.split("."))


def mrca(u: Label, v: Label) -> Label:
    """Most recent common ancestor: the longest common prefix."""
    n = 0
    for a, b in zip(u, v):
        if a != b:
            break
        n += 1
    return tuple(u[:n])


def is_ancestor(v: Label, u: Label) -> bool:
    """``v`` is a prefix of ``u`` (every label is its own ancestor)."""
    return len(v) <= len(u) and tuple(u[: len(v)]) == tuple(v)


@dataclass(eq=False)
class GWTree:
    birth: np.ndarray
    death: np.ndarray
    nu: np.ndarray
    parent: np.ndarray
    child: np.ndarray
    horizon: float
    truncated: bool = False
    rate: float = float("nan")
    _labels: list = field(default=None, repr=False)
    _index: dict = field(default=None, repr=False)

    def __len__(self):
        return int(self.birth.size)

    @property
    def labels(self) -> list[Label]:
        if self._labels is None:
            labs: list[Label] = []
            for i in range(len(self)):
                p = int(self.parent[i])
                labs.append(() if p < 0 else labs[p] + (int(self.child[i]),))
            self._labels = labs
        return self._labels

    def index(self, label: Label) -> int:
        if self._index is None:
            self._index = {lab: i for i, lab in enumerate(self.labels)}
        try:
            return self._index[tuple(label)]
        except KeyError:
            raise NotAlive(f"label {format_label(tuple(label))} is not in the tree") from None

    def __contains__(self, label) -> bool:
        try:
            self.index(label)
            return True
        except NotAlive:
            return False

    @property
    def lifetimes(self) -> np.ndarray:
        return self.death - self.birth

    @property
    def generation(self) -> np.ndarray:
        return np.array([len(u) for u in self.labels])

    def node(self, label: Label) -> dict:
        i = self.index(label)
        return {"lifetime": float(self.death[i] - self.birth[i]), "alpha": float(self.birth[i]),
                "beta": float(self.death[i]), "nu": int(self.nu[i])}

    def _check(self, t):
        if t > self.horizon:
            raise BeyondHorizon(f"t={t} exceeds the horizon {self.horizon}")

    def alive_at(self, t: float) -> list[Label]:
        """``V_t = {u : alpha(u) <= t < beta(u)}``."""
        self._check(t)
        rows = np.nonzero((self.birth <= t) & (self.death > t))[0]
        labs = self.labels
        return [labs[i] for i in rows]

    def n_alive(self, t: float) -> int:
        self._check(t)
        return int(np.count_nonzero((self.birth <= t) & (self.death > t)))

    def deaths_before(self, t: float) -> int:
        """``D_t``: number of individuals with ``beta(u) < t``."""
        self._check(t)
        return int(np.count_nonzero(self.death < t))

    def ancestor_at(self, u: Label, t: float) -> Label:
        """The prefix of u alive at time t."""
        i = self.index(u)
        if not t < self.death[i]:
            raise NotAlive(f"{format_label(tuple(u))} is dead at t={t}")
        if t < 0:
            raise NotAlive("negative time")
        while self.birth[i] > t:
            i = int(self.parent[i])
        return self.labels[i]

    def bfs_order(self) -> list[int]:
        labs = self.labels
        return sorted(range(len(labs)), key=lambda i: (len(labs[i]), labs[i]))

    def dump(self, fh) -> None:
        """One node per line: ``label<TAB>alpha<TAB>beta<TAB>nu``, breadth first."""
        labs = self.labels
        for i in self.bfs_order():
            fh.write(f"{format_label(labs[i])}\t{float(self.birth[i])!r}\t{float(self.death[i])!r}\t{int(self.nu[i])}\n")

    def dumps(self) -> str:
        import io

        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()


def _genealogy_model(d: OffspringDistribution, r: float):
    from .branching import BranchingModel
    from .motion import IdentityKernel, LinearDiffusion

    return BranchingModel(rate=r, offspring=d, motion=LinearDiffusion(0.0, 0.0, 0.0),
                          kernel=IdentityKernel(), initial=0.0, name="genealogy")


def simulate_tree(d: OffspringDistribution, r: float, horizon: float, *, max_nodes: int = 10**6,
                  seed: int = 0, replica: int = 0, key: int | None = None) -> GWTree:
    """Continuous-time GW tree up to ``horizon``.

    Every node born before the horizon is present with its offspring count
    drawn.  Raises :class:`PopulationCapExceeded` with the partial tree when
    more than ``max_nodes`` nodes would be created.
    """
    if not r > 0:
        raise InvalidParameters("rate must be positive")
    if not horizon > 0:
        raise InvalidParameters("horizon must be positive")
    from .branching import Population, core_call
    from . import _backend

    model = _genealogy_model(d, r)
    keys = np.array([key if key is not None else R.replica_key(seed, "tree", replica)], dtype=np.uint64)
    enc = model.encode()
    raw = core_call(_backend.kernels(enc).simulate_trees, enc, keys, np.zeros(1),
                    np.zeros(1, dtype=np.int32), float(horizon), np.zeros(0), int(max_nodes))
    tree = Population(model, horizon, np.zeros(0), raw).tree(0)
    if tree.truncated:
        raise PopulationCapExceeded(f"tree exceeded max_nodes={max_nodes}", partial=tree)
    return tree


def tree_counts(d: OffspringDistribution, r: float, times: Sequence[float], n_reps: int, *,
                seed: int = 0, jobs: int | None = None, domain: str = "tree-counts") -> dict:
    """``N_t`` and ``D_t`` at each time for ``n_reps`` independent trees.

    Returns arrays of shape ``(n_reps, len(times))`` under keys ``"N"`` and ``"D"``.
    """
    from .branching import replica_statistics

    times = [float(t) for t in times]
    horizon = max(times)
    model = _genealogy_model(d, r)

    def stat(pop):
        return {"N": np.stack([pop.counts_alive(t) for t in times], axis=1),
                "D": np.stack([pop.counts_dead(t) for t in times], axis=1)}

    return replica_statistics(model, horizon, stat, n_reps=n_reps, seed=seed, domain=domain, jobs=jobs)


def yule_counts_fast(r: float, t: float, n: int, *, seed: int = 0) -> np.ndarray:
    """``N_t`` of the Yule tree drawn directly from its geometric law.

    ``P(N_t = k) = e^{-rt} (1 - e^{-rt})^{k-1}``; no tree is built.
    """
    u = R.Stream.from_seed(seed, "yule-fast").uniforms(n)
    p = math.exp(-r * t)
    if p == 1.0:
        return np.ones(n, dtype=np.int64)
    return np.maximum(1, np.ceil(np.log(u) / math.log1p(-p))).astype(np.int64)


def expected_moments(d: OffspringDistribution, r: float, t: float) -> dict:
    """Closed-form ``E[N_t]``, ``E[N_t^2]`` and ``E[D_t]``.

    For ``m = 1``: ``E[N_t^2] = 1 + var r t`` and ``E[D_t] = r t`` (the limit).
    """
    if not r > 0 or t < 0:
        raise InvalidParameters("need r > 0 and t >= 0")
    m, var = d.m, d.var
    a = r * (m - 1.0) * t
    if abs(m - 1.0) < 1e-12:
        return {"EN": 1.0, "EN2": 1.0 + var * r * t, "ED": r * t}
    en = math.exp(a)
    en2 = en + (var / (m - 1.0) + m) * (en * en - en)
    ed = math.expm1(a) / (m - 1.0)
    return {"EN": en, "EN2": en2, "ED": ed}


def geometric_pmf(p: float, kmax: int) -> np.ndarray:
    """``P(N = k)`` for ``k = 1..kmax`` of the geometric law on {1, 2, ...}."""
    k = np.arange(1, kmax + 1)
    return p * (1.0 - p) ** (k - 1)
