"""Offspring distributions with finite support."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

from .errors import EmptySupport, NegativeWeight, PositiveP1, ZeroMean
from .rng import Stream

RawLaw = Union[Mapping[int, float], Iterable[tuple]]

_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class OffspringDistribution:
    """Law of the number of children, ``P(k) = p[i]`` for ``k = support[i]``.

    Construct through :func:`validate`.  Instances are immutable and can be
    shared between threads.
    """

    support: np.ndarray
    p: np.ndarray
    m: float
    var: float

    def __post_init__(self):
        self.support.setflags(write=False)
        self.p.setflags(write=False)

    @property
    def items(self) -> list[tuple[int, float]]:
        return [(int(k), float(q)) for k, q in zip(self.support, self.p)]

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.p)

    @property
    def size_biased(self) -> np.ndarray:
        """Weights ``k p_k / m`` aligned with ``support``."""
        if self.m <= 0:
            raise ZeroMean("size-biased law needs a positive mean")
        return self.support * self.p / self.m

    @property
    def pair_weight(self) -> float:
        """``sum_k k (k - 1) p_k``: the mass of ordered sibling pairs."""
        k = self.support.astype(float)
        return float(np.sum(k * (k - 1.0) * self.p))

    @property
    def max_k(self) -> int:
        return int(self.support.max())

    def prob(self, k: int) -> float:
        hit = np.nonzero(self.support == k)[0]
        return float(self.p[hit[0]]) if hit.size else 0.0

    def sample(self, stream: Stream) -> int:
        return sample(self, stream)

    def sample_size_biased(self, stream: Stream) -> int:
        return sample_size_biased(self, stream)

    def samples(self, stream: Stream, n: int) -> np.ndarray:
        return _draw(self.support, self.cumulative, stream.uniforms(n))

    def size_biased_samples(self, stream: Stream, n: int) -> np.ndarray:
        return _draw(self.support, np.cumsum(self.size_biased), stream.uniforms(n))

    def to_dict(self) -> dict[int, float]:
        return dict(self.items)

    def __repr__(self):
        body = ", ".join(f"{k}: {q:g}" for k, q in self.items)
        return f"OffspringDistribution({{{body}}}, m={self.m:g}, var={self.var:g})"


def _draw(support, cum, u):
    idx = np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)
    return support[idx]


def validate(raw: RawLaw) -> OffspringDistribution:
    """Normalise raw weights into an :class:`OffspringDistribution`.

    ``raw`` is a mapping ``{k: weight}`` or a sequence of ``(k, weight)``.
    Zero weights are dropped.  Any positive weight on ``k = 1`` is rejected:
    single-child events have to be absorbed into the motion instead.
    """
    pairs = list(raw.items()) if isinstance(raw, Mapping) else [tuple(x) for x in raw]
    acc: dict[int, float] = {}
    for k, w in pairs:
        k = int(k)
        w = float(w)
        if k < 0:
            raise EmptySupport(f"offspring count must be nonnegative, got {k}")
        if not math.isfinite(w):
            raise NegativeWeight(f"weight for k={k} is not finite")
        if w < 0:
            raise NegativeWeight(f"weight for k={k} is negative ({w})")
        acc[k] = acc.get(k, 0.0) + w
    acc = {k: w for k, w in acc.items() if w > 0}
    if not acc:
        raise EmptySupport("offspring law has no positive weight")
    if acc.get(1, 0.0) > 0:
        raise PositiveP1(
            "p_1 > 0: fold single-child events into the motion as jumps "
            "and rescale the branching rate"
        )
    ks = np.array(sorted(acc), dtype=np.int64)
    w = np.array([acc[int(k)] for k in ks], dtype=np.float64)
    p = w / w.sum()
    m = float(np.sum(ks * p))
    var = float(np.sum((ks - m) ** 2 * p))
    if abs(p.sum() - 1.0) > _TOL:
        raise EmptySupport("weights do not normalise")
    if m > 0:
        assert abs(np.sum(ks * p / m) - 1.0) < 1e-12
    return OffspringDistribution(ks, p, m, var)


def sample(d: OffspringDistribution, stream: Stream) -> int:
    """One draw of the offspring count."""
    return int(_draw(d.support, d.cumulative, stream.uniform()))


def sample_size_biased(d: OffspringDistribution, stream: Stream) -> int:
    """One draw from ``h p_h / m``."""
    if d.m <= 0:
        raise ZeroMean("size-biased law needs a positive mean")
    return int(_draw(d.support, np.cumsum(d.size_biased), stream.uniform()))


def yule() -> OffspringDistribution:
    return validate({2: 1.0})
