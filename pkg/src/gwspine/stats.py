"""Monte Carlo summaries and the small set of tests the checks rely on."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as _st


@dataclass(frozen=True)
class McEstimate:
    """A Monte Carlo mean with its standard error over ``n`` replicas."""

    mean: float
    se: float
    n: int

    def __post_init__(self):
        if self.se < 0 or math.isnan(self.se):
            raise ValueError(f"standard error must be >= 0, got {self.se}")

    @classmethod
    def from_samples(cls, x) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        mean = float(pairwise_mean(x))
        se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(mean, se, n)

    @classmethod
    def exact(cls, value: float, n: int = 0) -> "McEstimate":
        return cls(float(value), 0.0, n)

    def scaled(self, c: float) -> "McEstimate":
        return McEstimate(self.mean * c, self.se * abs(c), self.n)

    def to_dict(self) -> dict:
        return asdict(self)

    def __str__(self):
        return f"{self.mean:.6g} ± {self.se:.2g} (n={self.n})"


def pairwise_mean(x: np.ndarray) -> float:
    # numpy's sum is pairwise, so the result does not depend on how the
    # replicas were chunked across workers
    return float(np.sum(x) / x.size)


def ratio_estimate(num, den) -> McEstimate:
    """``sum(num) / sum(den)`` with a delta-method standard error.

    Used for pooled per-particle statistics where the replicas, not the
    particles, are the independent units.
    """
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = num.size
    tot = den.sum()
    if tot == 0:
        raise ZeroDivisionError("empty denominator")
    ratio = num.sum() / tot
    if n < 2:
        return McEstimate(float(ratio), 0.0, n)
    resid = num - ratio * den
    se = math.sqrt(np.sum(resid**2) / (n * (n - 1))) / (tot / n)
    return McEstimate(float(ratio), float(se), n)


def two_sample_z(lhs: McEstimate, rhs: McEstimate, z_max: float = 4.0) -> tuple[float, bool]:
    """``|mean difference| / combined SE``; infinite when both SEs vanish
    and the means differ."""
    diff = abs(lhs.mean - rhs.mean)
    # differences at rounding level count as agreement (deterministic sides)
    if diff <= 1e-12 * max(1.0, abs(lhs.mean), abs(rhs.mean)):
        diff = 0.0
    se = math.sqrt(lhs.se**2 + rhs.se**2)
    if se == 0:
        z = 0.0 if diff == 0 else math.inf
    else:
        z = diff / se
    return z, bool(z <= z_max)


def batch_means(x, batches: int = 32) -> McEstimate:
    """Mean of a correlated series with a batch-means standard error."""
    x = np.asarray(x, dtype=float)
    size = x.size // batches
    if size < 1:
        raise ValueError("series shorter than the number of batches")
    bm = x[: size * batches].reshape(batches, size).mean(axis=1)
    return McEstimate(float(bm.mean()), float(bm.std(ddof=1) / math.sqrt(batches)), batches)


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    return float(_st.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


def ks_vs_cdf(a, cdf) -> float:
    return float(_st.kstest(np.asarray(a), cdf).statistic)


def chi_square_counts(observed, expected_prob, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Chi-square goodness of fit; the tail bins are pooled until every
    expected count reaches ``min_expected``.  Returns ``(stat, p, dof)``."""
    observed = np.asarray(observed, dtype=float)
    probs = np.asarray(expected_prob, dtype=float)
    n = observed.sum()
    exp = probs * n
    # the last bin takes the remaining probability mass
    exp[-1] += n - exp.sum()
    obs_b, exp_b = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_b.append(o_acc)
            exp_b.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_b:
            obs_b[-1] += o_acc
            exp_b[-1] += e_acc
        else:
            obs_b.append(o_acc)
            exp_b.append(e_acc)
    obs_b = np.array(obs_b)
    exp_b = np.array(exp_b)
    stat = float(np.sum((obs_b - exp_b) ** 2 / exp_b))
    dof = len(obs_b) - 1
    p = float(_st.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return stat, p, dof


def index_of_dispersion(counts) -> McEstimate:
    """Variance/mean ratio of counts with a bootstrap-free normal-theory SE
    (``sqrt(2/(n-1))`` under the Poisson null)."""
    c = np.asarray(counts, dtype=float)
    d = float(c.var(ddof=1) / c.mean())
    return McEstimate(d, math.sqrt(2.0 / (c.size - 1)), c.size)


def quantile_pairs(sample, ppf, n: int = 99) -> tuple[np.ndarray, np.ndarray]:
    """Theoretical and empirical quantiles at levels 1/(n+1), ..., n/(n+1)."""
    q = np.arange(1, n + 1) / (n + 1)
    return ppf(q), np.quantile(np.asarray(sample), q)
