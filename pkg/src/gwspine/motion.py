"""Motions along branches and branching kernels.

Convention: ``dX = b(X) dt + sigma(X) dB`` with generator
``L f = b f' + (sigma^2 / 2) f''``.

Motions with an affine drift and constant volatility (Brownian, OU,
deterministic linear growth, the finite-activity Levy motion and the two-type
aging motion) are sampled with exact Gaussian transitions and run in the
compiled core.  Arbitrary drift/volatility callables use Euler-Maruyama on
the pure-Python path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _pycore
from . import rng as R
from ._encoded import (
    JUMP_AGING,
    JUMP_ATOMS,
    JUMP_NONE,
    KER_ADDITIVE,
    KER_AGING,
    KER_BETA,
    KER_EQUAL,
    KER_IDENTITY,
    KER_UNIFORM,
    Encoded,
)
from .errors import InvalidParameters, KernelArityMismatch, NonFiniteState

DEFAULT_STEP = 2.0**-10


# --------------------------------------------------------------------------
# motions


class MotionModel:
    """Base class.  Subclasses fill the motion part of an :class:`Encoded`."""

    n_types = 1

    def encode_into(self, fields: dict) -> None:
        raise NotImplementedError

    def drift(self, x, ty=0):
        raise NotImplementedError

    def vol(self, x, ty=0):
        raise NotImplementedError

    def generator(self, f1, f2, x, ty=0):
        """``L f`` at x given ``f'`` and ``f''`` evaluated at x (jumps excluded)."""
        s = self.vol(x, ty)
        return self.drift(x, ty) * f1 + 0.5 * s * s * f2


@dataclass(frozen=True)
class LinearDiffusion(MotionModel):
    """``dX = (b0 + b1 X) dt + sigma dB``; exact transitions."""

    b0: float = 0.0
    b1: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("b0", "b1", "sigma"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameters(f"{name} must be finite")

    def encode_into(self, fields):
        fields["lin"] = np.array([[self.b0, self.b1, self.sigma]] * 2, dtype=float)

    def drift(self, x, ty=0):
        return self.b0 + self.b1 * np.asarray(x, dtype=float)

    def vol(self, x, ty=0):
        return np.full_like(np.asarray(x, dtype=float), self.sigma)

    def mean(self, x, dt):
        if self.b1 == 0:
            return x + self.b0 * dt
        return x * math.exp(self.b1 * dt) + self.b0 * math.expm1(self.b1 * dt) / self.b1

    def variance(self, dt):
        if self.b1 == 0:
            return self.sigma**2 * dt
        return self.sigma**2 * math.expm1(2 * self.b1 * dt) / (2 * self.b1)


def brownian(drift: float = 0.0, sigma: float = 1.0) -> LinearDiffusion:
    return LinearDiffusion(drift, 0.0, sigma)


def ornstein_uhlenbeck(beta: float = 1.0, alpha: float = 0.0, sigma: float = 1.0) -> LinearDiffusion:
    """``b(x) = -beta (x - alpha)``."""
    return LinearDiffusion(beta * alpha, -beta, sigma)


def deterministic(drift: float | Callable = 1.0, step: float = DEFAULT_STEP) -> MotionModel:
    """Deterministic flow ``dX = b dt``; exact for a constant drift."""
    if callable(drift):
        return Diffusion(drift, lambda x: 0.0, step)
    return LinearDiffusion(float(drift), 0.0, 0.0)


@dataclass(frozen=True)
class Diffusion(MotionModel):
    """General diffusion from scalar callables, Euler-Maruyama with step ``h``.

    Runs on the pure-Python kernels only.
    """

    drift_fn: Callable[[float], float]
    vol_fn: Callable[[float], float]
    h: float = DEFAULT_STEP

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidParameters("Euler step must be positive")

    def encode_into(self, fields):
        fields["lin"] = np.zeros((2, 3))
        drift, vol, h = self.drift_fn, self.vol_fn, self.h

        def segment(key, x, ty, t0, t1, cut, obs, lo, hi):
            return _pycore.euler_segment(drift, vol, h, key, x, ty, t0, t1, cut, obs, lo, hi)

        fields["motion_fn"] = segment

    def drift(self, x, ty=0):
        return np.vectorize(self.drift_fn, otypes=[float])(x)

    def vol(self, x, ty=0):
        return np.vectorize(self.vol_fn, otypes=[float])(x)


@dataclass(frozen=True)
class Levy(MotionModel):
    """Finite-activity Levy motion: Brownian part plus compound Poisson jumps.

    ``jump_sizes``/``jump_intensity`` describe the Levy measure ``h`` as
    atoms ``h = sum_i intensity_i delta_{y_i}``.  ``drift`` is the drift of
    the generator ``b f' + sigma^2/2 f'' + int (f(x+y) - f(x) - y f'(x) 1_{|y|<1}) h(dy)``,
    so the mean displacement per unit time is ``drift + int y 1_{|y|>=1} h(dy)``.
    """

    drift_b: float = 0.0
    sigma: float = 1.0
    jump_sizes: tuple = ()
    jump_intensity: tuple = ()

    def __post_init__(self):
        if len(self.jump_sizes) != len(self.jump_intensity):
            raise InvalidParameters("jump sizes and intensities differ in length")
        if any(w < 0 for w in self.jump_intensity):
            raise InvalidParameters("jump intensities must be nonnegative")

    @property
    def total_intensity(self) -> float:
        return float(sum(self.jump_intensity))

    @property
    def compensated_drift(self) -> float:
        """Drift of the simulated SDE once the small jumps are compensated."""
        y = np.asarray(self.jump_sizes, dtype=float)
        w = np.asarray(self.jump_intensity, dtype=float)
        return float(self.drift_b - np.sum(y * w * (np.abs(y) < 1)))

    @property
    def mean_rate(self) -> float:
        y = np.asarray(self.jump_sizes, dtype=float)
        w = np.asarray(self.jump_intensity, dtype=float)
        return float(self.drift_b + np.sum(y * w * (np.abs(y) >= 1)))

    @property
    def variance_rate(self) -> float:
        y = np.asarray(self.jump_sizes, dtype=float)
        w = np.asarray(self.jump_intensity, dtype=float)
        return float(self.sigma**2 + np.sum(y * y * w))

    def encode_into(self, fields):
        fields["lin"] = np.array([[self.compensated_drift, 0.0, self.sigma]] * 2)
        lam = self.total_intensity
        if lam > 0:
            fields["jump_kind"] = JUMP_ATOMS
            fields["jump_rate"] = lam
            fields["atoms_val"] = np.asarray(self.jump_sizes, dtype=float)
            fields["atoms_cum"] = np.cumsum(self.jump_intensity) / lam

    def drift(self, x, ty=0):
        return np.full_like(np.asarray(x, dtype=float), self.compensated_drift)

    def vol(self, x, ty=0):
        return np.full_like(np.asarray(x, dtype=float), self.sigma)


@dataclass(frozen=True)
class AgingMotion(MotionModel):
    """Two-type motion ``(zeta, eta)`` for the cellular-aging model.

    Between events ``zeta`` follows the affine diffusion of its type (given
    as ``(b0, b1, sigma)`` per type) and ``eta`` is constant.  At rate
    ``replace_rate`` the cell is replaced by a single daughter, which is of
    type 0 with probability ``share0`` and then starts at
    ``a0 zeta + c0 + eps0``, else of type 1 at ``a1 zeta + c1 + eps1``.
    ``(eps0, eps1)`` is a centred Gaussian pair with standard deviation
    ``sigma`` and correlation ``rho``.
    """

    type0: tuple = (0.0, 0.0, 0.0)
    type1: tuple = (0.0, 0.0, 0.0)
    replace_rate: float = 0.0
    share0: float = 0.5
    a0: float = 0.5
    c0: float = 0.0
    a1: float = 0.5
    c1: float = 0.0
    sigma: float = 1.0
    rho: float = 0.0

    n_types = 2

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise InvalidParameters("rho must lie in (-1, 1)")
        if not 0 <= self.share0 <= 1:
            raise InvalidParameters("share0 must lie in [0, 1]")
        if self.replace_rate < 0:
            raise InvalidParameters("replacement rate must be nonnegative")

    def encode_into(self, fields):
        fields["lin"] = np.array([self.type0, self.type1], dtype=float)
        if self.replace_rate > 0:
            fields["jump_kind"] = JUMP_AGING
            fields["jump_rate"] = float(self.replace_rate)
            fields["aging_jump"] = np.array(
                [self.share0, self.a0, self.c0, self.a1, self.c1, self.sigma, self.rho], dtype=float)

    def _par(self, ty):
        ty = np.asarray(ty)
        lin = np.array([self.type0, self.type1], dtype=float)
        return lin[ty]

    def drift(self, x, ty=0):
        p = self._par(ty)
        return p[..., 0] + p[..., 1] * np.asarray(x, dtype=float)

    def vol(self, x, ty=0):
        return self._par(ty)[..., 2] + 0.0 * np.asarray(x, dtype=float)


# --------------------------------------------------------------------------
# kernels


class BranchingKernel:
    """Offspring positions ``F_j^(k)(x, theta)``."""

    two_type = False

    def supports(self, k: int) -> bool:
        return True

    def encode_into(self, fields: dict) -> None:
        raise NotImplementedError

    def __call__(self, x, k: int, theta: float, ty: int = 0) -> list:
        """Children states for a mother at x; pure function of its arguments."""
        if not self.supports(k):
            raise KernelArityMismatch(f"{type(self).__name__} cannot produce {k} children")
        try:
            kids = _pycore.kernel_children(self._encoded(), float(x), int(ty), int(k), float(theta))
        except _pycore.CoreError as exc:
            raise KernelArityMismatch(f"{type(self).__name__} cannot produce {k} children") from exc
        if len(kids) != k:
            raise KernelArityMismatch(f"kernel returned {len(kids)} states for k={k}")
        if self.two_type:
            return [(float(a), int(b)) for a, b in kids]
        return [float(a) for a, _ in kids]

    def _encoded(self) -> Encoded:
        cache = self.__dict__.get("_enc_cache")
        if cache is None:
            fields = _blank_fields()
            self.encode_into(fields)
            cache = Encoded(**fields)
            object.__setattr__(self, "_enc_cache", cache)
        return cache


def _blank_fields() -> dict:
    one = np.ones(1)
    return dict(rate=1.0, m=1.0, off_k=np.array([0]), off_cum=one.copy(),
                sb_k=np.array([0]), sb_cum=one.copy(), lin=np.zeros((2, 3)))


@dataclass(frozen=True)
class IdentityKernel(BranchingKernel):
    """Local births: every child starts at the mother's position."""

    def encode_into(self, fields):
        fields["ker_kind"] = KER_IDENTITY


@dataclass(frozen=True)
class EqualSplit(BranchingKernel):
    """``F_j^(k)(x) = x / k``."""

    def encode_into(self, fields):
        fields["ker_kind"] = KER_EQUAL


@dataclass(frozen=True)
class UniformFraction(BranchingKernel):
    """Binary split ``(q x, (1 - q) x)`` with ``q = theta`` uniform."""

    def supports(self, k):
        return k in (0, 2)

    def encode_into(self, fields):
        fields["ker_kind"] = KER_UNIFORM

    def fraction_mean_sq(self) -> float:
        return 1.0 / 3.0


@dataclass(frozen=True)
class BetaFraction(BranchingKernel):
    """Binary split with ``q ~ Beta(a, b)`` obtained by inverting its CDF at theta."""

    a: float = 2.0
    b: float = 2.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise InvalidParameters("beta parameters must be positive")

    def supports(self, k):
        return k in (0, 2)

    def encode_into(self, fields):
        fields["ker_kind"] = KER_BETA
        fields["ker_p"] = np.array([self.a, self.b, 0, 0, 0, 0], dtype=float)


@dataclass(frozen=True)
class Additive(BranchingKernel):
    """``F_j^(k)(x) = x + delta_j^k`` with fixed displacements per arity."""

    deltas: Mapping[int, Sequence[float]] = field(default_factory=lambda: {2: (0.5, -0.5)})

    def __post_init__(self):
        for k, d in self.deltas.items():
            if len(d) != int(k):
                raise InvalidParameters(f"additive kernel: {len(d)} displacements given for k={k}")

    def supports(self, k):
        return k == 0 or int(k) in {int(j) for j in self.deltas}

    def encode_into(self, fields):
        kmax = max(int(k) for k in self.deltas) if self.deltas else 0
        table = {int(k): [float(v) for v in d] for k, d in self.deltas.items()}
        off = np.zeros(kmax + 2, dtype=np.int64)
        vals: list[float] = []
        for k in range(kmax + 1):
            off[k] = len(vals)
            vals.extend(table.get(k, []))
        off[kmax + 1] = len(vals)
        fields["ker_kind"] = KER_ADDITIVE
        fields["add_off"] = off
        fields["add_val"] = np.array(vals if vals else [0.0])

    def moments(self, k: int) -> tuple[float, float]:
        """``sum_j delta_j`` and ``sum_j delta_j^2`` for arity k."""
        d = np.asarray(self.deltas.get(k, ()), dtype=float)
        return float(d.sum()), float((d * d).sum())


@dataclass(frozen=True)
class AgingKernel(BranchingKernel):
    """Two daughters: type 0 at ``a0 x + c0 + s0 Z0`` and type 1 at ``a1 x + c1 + s1 Z1``.

    The Gaussians come from a substream keyed by theta.
    """

    a0: float = 0.5
    c0: float = 1.0
    s0: float = 0.3
    a1: float = 0.5
    c1: float = 0.8
    s1: float = 0.3

    two_type = True

    def supports(self, k):
        return k in (0, 2)

    def encode_into(self, fields):
        fields["ker_kind"] = KER_AGING
        fields["ker_p"] = np.array([self.a0, self.c0, self.s0, self.a1, self.c1, self.s1], dtype=float)


@dataclass(frozen=True)
class CustomKernel(BranchingKernel):
    """Kernel from a Python callable ``fn(x, k, theta) -> k states``.

    Models using it run on the pure-Python kernels.
    """

    fn: Callable[[float, int, float], Sequence[float]] = None

    def encode_into(self, fields):
        fn = self.fn

        def kernel(x, ty, k, theta):
            out = list(fn(x, k, theta))
            if len(out) != k:
                raise KernelArityMismatch(f"custom kernel returned {len(out)} states for k={k}")
            return [(float(v), ty) for v in out]

        fields["ker_kind"] = KER_IDENTITY
        fields["kernel_fn"] = kernel

    def __call__(self, x, k, theta, ty=0):
        out = list(self.fn(x, k, theta))
        if len(out) != k:
            raise KernelArityMismatch(f"custom kernel returned {len(out)} states for k={k}")
        return out


KERNELS = {
    "identity": IdentityKernel,
    "equal_split": EqualSplit,
    "uniform_fraction": UniformFraction,
    "beta_fraction": BetaFraction,
    "additive": Additive,
    "aging": AgingKernel,
}


def make_kernel(name: str, **params) -> BranchingKernel:
    try:
        cls = KERNELS[name]
    except KeyError:
        raise InvalidParameters(f"unknown kernel {name!r}; known: {sorted(KERNELS)}") from None
    if name == "additive" and "deltas" in params:
        d = params["deltas"]
        if not isinstance(d, Mapping):
            d = {len(d): tuple(d)}
        params = {"deltas": {int(k): tuple(v) for k, v in d.items()}}
    return cls(**params)


# --------------------------------------------------------------------------
# single-particle operations


def motion_encoded(model: MotionModel) -> Encoded:
    fields = _blank_fields()
    model.encode_into(fields)
    return Encoded(**fields)


def _run_segment(enc, key, x, ty, dt, obs):
    obs = list(obs)
    try:
        if enc.motion_fn is not None:
            return enc.motion_fn(key, x, ty, 0.0, dt, True, obs, 0, len(obs))
        return _pycore.linear_segment(enc, key, x, ty, 0.0, dt, True, obs, 0, len(obs))
    except _pycore.CoreError as exc:
        raise NonFiniteState("motion produced a non-finite state") from exc


def evolve(model: MotionModel, x: float, dt: float, stream: R.Stream, ty: int = 0):
    """One draw of the motion at time ``dt`` started from x.

    Returns the state, or ``(state, type)`` for two-type motions.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    key = stream.spawn_key(stream.counter)
    stream.counter += 1
    xe, te, _ = _run_segment(motion_encoded(model), key, float(x), int(ty), float(dt), [])
    return (xe, te) if model.n_types == 2 else xe


def evolve_many(model: MotionModel, x0, dt: float, n: int, stream: R.Stream) -> np.ndarray:
    """``n`` independent draws at time ``dt``; uses the active backend."""
    from . import _backend

    enc = motion_encoded(model)
    enc.rate = 0.0
    keys = stream.spawn_keys(n, start=stream.counter)
    stream.counter += n
    core = _backend.kernels(enc)
    try:
        out = core.simulate_spines(enc, keys, np.full(n, float(x0)), np.zeros(n, dtype=np.int32),
                                   np.full(n, float(dt)), [], False, False)
    except _backend.CoreErrors as exc:
        raise NonFiniteState("motion produced a non-finite state") from exc
    return out["x"]


def evolve_path(model: MotionModel, x: float, dt: float, grid: float, stream: R.Stream,
                ty: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Path sampled at ``0, grid, 2 grid, ..., dt`` (the end point always included).

    The end point has the same law as :func:`evolve`.
    """
    if not grid > 0:
        raise ValueError("grid must be positive")
    n = int(math.floor(dt / grid + 1e-9))
    times = [i * grid for i in range(1, n + 1) if i * grid < dt]
    times = np.array([0.0] + times + [float(dt)]) if dt > 0 else np.array([0.0])
    key = stream.spawn_key(stream.counter)
    stream.counter += 1
    _, _, recs = _run_segment(motion_encoded(model), key, float(x), int(ty), float(dt), times[1:])
    states = np.empty(times.size)
    states[0] = x
    for oi, xo, _ in recs:
        states[oi + 1] = xo
    return times, states


def branch(kernel: BranchingKernel, x, k: int, stream: R.Stream, ty: int = 0) -> list:
    """Draw theta from the stream and return the k children of a mother at x."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return []
    theta = stream.uniform()
    return kernel(x, k, theta, ty)
