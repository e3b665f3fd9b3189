import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwspine import motion as M
from gwspine.errors import InvalidParameters, KernelArityMismatch, NonFiniteState
from gwspine.rng import Stream

from conftest import make_model


def _z(x, target):
    return abs(x.mean() - target) / (x.std(ddof=1) / math.sqrt(x.size))


def test_deterministic_growth():
    assert M.evolve(M.deterministic(1.0), 0.0, 2.0, Stream.from_seed(0)) == 2.0


def test_brownian_moments():
    x = M.evolve_many(M.brownian(0.0, 1.0), 0.0, 0.7, 10**5, Stream.from_seed(1))
    assert _z(x, 0.0) < 4
    assert abs(x.var() - 0.7) < 4 * 0.7 * math.sqrt(2 / x.size)


def test_ou_exact_against_fine_euler():
    beta, alpha, x0, dt = 1.5, 0.5, 2.0, 0.8
    exact = M.ornstein_uhlenbeck(beta, alpha, 1.0)
    euler = M.Diffusion(lambda x: -beta * (x - alpha), lambda x: 1.0, 2.0**-8)
    a = M.evolve_many(exact, x0, dt, 10**4, Stream.from_seed(2))
    s = Stream.from_seed(3)
    b = np.array([M.evolve(euler, x0, dt, s) for _ in range(2000)])
    se = math.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) < 3 * se
    assert exact.mean(x0, dt) == pytest.approx(alpha + (x0 - alpha) * math.exp(-beta * dt))
    assert abs(a.mean() - exact.mean(x0, dt)) < 4 * a.std() / 100
    assert a.var() == pytest.approx(exact.variance(dt), rel=0.05)


def test_euler_step_halving():
    drift = lambda x: np.sin(x)  # noqa: E731
    vol = lambda x: 1.0 + 0.0 * x  # noqa: E731
    out = []
    for h, seed in ((2.0**-5, 4), (2.0**-6, 5)):
        s = Stream.from_seed(seed)
        out.append(np.array([M.evolve(M.Diffusion(drift, vol, h), 0.3, 1.0, s) for _ in range(4000)]))
    se = math.sqrt(out[0].var() / 4e3 + out[1].var() / 4e3)
    assert abs(out[0].mean() - out[1].mean()) < 3 * se


def test_non_finite_state():
    bad = M.Diffusion(lambda x: x * x * 1e300, lambda x: 1.0, 0.1)
    with pytest.raises(NonFiniteState):
        M.evolve(bad, 10.0, 1.0, Stream.from_seed(0))


def test_paths():
    t, x = M.evolve_path(M.deterministic(1.0), 0.5, 1.0, 0.25, Stream.from_seed(0))
    assert t.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert x.tolist() == [0.5, 0.75, 1.0, 1.25, 1.5]
    t, _ = M.evolve_path(M.brownian(), 0.0, 0.3, 1.0, Stream.from_seed(0))
    assert t.tolist() == [0.0, 0.3]


def test_brownian_quadratic_variation():
    _, x = M.evolve_path(M.brownian(0.0, 1.3), 0.0, 1.0, 2.0**-10, Stream.from_seed(6))
    assert np.sum(np.diff(x) ** 2) == pytest.approx(1.69, rel=0.1)


def test_path_end_has_evolve_law():
    s = Stream.from_seed(7)
    ends = np.array([M.evolve_path(M.brownian(0.2, 1.0), 0.0, 1.0, 0.1, s)[1][-1] for _ in range(4000)])
    assert _z(ends, 0.2) < 4


def test_levy_mean_and_variance():
    lv = M.Levy(0.3, 0.5, (1.5, -0.4), (0.6, 1.2))
    t = 2.0
    model = make_model(motion=lv)
    x = M.evolve_many(model.motion, 0.0, t, 10**5, Stream.from_seed(8))
    # finite activity: mean = (drift + int y 1_{|y|>=1} h) t
    assert lv.mean_rate == pytest.approx(0.3 + 1.5 * 0.6)
    assert _z(x, lv.mean_rate * t) < 4
    assert x.var() == pytest.approx(lv.variance_rate * t, rel=0.03)


def test_kernels():
    assert M.EqualSplit()(6.0, 3, 0.1) == [2.0, 2.0, 2.0]
    q = 0.3
    kids = M.UniformFraction()(1.0, 2, q)
    assert kids == [q, 1 - q] and sum(kids) == 1.0
    assert M.make_kernel("additive", deltas=(0.5, -0.5))(0.0, 2, 0.9) == [0.5, -0.5]
    assert M.IdentityKernel()(1.5, 3, 0.2) == [1.5, 1.5, 1.5]


@given(st.floats(1e-6, 1 - 1e-6), st.floats(-50, 50))
def test_fraction_kernels_conserve(theta, x):
    for ker in (M.UniformFraction(), M.BetaFraction(2.0, 5.0)):
        a, b = ker(x, 2, theta)
        assert a + b == pytest.approx(x, abs=1e-12 * max(1.0, abs(x)))


def test_beta_fraction_is_beta_quantile():
    from scipy.stats import beta

    a, _ = M.BetaFraction(2.0, 3.0)(1.0, 2, 0.4)
    assert a == pytest.approx(beta(2.0, 3.0).ppf(0.4))


def test_kernel_is_pure():
    k = M.AgingKernel(0.5, 1.0, 0.2, 0.5, 0.8, 0.2)
    assert k(2.0, 2, 0.37, 0) == k(2.0, 2, 0.37, 0)
    types = sorted(t for _, t in k(2.0, 2, 0.37, 0))
    assert types == [0, 1]


def test_branch_draws_theta():
    s = Stream.from_seed(0)
    assert M.branch(M.UniformFraction(), 2.0, 0, s) == []
    a = M.branch(M.UniformFraction(), 2.0, 2, s.copy())
    b = M.branch(M.UniformFraction(), 2.0, 2, s.copy())
    assert a == b


def test_arity():
    with pytest.raises(KernelArityMismatch):
        make_model(offspring={0: 0.5, 3: 0.5}, kernel=M.UniformFraction())
    with pytest.raises(KernelArityMismatch):
        make_model(kernel=M.Additive({3: (0.1, 0.2, 0.3)}))


def test_make_kernel():
    assert isinstance(M.make_kernel("beta_fraction", a=2, b=2), M.BetaFraction)
    with pytest.raises(InvalidParameters):
        M.make_kernel("teleport")


def test_additive_moments():
    k = M.Additive({2: (0.5, -0.5)})
    assert k.moments(2) == pytest.approx((0.0, 0.5))
