"""Catalog of ready-made models.

Every entry has a table of default parameters; :func:`build` validates
overrides against it and returns a :class:`~gwspine.branching.BranchingModel`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .branching import BranchingModel
from .errors import InvalidParameters, UnknownModel
from .motion import (
    Additive,
    AgingKernel,
    AgingMotion,
    Levy,
    LinearDiffusion,
    make_kernel,
)
from .offspring import validate


class DriftConditionWarning(UserWarning):
    """The drift does not satisfy ``b(x)/x < r`` at infinity; the spine may not be ergodic."""


@dataclass(frozen=True)
class ModelSpec:
    name: str
    description: str
    defaults: Mapping
    builder: Callable[[dict], BranchingModel]
    state_space: str = "real"

    def build(self, overrides: Mapping | None = None) -> BranchingModel:
        params = dict(self.defaults)
        for k, v in (overrides or {}).items():
            if k not in params:
                raise InvalidParameters(
                    f"{self.name}: unknown parameter {k!r}; known: {sorted(params)}")
            params[k] = v
        model = self.builder(params)
        return model.with_changes(name=self.name, params=params)


def _splitted(p: dict, motion) -> BranchingModel:
    kernel_params = {k: p[k] for k in ("a", "b") if p.get("kernel") == "beta_fraction"}
    kernel = make_kernel(p["kernel"], **kernel_params)
    r = float(p["rate"])
    b1 = motion.b1 if isinstance(motion, LinearDiffusion) else 0.0
    if b1 >= r:
        warnings.warn(f"drift slope {b1} is not below r={r}", DriftConditionWarning, stacklevel=3)
    return BranchingModel(rate=r, offspring=validate(p["offspring"]), motion=motion,
                          kernel=kernel, initial=float(p["x0"]))


def _bm(p):
    return _splitted(p, LinearDiffusion(float(p["drift"]), 0.0, float(p["sigma"])))


def _ou(p):
    beta, alpha = float(p["beta"]), float(p["alpha"])
    return _splitted(p, LinearDiffusion(beta * alpha, -beta, float(p["sigma"])))


def _growth(p):
    return _splitted(p, LinearDiffusion(float(p["growth"]), 0.0, 0.0))


def _equal(p):
    return BranchingModel(rate=float(p["rate"]), offspring=validate(p["offspring"]),
                          motion=LinearDiffusion(float(p["drift"]), 0.0, float(p["sigma"])),
                          kernel=make_kernel("equal_split"), initial=float(p["x0"]))


def _aging(p):
    r = float(p["rate"])
    p0, p1, p01 = float(p["p0"]), float(p["p1"]), float(p["p01"])
    if min(p0, p1, p01) < 0 or p0 + p1 + p01 > 1 + 1e-12:
        raise InvalidParameters("need p0, p1, p01 >= 0 with p0 + p1 + p01 <= 1")
    single = p0 + p1
    if single >= 1:
        raise InvalidParameters("single-child events must have probability < 1")
    # single-child replacement becomes a motion jump at rate r (p0 + p1); the
    # remaining events branch at rate r (1 - p0 - p1) with law renormalised on {0, 2}
    rest = 1.0 - single
    law = {0: (1.0 - single - p01) / rest, 2: p01 / rest}
    share0 = p0 / single if single > 0 else 0.5
    motion = AgingMotion(type0=tuple(p["motion0"]), type1=tuple(p["motion1"]),
                         replace_rate=r * single, share0=share0,
                         a0=float(p["alpha0"]), c0=float(p["beta0"]),
                         a1=float(p["alpha1"]), c1=float(p["beta1"]),
                         sigma=float(p["sigma"]), rho=float(p["rho"]))
    kernel = AgingKernel(a0=float(p["alpha0_2"]), c0=float(p["beta0_2"]), s0=float(p["sigma0_2"]),
                         a1=float(p["alpha1_2"]), c1=float(p["beta1_2"]), s1=float(p["sigma1_2"]))
    return BranchingModel(rate=r * rest, offspring=validate(law), motion=motion, kernel=kernel,
                          initial=(float(p["x0"]), int(p["type0"])))


def _levy(p):
    deltas = p["deltas"]
    if not isinstance(deltas, Mapping):
        deltas = {len(deltas): tuple(deltas)}
    deltas = {int(k): tuple(float(v) for v in d) for k, d in deltas.items()}
    motion = Levy(float(p["drift"]), float(p["sigma"]), tuple(float(y) for y in p["jump_sizes"]),
                  tuple(float(w) for w in p["jump_intensity"]))
    return BranchingModel(rate=float(p["rate"]), offspring=validate(p["offspring"]), motion=motion,
                          kernel=Additive(deltas), initial=float(p["x0"]))


_SPLIT = {"rate": 1.0, "offspring": {2: 1.0}, "kernel": "uniform_fraction", "a": 2.0, "b": 2.0,
          "x0": 1.0}

CATALOG: dict[str, ModelSpec] = {
    "yule_splitted_bm": ModelSpec(
        "yule_splitted_bm", "Yule tree, Brownian motion, uniform random fractions at division",
        {**_SPLIT, "drift": 0.0, "sigma": 1.0}, _bm),
    "yule_splitted_ou": ModelSpec(
        "yule_splitted_ou", "Yule tree, OU motion b(x) = -beta (x - alpha), uniform fractions",
        {**_SPLIT, "beta": 1.0, "alpha": 0.0, "sigma": 1.0}, _ou),
    "yule_linear_growth": ModelSpec(
        "yule_linear_growth", "Yule tree, deterministic growth dX = g dt, uniform fractions",
        {**_SPLIT, "growth": 1.0}, _growth),
    "yule_equal_split": ModelSpec(
        "yule_equal_split", "Yule tree, children get x/k, no motion by default",
        {"rate": 1.0, "offspring": {2: 1.0}, "x0": 1.0, "drift": 0.0, "sigma": 0.0}, _equal),
    "cellular_aging": ModelSpec(
        "cellular_aging",
        "two-type cells (growth rate, pole age); affine daughter maps with Gaussian noise",
        {"rate": 1.0, "p0": 0.1, "p1": 0.1, "p01": 0.7,
         "alpha0": 0.5, "beta0": 1.0, "alpha1": 0.5, "beta1": 0.8, "sigma": 0.2, "rho": 0.3,
         "alpha0_2": 0.5, "beta0_2": 1.0, "sigma0_2": 0.2,
         "alpha1_2": 0.5, "beta1_2": 0.8, "sigma1_2": 0.2,
         "motion0": (0.0, 0.0, 0.0), "motion1": (0.0, 0.0, 0.0), "x0": 2.0, "type0": 0},
        _aging, state_space="real x type"),
    "branching_levy": ModelSpec(
        "branching_levy", "Brownian motion with compound Poisson jumps and additive displacements at birth",
        {"rate": 1.0, "offspring": {2: 1.0}, "drift": 0.0, "sigma": 1.0, "jump_sizes": (),
         "jump_intensity": (), "deltas": (0.5, -0.5), "x0": 0.0}, _levy),
}


def names() -> list[str]:
    return list(CATALOG)


def get(name: str) -> ModelSpec:
    try:
        return CATALOG[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; known: {names()}") from None


def build(name: str, overrides: Mapping | None = None) -> BranchingModel:
    return get(name).build(overrides)


def levy_clt_parameters(model: BranchingModel) -> tuple[float, float]:
    """Drift ``beta`` and variance ``Sigma`` of the Gaussian limit of the
    recentred, rescaled population of a branching Levy model."""
    motion = model.motion
    if isinstance(motion, Levy):
        b, s2, jumps_mean, jumps_var = motion.drift_b, motion.sigma**2, 0.0, 0.0
        y = np.asarray(motion.jump_sizes, dtype=float)
        w = np.asarray(motion.jump_intensity, dtype=float)
        jumps_mean = float(np.sum(y * w * (np.abs(y) >= 1)))
        jumps_var = float(np.sum(y * y * w))
    elif isinstance(motion, LinearDiffusion) and motion.b1 == 0:
        b, s2, jumps_mean, jumps_var = motion.b0, motion.sigma**2, 0.0, 0.0
    else:
        raise InvalidParameters("CLT parameters need a Levy or constant-coefficient Brownian motion")
    kernel = model.kernel
    if not isinstance(kernel, Additive):
        raise InvalidParameters("CLT parameters need an additive kernel")
    disp_mean = disp_sq = 0.0
    for k, pk in model.offspring.items:
        s1, s2k = kernel.moments(k)
        disp_mean += pk * s1
        disp_sq += pk * s2k
    beta = b + jumps_mean + model.rate * disp_mean
    sigma2 = s2 + jumps_var + model.rate * disp_sq
    return float(beta), float(sigma2)
