"""Experiment configuration files (YAML).

Example::

    seed: 7
    jobs: 4
    out_dir: results
    suite: paper-core          # optional; the checks below are then overrides
    checks:
      - name: levy_clt
        params: {n_reps: 500}
      - name: my_fixed_time    # not in the suite: needs a kind
        kind: many_to_one_fixed
        params:
          model: {name: yule_splitted_ou, overrides: {sigma: 0.5}}
          f: x2
          t: 1.0
    simulate:
      model: {name: yule_splitted_bm}
      horizon: 3.0
      n_reps: 4
      snapshot_times: [1.0, 2.0, 3.0]

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import inspect
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import models, verify
from .errors import ConfigError, GWSpineError

# named test functions usable from config files
FUNCTIONS: dict[str, Callable] = {
    "one": lambda x: np.ones_like(x),
    "x": lambda x: x,
    "x2": lambda x: x * x,
    "exp_neg_x": lambda x: np.exp(-x),
    "exp_neg_x2": lambda x: np.exp(-x * x),
}
TREE_FUNCTIONS: dict[str, Callable] = {
    "exp_neg_s_x2": lambda s, x: np.exp(-s) * x * x,
    "x2": lambda s, x: x * x,
}

CHECK_KINDS: dict[str, Callable] = {
    "tree_moments": verify.check_tree_moments,
    "w_law": verify.check_w_law,
    "many_to_one_fixed": verify.check_many_to_one_fixed,
    "many_to_one_tree": verify.check_many_to_one_tree,
    "fork_second_moment": verify.check_fork_second_moment,
    "lln_alive": verify.check_lln_alive,
    "lln_dead": verify.check_lln_dead,
    "levy_clt": verify.check_levy_clt,
    "fluctuation_bracket": verify.check_fluctuation_bracket,
}

_TOP = {"seed", "jobs", "out_dir", "suite", "checks", "simulate"}
_CHECK = {"name", "kind", "params"}
_SIM = {"model", "horizon", "n_reps", "snapshot_times", "max_nodes", "stationary_run", "tree_dump"}
_MODEL = {"name", "overrides"}


@dataclass
class ModelRef:
    name: str
    overrides: dict = field(default_factory=dict)

    def build(self):
        return models.build(self.name, self.overrides)


@dataclass
class CheckEntry:
    name: str
    kind: str | None = None
    params: dict = field(default_factory=dict)


@dataclass
class SimulateSection:
    model: ModelRef
    horizon: float = 2.0
    n_reps: int = 1
    snapshot_times: list = field(default_factory=list)
    max_nodes: int = 10**6
    stationary_run: float | None = None
    tree_dump: bool = True


@dataclass
class ExperimentConfig:
    seed: int = 0
    jobs: int | None = None
    out_dir: str = "gwspine-out"
    suite: str | None = None
    checks: list = field(default_factory=list)
    simulate: SimulateSection | None = None

    # -- (de)serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return _prune(asdict(self))

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, raw: Any) -> "ExperimentConfig":
        if raw is None:
            raw = {}
        _keys(raw, _TOP, "config")
        seed = _int(raw.get("seed", 0), "seed")
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        jobs = raw.get("jobs")
        if jobs is not None:
            jobs = _int(jobs, "jobs")
            if jobs < 1:
                raise ConfigError("jobs must be >= 1")
        suite = raw.get("suite")
        if suite is not None and suite not in verify.SUITES:
            raise ConfigError(f"unknown suite {suite!r}; known: {sorted(verify.SUITES)}")
        checks = [_check(c) for c in raw.get("checks") or []]
        sim = raw.get("simulate")
        return cls(seed=seed, jobs=jobs, out_dir=str(raw.get("out_dir", "gwspine-out")), suite=suite,
                   checks=checks, simulate=_simulate(sim) if sim is not None else None)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"not valid YAML: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.loads(text)

    # -- check construction ----------------------------------------------------

    def build_checks(self, jobs: int | None = None) -> dict[str, Callable[[], verify.CheckReport]]:
        """Checks in declared order: the suite (with per-check overrides)
        followed by standalone checks."""
        suite_checks: dict = {}
        overrides: dict = {}
        standalone = []
        if self.suite is not None:
            known = set(verify.SUITES[self.suite](self.seed, jobs))
        else:
            known = set()
        for c in self.checks:
            if c.kind is None:
                if c.name not in known:
                    raise ConfigError(f"check {c.name!r} is not in the suite and has no kind")
                overrides[c.name] = _resolve(c.params, verify.core_suite_kinds()[c.name])
            else:
                standalone.append(c)
        if self.suite is not None:
            try:
                suite_checks = verify.SUITES[self.suite](self.seed, jobs, overrides)
            except GWSpineError as exc:
                raise ConfigError(str(exc)) from None
        out = dict(suite_checks)
        for c in standalone:
            if c.name in out:
                raise ConfigError(f"duplicate check name {c.name!r}")
            fn = CHECK_KINDS[c.kind]
            params = _resolve(c.params, fn)
            out[c.name] = verify._bind(fn, c.name, params, self.seed, jobs)
        return out


def _prune(d):
    if isinstance(d, dict):
        return {k: _prune(v) for k, v in d.items() if v is not None}
    if isinstance(d, list):
        return [_prune(v) for v in d]
    return d


def _keys(raw, allowed, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    bad = set(raw) - allowed
    if bad:
        raise ConfigError(f"{where}: unknown keys {sorted(bad)}; allowed: {sorted(allowed)}")


def _int(v, what):
    if isinstance(v, bool):
        raise ConfigError(f"{what} must be an integer")
    if isinstance(v, int):
        # floats lose precision above 2**53; 64-bit seeds must survive intact
        return v
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be an integer") from None
    if f != int(f):
        raise ConfigError(f"{what} must be an integer")
    return int(f)


def _model(raw) -> ModelRef:
    if isinstance(raw, str):
        raw = {"name": raw}
    _keys(raw, _MODEL, "model")
    if "name" not in raw:
        raise ConfigError("model: missing name")
    if raw["name"] not in models.CATALOG:
        raise ConfigError(f"unknown model {raw['name']!r}; known: {models.names()}")
    return ModelRef(raw["name"], dict(raw.get("overrides") or {}))


def _check(raw) -> CheckEntry:
    _keys(raw, _CHECK, "check")
    if "name" not in raw:
        raise ConfigError("check: missing name")
    kind = raw.get("kind")
    if kind is not None and kind not in CHECK_KINDS:
        raise ConfigError(f"unknown check kind {kind!r}; known: {sorted(CHECK_KINDS)}")
    params = dict(raw.get("params") or {})
    if kind is not None:
        _resolve(params, CHECK_KINDS[kind])
    return CheckEntry(str(raw["name"]), kind, params)


def _simulate(raw) -> SimulateSection:
    _keys(raw, _SIM, "simulate")
    if "model" not in raw:
        raise ConfigError("simulate: missing model")
    sec = SimulateSection(_model(raw["model"]))
    if "horizon" in raw:
        sec.horizon = float(raw["horizon"])
    if "n_reps" in raw:
        sec.n_reps = _int(raw["n_reps"], "n_reps")
    if "snapshot_times" in raw:
        sec.snapshot_times = [float(s) for s in raw["snapshot_times"]]
    if "max_nodes" in raw:
        sec.max_nodes = _int(raw["max_nodes"], "max_nodes")
    if raw.get("stationary_run") is not None:
        sec.stationary_run = float(raw["stationary_run"])
    if "tree_dump" in raw:
        sec.tree_dump = bool(raw["tree_dump"])
    return sec


_RESERVED = {"seed", "jobs", "name"}


def _resolve(params: dict, fn: Callable) -> dict:
    """Validate check parameters against ``fn`` and turn model references
    and function names into objects."""
    sig = inspect.signature(fn).parameters
    out = {}
    for k, v in params.items():
        if k not in sig or k in _RESERVED:
            raise ConfigError(f"{fn.__name__}: unknown parameter {k!r}")
        if k == "model":
            try:
                v = _model(v).build()
            except GWSpineError as exc:
                raise ConfigError(str(exc)) from None
        elif k in ("f", "g", "df", "d2f", "analytic_cdf") and isinstance(v, str):
            table = TREE_FUNCTIONS if fn is verify.check_many_to_one_tree else FUNCTIONS
            if v not in table:
                raise ConfigError(f"unknown function {v!r}; known: {sorted(table)}")
            v = table[v]
        elif isinstance(v, list):
            v = tuple(v)
        out[k] = v
    return out
