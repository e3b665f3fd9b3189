import numpy as np
import pytest

from gwspine import models
from gwspine.branching import BranchingModel
from gwspine.motion import EqualSplit, IdentityKernel, LinearDiffusion, UniformFraction
from gwspine.offspring import validate, yule


@pytest.fixture
def splitted_bm():
    return models.build("yule_splitted_bm")


@pytest.fixture
def splitted_ou():
    return models.build("yule_splitted_ou")


@pytest.fixture
def equal_split_still():
    """Yule tree, children at x/2, no motion, x0 = 1."""
    return models.build("yule_equal_split")


@pytest.fixture
def still_fraction():
    """Uniform fractions with no motion: total mass is conserved."""
    return BranchingModel(rate=1.0, offspring=yule(), motion=LinearDiffusion(0.0, 0.0, 0.0),
                          kernel=UniformFraction(), initial=3.0, name="still_fraction")


def make_model(offspring=None, motion=None, kernel=None, rate=1.0, initial=0.0, name="test"):
    return BranchingModel(rate=rate, offspring=validate(offspring or {2: 1.0}),
                          motion=motion or LinearDiffusion(0.0, 0.0, 1.0),
                          kernel=kernel or IdentityKernel(), initial=initial, name=name)


def binomial_z(count, n, p):
    return abs(count / n - p) / np.sqrt(p * (1 - p) / n)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
