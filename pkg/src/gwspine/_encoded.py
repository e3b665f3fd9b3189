"""Flat numeric encoding of a branching model, shared by both backends."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

JUMP_NONE = 0
JUMP_ATOMS = 1
JUMP_AGING = 2

KER_IDENTITY = 0
KER_EQUAL = 1
KER_UNIFORM = 2
KER_BETA = 3
KER_ADDITIVE = 4
KER_AGING = 5


@dataclass
class Encoded:
    rate: float
    m: float
    off_k: np.ndarray
    off_cum: np.ndarray
    sb_k: np.ndarray
    sb_cum: np.ndarray
    lin: np.ndarray  # (2, 3): b0, b1, sigma per type; dX = (b0 + b1 X) dt + sigma dB
    jump_kind: int = JUMP_NONE
    jump_rate: float = 0.0
    atoms_val: np.ndarray = field(default_factory=lambda: np.zeros(1))
    atoms_cum: np.ndarray = field(default_factory=lambda: np.ones(1))
    aging_jump: np.ndarray = field(default_factory=lambda: np.zeros(7))
    ker_kind: int = KER_IDENTITY
    ker_p: np.ndarray = field(default_factory=lambda: np.zeros(6))
    add_off: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    add_val: np.ndarray = field(default_factory=lambda: np.zeros(1))
    # python-only hooks; when set the compiled core cannot run the model
    motion_fn: Optional[Callable] = None
    kernel_fn: Optional[Callable] = None

    @property
    def compiled_ok(self) -> bool:
        return self.motion_fn is None and self.kernel_fn is None

    def with_rate(self, rate: float) -> "Encoded":
        from dataclasses import replace

        return replace(self, rate=rate)
