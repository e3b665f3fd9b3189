"""Counter-based random streams.

Every random quantity in a simulation is addressed by ``(key, purpose,
counter)``.  Keys are 64-bit integers derived by hashing: a replica key from
``(seed, domain, replica)``, a node key from its parent key and child index,
and so on.  Draws are therefore independent of evaluation order, which is
what makes replicas parallelisable and subtrees replayable.

The same arithmetic is implemented in the compiled core; the functions here
are the reference and are used by the pure-Python backend.
"""

from __future__ import annotations

import math
import struct
import zlib

import numpy as np

M64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_PURPOSE_MUL = 0xD6E8FEB86659FD93
_CHILD_C = 0x632BE59BD9B4E019
_THETA_C = 0xA0761D6478BD642F
_SCALE = 2.0 ** -52
TWO_PI = 2.0 * math.pi

# purposes; keep in sync with _core.pyx
LIFE = 1
NU = 2
MOTION = 3
JUMP = 4
JUMPMAP = 5
BRIDGE = 6
KERNEL = 7
INIT = 8
THETA_EXTRA = 9
SP_WAIT = 11
SP_H = 12
SP_I = 13
SP_THETA = 14
USER = 20


def mix64(z: int) -> int:
    z &= M64
    z = ((z ^ (z >> 30)) * _MIX1) & M64
    z = ((z ^ (z >> 27)) * _MIX2) & M64
    return z ^ (z >> 31)


def stream_base(key: int, purpose: int) -> int:
    return mix64(key ^ ((purpose * _PURPOSE_MUL) & M64))


def uniform_at(base: int, i: int) -> float:
    """Uniform on the open interval (0, 1); 52 random bits."""
    v = mix64(base + (i + 1) * GOLDEN) >> 12
    return (v + 0.5) * _SCALE


def normal_at(base: int, i: int) -> float:
    u1 = uniform_at(base, 2 * i)
    u2 = uniform_at(base, 2 * i + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


def child_key(key: int, j: int) -> int:
    return mix64(key ^ mix64(j * GOLDEN + _CHILD_C))


def theta_key(theta: float) -> int:
    """Key of the substream that extra kernel randomness is drawn from."""
    bits = struct.unpack("<Q", struct.pack("<d", theta))[0]
    return mix64(bits ^ _THETA_C)


def domain_key(seed: int, domain: int | str) -> int:
    if isinstance(domain, str):
        domain = zlib.crc32(domain.encode())
    return mix64((seed & M64) ^ mix64(domain * GOLDEN + _THETA_C))


def replica_key(seed: int, domain: int | str, index: int) -> int:
    return child_key(domain_key(seed, domain), index)


# --- vectorised versions (numpy uint64 arithmetic wraps modulo 2**64) ---

def _mix64_np(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def child_keys(key: int, js) -> np.ndarray:
    js = np.asarray(js, dtype=np.uint64)
    with np.errstate(over="ignore"):
        inner = _mix64_np(js * np.uint64(GOLDEN) + np.uint64(_CHILD_C))
    return _mix64_np(np.uint64(key) ^ inner)


def replica_keys(seed: int, domain: int | str, start: int, count: int) -> np.ndarray:
    return child_keys(domain_key(seed, domain), np.arange(start, start + count, dtype=np.uint64))


def stream_bases(keys, purpose: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    return _mix64_np(keys ^ np.uint64((purpose * _PURPOSE_MUL) & M64))


def uniforms_at(bases, counters) -> np.ndarray:
    bases = np.asarray(bases, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        v = _mix64_np(bases + (counters + np.uint64(1)) * np.uint64(GOLDEN)) >> np.uint64(12)
    return (v.astype(np.float64) + 0.5) * _SCALE


def normals_at(bases, counters) -> np.ndarray:
    counters = np.asarray(counters, dtype=np.uint64)
    u1 = uniforms_at(bases, np.uint64(2) * counters)
    u2 = uniforms_at(bases, np.uint64(2) * counters + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)


class Stream:
    """A sequential view on one ``(key, purpose)`` substream.

    Cloning (``copy``) gives an independent cursor over the same numbers.
    ``spawn(j)`` derives a child stream the way tree nodes derive theirs.
    """

    __slots__ = ("key", "purpose", "counter", "_base")

    def __init__(self, key: int, purpose: int = USER, counter: int = 0):
        self.key = key & M64
        self.purpose = purpose
        self.counter = counter
        self._base = stream_base(self.key, purpose)

    @classmethod
    def from_seed(cls, seed: int, domain: int | str = 0) -> "Stream":
        return cls(domain_key(seed, domain))

    def copy(self) -> "Stream":
        return Stream(self.key, self.purpose, self.counter)

    def spawn(self, j: int) -> "Stream":
        return Stream(child_key(self.key, j), self.purpose)

    def spawn_key(self, j: int) -> int:
        return child_key(self.key, j)

    def spawn_keys(self, count: int, start: int = 0) -> np.ndarray:
        return child_keys(self.key, np.arange(start, start + count, dtype=np.uint64))

    def uniform(self) -> float:
        u = uniform_at(self._base, self.counter)
        self.counter += 1
        return u

    def uniforms(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return uniforms_at(np.full(n, self._base, dtype=np.uint64), idx)

    def normal(self) -> float:
        z = normal_at(self._base, self.counter)
        self.counter += 1
        return z

    def normals(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return normals_at(np.full(n, self._base, dtype=np.uint64), idx)

    def exponential(self, rate: float = 1.0) -> float:
        return -math.log(self.uniform()) / rate

    def exponentials(self, n: int, rate: float = 1.0) -> np.ndarray:
        return -np.log(self.uniforms(n)) / rate

    def __repr__(self):
        return f"Stream(key={self.key:#018x}, purpose={self.purpose}, counter={self.counter})"
