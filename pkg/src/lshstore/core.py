"""Euclidean LSH math: hash functions, compound keys, collision probability,
parameter derivation, and the search-radius schedule.

Everything here is pure computation on numpy arrays. No I/O, no index state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

# Identifiers recorded in the index manifest so a reader can confirm it was
# built with the same hashing pipeline. Bump only with the format version.
MIXING_RULE_ID = "splitmix64-fold32"
GAUSSIAN_RULE_ID = "philox4x64-ndtri"

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_MASK32 = np.uint64(0xFFFFFFFF)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX_C1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_C2 = np.uint64(0x94D049BB133111EB)

# Philox key space: radius index in bits 20+, table index in bits 0..19.
# Caps L at 2**20 tables per radius, far beyond any practical setting.
_KEY_RADIUS_SHIFT = 20
MAX_TABLES_PER_RADIUS = 1 << _KEY_RADIUS_SHIFT


class ParameterError(ValueError):
    """Raised when a parameter combination violates its constraints."""


def collision_probability(s, w: float):
    """Collision probability of a single projection hash for points at
    distance s with bucket width w.

    Uses the closed form for Gaussian projections, a function of t = w/s:

        p(t) = 1 - 2*Phi(-t) - (2 / (sqrt(2*pi) * t)) * (1 - exp(-t*t/2))

    Accepts a scalar or array s; s = 0 maps to probability 1.
    """
    if w <= 0:
        raise ParameterError(f"bucket width must be positive, got {w}")
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0):
        raise ParameterError("distance must be nonnegative")
    scalar = s_arr.ndim == 0
    s_arr = np.atleast_1d(s_arr)
    out = np.ones_like(s_arr)
    pos = s_arr > 0
    t = w / s_arr[pos]
    out[pos] = (
        1.0
        - 2.0 * ndtr(-t)
        - (2.0 / (math.sqrt(2.0 * math.pi) * t)) * (1.0 - np.exp(-0.5 * t * t))
    )
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class LshFunction:
    """One projection hash: o -> floor((a.o + b) / w)."""

    a: np.ndarray
    b: float
    w: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise ParameterError("projection vector must be finite")
        if self.w <= 0:
            raise ParameterError("bucket width must be positive")
        if not 0 <= self.b < self.w:
            raise ParameterError(f"offset {self.b} outside [0, {self.w})")
        object.__setattr__(self, "a", a)


def hash_point(f: LshFunction, o) -> int:
    """Bucket index of one point under one projection hash.

    Floor is toward negative infinity, not toward zero.
    """
    o = np.asarray(o, dtype=np.float64)
    if o.shape != f.a.shape:
        raise ParameterError(
            f"dimension mismatch: point has {o.shape}, function has {f.a.shape}"
        )
    return int(math.floor((float(f.a @ o) + f.b) / f.w))


@dataclass(frozen=True)
class CompoundHash:
    """An ordered tuple of projection hashes mixed into one 32-bit key."""

    functions: tuple
    mix_seed: int

    @property
    def m(self) -> int:
        return len(self.functions)


def splitmix64(x: np.ndarray) -> np.ndarray:
    """The splitmix64 finalizer over a uint64 array (elementwise)."""
    x = (x + _GOLD) & _MASK64
    x ^= x >> np.uint64(30)
    x = (x * _MIX_C1) & _MASK64
    x ^= x >> np.uint64(27)
    x = (x * _MIX_C2) & _MASK64
    x ^= x >> np.uint64(31)
    return x


_M64 = (1 << 64) - 1


def _splitmix64_int(x: int) -> int:
    """splitmix64 on a plain integer; bit-identical to the array form."""
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _M64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _M64
    x ^= x >> 31
    return x


def fold32(values: np.ndarray, mix_seed: int) -> np.ndarray:
    """Mix an (N, m) array of per-function integer hashes into N 32-bit keys.

    Chains the splitmix64 finalizer over the m columns so equal tuples always
    map to equal keys and any column change avalanches through the result.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.int64))
    if values.shape[0] == 1:
        # Single-point queries hit this once per table; plain integer
        # arithmetic beats m rounds of 1-element array dispatch and all
        # operations are exact mod 2**64, so the result is identical.
        acc = mix_seed & _M64
        for v in values[0].tolist():
            acc = _splitmix64_int(acc ^ (v & _M64))
        return np.array([acc & 0xFFFFFFFF], dtype=np.uint32)
    acc = np.full(values.shape[0], np.uint64(mix_seed & 0xFFFFFFFFFFFFFFFF))
    for j in range(values.shape[1]):
        acc = splitmix64(acc ^ values[:, j].view(np.uint64))
    return (acc & _MASK32).astype(np.uint32)


def compound_hash(g: CompoundHash, o) -> int:
    """32-bit compound key of one point. Equal per-function tuples always
    yield equal keys."""
    vals = np.array([[hash_point(f, o) for f in g.functions]], dtype=np.int64)
    return int(fold32(vals, g.mix_seed)[0])


@dataclass(frozen=True)
class ParamSet:
    """Every tuning constant of a built index, derived from
    (n, d, c, w, gamma, x_max, seed) alone by compute_params."""

    n: int
    d: int
    c: float
    w: float
    gamma: float
    x_max: float
    seed: int
    rho: float
    m: int
    L: int
    S: int
    r: int
    R_max: float

    @property
    def radii(self) -> tuple:
        return tuple(self.c ** i for i in range(self.r))


def compute_params(
    n: int, d: int, c: float, w: float, gamma: float, x_max: float, seed: int
) -> ParamSet:
    """Derive the full parameter set.

    p1 and p2 are taken at normalized distances 1 and c: hashing at radius R
    divides coordinates by R (bucket width w*R in the original space), so the
    pair (p1, p2) and everything derived from it are radius-independent.
    """
    if n < 1:
        raise ParameterError(f"object count must be >= 1, got {n}")
    if d < 1:
        raise ParameterError(f"dimension must be >= 1, got {d}")
    if c <= 1:
        raise ParameterError(f"approximation ratio must exceed 1, got {c}")
    if x_max <= 0:
        raise ParameterError(f"x_max must be positive, got {x_max}")
    p1 = collision_probability(1.0, w)
    p2 = collision_probability(float(c), w)
    rho = math.log(1.0 / p1) / math.log(1.0 / p2)
    if gamma <= rho:
        raise ParameterError(
            f"gamma {gamma} must exceed rho {rho:.6f}; query cost would not be sublinear"
        )
    # ceil keeps both rounding errors on the conservative (accuracy) side.
    m = max(1, math.ceil(gamma * math.log(n) / math.log(1.0 / p2)))
    L = max(1, math.ceil(n ** rho))
    if L > MAX_TABLES_PER_RADIUS:
        raise ParameterError(f"L = {L} exceeds the supported maximum {MAX_TABLES_PER_RADIUS}")
    R_max, r, _ = radius_schedule(x_max, d, c)
    return ParamSet(
        n=int(n), d=int(d), c=float(c), w=float(w), gamma=float(gamma),
        x_max=float(x_max), seed=int(seed), rho=rho, m=m, L=L, S=2 * L,
        r=r, R_max=R_max,
    )


def radius_schedule(x_max: float, d: int, c: float):
    """(R_max, r, radii). R_max = 2 * x_max * sqrt(d) bounds any pairwise
    distance; radii are 1, c, ..., c**(r-1). Degenerate R_max <= 1 clamps to
    a single radius."""
    if x_max <= 0:
        raise ParameterError(f"x_max must be positive, got {x_max}")
    if d < 1:
        raise ParameterError(f"dimension must be >= 1, got {d}")
    if c <= 1:
        raise ParameterError(f"approximation ratio must exceed 1, got {c}")
    R_max = 2.0 * x_max * math.sqrt(d)
    r = max(1, math.ceil(math.log(R_max) / math.log(c))) if R_max > 1 else 1
    radii = [float(c) ** i for i in range(r)]
    return R_max, r, radii


def projection_key(seed: int, radius_index: int, table_index: int) -> int:
    """Philox key for one (radius, table) block of hash functions."""
    if not 0 <= table_index < MAX_TABLES_PER_RADIUS:
        raise ParameterError(f"table index {table_index} out of range")
    return (int(seed) + (radius_index << _KEY_RADIUS_SHIFT) + table_index) & 0xFFFFFFFFFFFFFFFF


def gen_projections(params: ParamSet, radius_index: int, table_index: int):
    """Deterministic (A, B) for one compound hash: A is (m, d) standard
    Gaussian, B is (m,) uniform on [0, w).

    Draws come from counter-based Philox streams keyed by (seed, radius,
    table), with Gaussians via the inverse CDF on open-interval uniforms.
    The whole construction depends only on the documented generator, never
    on numpy's internal Gaussian algorithm, so builds are reproducible
    across numpy versions.
    """
    key = projection_key(params.seed, radius_index, table_index)
    gen = np.random.Generator(np.random.Philox(key=key))
    denom = float(1 << 53)
    u = gen.integers(1, 1 << 53, size=(params.m, params.d)) / denom
    a = ndtri(u)
    b = gen.integers(0, 1 << 53, size=params.m) / denom * params.w
    return a, b


def hash_batch(points: np.ndarray, a: np.ndarray, b: np.ndarray, w: float, radius: float) -> np.ndarray:
    """Per-function bucket indices for a batch: (N, m) int64.

    Radius scaling divides the points, which equals hashing with bucket
    width w * radius in the original space.
    """
    x = np.asarray(points, dtype=np.float64)
    proj = x @ a.T
    proj /= radius
    proj += b
    proj /= w
    np.floor(proj, out=proj)
    return proj.astype(np.int64)


def compound_keys(points, a, b, w: float, radius: float, mix_seed: int) -> np.ndarray:
    """32-bit compound keys for a batch of points under one table's hash."""
    return fold32(hash_batch(points, a, b, w, radius), mix_seed)
