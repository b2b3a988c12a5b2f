"""
lattice_engine.py — Torus Geometry & Shift Operators
=====================================================
Index arithmetic on the cube V_n = {-n..n}^d with periodic wraparound.

Sites are addressed two ways:
    LatticeVec        — signed coordinates, canonical range [-n, n]
    flat site index   — position in lexicographic cube order (0 .. |V_n|-1)

Per-site arrays everywhere in the toolkit are stored as numpy arrays whose
first axes have shape (2n+1,)*d, indexed by coordinate + n. Shifting such an
array is therefore an np.roll along the lattice axes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from errors import DimensionMismatchError

LatticeVec = tuple  # tuple[int, ...] of length d


@dataclass(frozen=True)
class TorusSpec:
    d: int
    n: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if self.n < 0:
            raise ValueError(f"cube radius must be non-negative, got {self.n}")

    @property
    def side(self) -> int:
        return 2 * self.n + 1

    @property
    def shape(self) -> tuple:
        return (self.side,) * self.d

    def volume(self) -> int:
        return self.side ** self.d


def cube_volume(d: int, m: int) -> int:
    """|V_m| = (2m+1)^d."""
    return (2 * m + 1) ** d


def sup_norm(j: Sequence[int]) -> int:
    return max((abs(int(c)) for c in j), default=0)


def _check_dim(j: Sequence[int], spec: TorusSpec):
    if len(j) != spec.d:
        raise DimensionMismatchError(f"index {tuple(j)} has length {len(j)}, torus has d={spec.d}")


def mod_torus(j: Sequence[int], spec: TorusSpec) -> LatticeVec:
    """Canonical representative of j in [-n, n]^d."""
    _check_dim(j, spec)
    s, n = spec.side, spec.n
    return tuple(((int(c) + n) % s) - n for c in j)


def add_mod(j: Sequence[int], k: Sequence[int], spec: TorusSpec) -> LatticeVec:
    _check_dim(k, spec)
    return mod_torus(tuple(a + b for a, b in zip(j, k)), spec)


def cube_iter(spec: TorusSpec) -> Iterator[LatticeVec]:
    """All sites of V_n in lexicographic order, first (-n,..,-n)."""
    rng = range(-spec.n, spec.n + 1)
    return itertools.product(rng, repeat=spec.d)


def cube_offsets(d: int, m: int) -> list:
    """V_m as a list, lexicographic."""
    return list(cube_iter(TorusSpec(d, m)))


def site_index(j: Sequence[int], spec: TorusSpec) -> int:
    """Flat lexicographic index of a site (after reduction mod V_n)."""
    idx = 0
    for c in mod_torus(j, spec):
        idx = idx * spec.side + (c + spec.n)
    return idx


def site_from_index(idx: int, spec: TorusSpec) -> LatticeVec:
    coords = []
    for _ in range(spec.d):
        idx, r = divmod(idx, spec.side)
        coords.append(r - spec.n)
    return tuple(reversed(coords))


def site_coords(idx, spec: TorusSpec) -> np.ndarray:
    """(len(idx), d) signed coordinates of flat site indices."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    return np.stack(np.unravel_index(idx, spec.shape), axis=-1).astype(np.int64) - spec.n


def flat_sites(coords, spec: TorusSpec) -> np.ndarray:
    """Flat indices of (N, d) coordinates, reduced mod V_n first."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, spec.d)
    wrapped = (coords + spec.n) % spec.side
    return np.ravel_multi_index(tuple(wrapped.T), spec.shape).astype(np.int64)


def radii_of(spec: TorusSpec) -> np.ndarray:
    """Sup norm of every site of V_n, in cube order."""
    return np.abs(site_coords(np.arange(spec.volume()), spec)).max(axis=1, initial=0)


def shift_config(X: np.ndarray, k: Sequence[int], spec: TorusSpec) -> np.ndarray:
    """
    (S^k X)^m = X^{m+k} for a configuration laid out on the lattice axes.

    X has shape spec.shape + trailing dims. Trailing dims (time, connection
    offsets, ...) are untouched.
    """
    _check_dim(k, spec)
    if X.shape[: spec.d] != spec.shape:
        raise DimensionMismatchError(
            f"configuration shape {X.shape} does not start with torus shape {spec.shape}"
        )
    # np.roll by -k moves entry m+k to position m
    return np.roll(X, shift=tuple(-int(c) for c in k), axis=tuple(range(spec.d)))


def shift_flat(X: np.ndarray, k: Sequence[int], spec: TorusSpec) -> np.ndarray:
    """shift_config for arrays whose first axis is the flat site index."""
    lattice = X.reshape(spec.shape + X.shape[1:])
    return shift_config(lattice, k, spec).reshape(X.shape)
