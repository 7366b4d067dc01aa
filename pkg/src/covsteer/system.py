"""Uncertain linear systems and moments of their constant random parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

MultiIndex = tuple  # sorted tuple of parameter indices, with multiplicity

GAUSSIAN = "gaussian"
UNIFORM = "uniform"
TWO_POINT = "two_point"
EXPLICIT = "explicit"
KINDS = (GAUSSIAN, UNIFORM, TWO_POINT, EXPLICIT)


class MomentOrderError(ValueError):
    """Raised when an explicit moment table is queried past its last entry."""


def canonical(mi: Sequence[int]) -> MultiIndex:
    return tuple(sorted(int(j) for j in mi))


def multi_indices(n_p: int, max_order: int) -> list[MultiIndex]:
    """All canonical multi-indices over ``n_p`` parameters, ordered by order then lexicographically."""
    out: list[MultiIndex] = [()]
    if n_p == 0:
        return out
    for order in range(1, max_order + 1):
        out.extend(combinations_with_replacement(range(n_p), order))
    return out


def count_multi_indices(n_p: int, order: int) -> int:
    """Number of multi-indices of exactly ``order`` over ``n_p`` parameters."""
    if order == 0:
        return 1
    if n_p == 0:
        return 0
    return math.comb(n_p + order - 1, order)


@dataclass(frozen=True)
class ParameterDistribution:
    """Distribution of one zero-mean scalar parameter.

    ``kind`` is one of ``gaussian`` (uses ``std``), ``uniform`` (``lo``/``hi``,
    with ``lo == -hi``), ``two_point`` (``+-value`` with probability 1/2 each)
    or ``explicit`` (``moments[m-1] = E[p^m]`` for ``m = 1..M``).
    """

    kind: str
    std: float = 1.0
    lo: float = -1.0
    hi: float = 1.0
    value: float = 1.0
    moments: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == GAUSSIAN and not self.std >= 0:
            raise ValueError("gaussian std must be nonnegative")
        if self.kind == UNIFORM:
            if not self.hi >= self.lo:
                raise ValueError("uniform requires hi >= lo")
            if abs(self.lo + self.hi) > 1e-12 * max(1.0, abs(self.hi)):
                raise ValueError("uniform parameter must be zero-mean (lo == -hi); "
                                 "absorb the mean into the nominal matrices")
        if self.kind == EXPLICIT:
            object.__setattr__(self, "moments", tuple(float(m) for m in self.moments))
            if len(self.moments) < 1 or self.moments[0] != 0.0:
                raise ValueError("explicit moment table must start with E[p] = 0")

    @classmethod
    def gaussian(cls, std: float = 1.0) -> "ParameterDistribution":
        return cls(GAUSSIAN, std=float(std))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "ParameterDistribution":
        return cls(UNIFORM, lo=float(lo), hi=float(hi))

    @classmethod
    def two_point(cls, value: float = 1.0) -> "ParameterDistribution":
        return cls(TWO_POINT, value=float(value))

    @classmethod
    def explicit(cls, moments: Sequence[float]) -> "ParameterDistribution":
        return cls(EXPLICIT, moments=tuple(moments))

    @property
    def max_order(self) -> float:
        return len(self.moments) if self.kind == EXPLICIT else math.inf

    @property
    def samplable(self) -> bool:
        return self.kind != EXPLICIT

    def raw_moment(self, m: int) -> float:
        return _raw_moment(self, int(m))

    def variance(self) -> float:
        return self.raw_moment(2)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == GAUSSIAN:
            return self.std * rng.standard_normal(size)
        if self.kind == UNIFORM:
            # half-open [lo, hi); the boundary has measure zero
            return self.lo + (self.hi - self.lo) * rng.random(size)
        if self.kind == TWO_POINT:
            return self.value * (2.0 * rng.integers(0, 2, size) - 1.0)
        raise ValueError("oracle requires a samplable kind; explicit moment tables cannot be sampled")

    def to_dict(self) -> dict:
        if self.kind == GAUSSIAN:
            return {"kind": GAUSSIAN, "std": self.std}
        if self.kind == UNIFORM:
            return {"kind": UNIFORM, "lo": self.lo, "hi": self.hi}
        if self.kind == TWO_POINT:
            return {"kind": TWO_POINT, "value": self.value}
        return {"kind": EXPLICIT, "moments": list(self.moments)}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterDistribution":
        kind = d.get("kind")
        if kind == GAUSSIAN:
            return cls.gaussian(d.get("std", 1.0))
        if kind == UNIFORM:
            return cls.uniform(d["lo"], d["hi"])
        if kind == TWO_POINT:
            return cls.two_point(d.get("value", 1.0))
        if kind == EXPLICIT:
            return cls.explicit(d["moments"])
        raise ValueError(f"unknown distribution kind {kind!r}")


@lru_cache(maxsize=None)
def _raw_moment(dist: ParameterDistribution, m: int) -> float:
    if m < 0:
        raise ValueError("moment order must be nonnegative")
    if m == 0:
        return 1.0
    if dist.kind == EXPLICIT:
        if m > len(dist.moments):
            raise MomentOrderError(f"moment order unavailable: E[p^{m}] requested, table ends at {len(dist.moments)}")
        return dist.moments[m - 1]
    if m % 2 == 1:
        return 0.0
    if dist.kind == GAUSSIAN:
        dfact = 1
        for k in range(m - 1, 0, -2):
            dfact *= k
        return float(dfact) * dist.std ** m
    if dist.kind == UNIFORM:
        return dist.hi ** m / (m + 1)
    return dist.value ** m


def raw_moment(dist: ParameterDistribution, m: int) -> float:
    return _raw_moment(dist, int(m))


@dataclass(frozen=True)
class ParameterSet:
    """Mutually independent parameters ``p_1..p_np``."""

    dists: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "dists", tuple(self.dists))

    def __len__(self):
        return len(self.dists)

    def __getitem__(self, j):
        return self.dists[j]

    @property
    def n_p(self) -> int:
        return len(self.dists)

    def raw_moment(self, j: int, m: int) -> float:
        return _raw_moment(self.dists[j], int(m))

    def joint_moment(self, mi: Sequence[int]) -> float:
        """``E[prod p]`` for a multi-index; independence factorises it per parameter."""
        if not mi:
            return 1.0
        counts: dict[int, int] = {}
        for j in mi:
            if not 0 <= j < self.n_p:
                raise IndexError(f"parameter index {j} out of range for n_p={self.n_p}")
            counts[j] = counts.get(j, 0) + 1
        out = 1.0
        for j, m in counts.items():
            out *= _raw_moment(self.dists[j], m)
            if out == 0.0:
                return 0.0
        return out

    def param_cov(self, mi_a: Sequence[int], mi_b: Sequence[int]) -> float:
        return self.joint_moment(tuple(mi_a) + tuple(mi_b)) - self.joint_moment(mi_a) * self.joint_moment(mi_b)


def joint_moment(dists, mi: Sequence[int]) -> float:
    return _as_set(dists).joint_moment(mi)


def param_cov(dists, mi_a: Sequence[int], mi_b: Sequence[int]) -> float:
    return _as_set(dists).param_cov(mi_a, mi_b)


def _as_set(dists) -> ParameterSet:
    return dists if isinstance(dists, ParameterSet) else ParameterSet(tuple(dists))


def _as_matrix(x, shape=None, name="matrix") -> np.ndarray:
    a = np.array(x, dtype=float)
    if a.ndim == 1 and shape is not None and len(shape) == 2 and shape[1] == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {a.shape}")
    if shape is not None and a.shape != tuple(shape):
        raise ValueError(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    return a


@dataclass(frozen=True, eq=False)
class UncertainSystem:
    """``x+ = (A + sum_j At_j p_j) x + (B + sum_j Bt_j p_j) u + (D + sum_j Dt_j p_j) w``."""

    a_bar: np.ndarray
    b_bar: np.ndarray
    d_bar: np.ndarray
    a_tilde: tuple = field(default=())
    b_tilde: tuple = field(default=())
    d_tilde: tuple = field(default=())

    def __post_init__(self):
        a = _as_matrix(self.a_bar, name="a_bar")
        n_x = a.shape[0]
        if a.shape != (n_x, n_x):
            raise ValueError(f"a_bar must be square, got {a.shape}")
        b = _as_matrix(self.b_bar, name="b_bar")
        if b.shape[0] != n_x:
            raise ValueError(f"b_bar has {b.shape[0]} rows, expected {n_x}")
        d = _as_matrix(self.d_bar, name="d_bar")
        if d.shape[0] != n_x:
            raise ValueError(f"d_bar has {d.shape[0]} rows, expected {n_x}")
        n_p = max(len(self.a_tilde), len(self.b_tilde), len(self.d_tilde))
        lists = []
        for name, nominal, given in (("a_tilde", a, self.a_tilde), ("b_tilde", b, self.b_tilde),
                                     ("d_tilde", d, self.d_tilde)):
            given = list(given)
            if not given:
                given = [np.zeros_like(nominal) for _ in range(n_p)]
            if len(given) != n_p:
                raise ValueError(f"{name} has {len(given)} entries, expected n_p={n_p}")
            mats = tuple(_as_matrix(m, nominal.shape, f"{name}[{j}]") for j, m in enumerate(given))
            for m in mats:
                m.setflags(write=False)
            lists.append(mats)
        for arr in (a, b, d):
            arr.setflags(write=False)
        object.__setattr__(self, "a_bar", a)
        object.__setattr__(self, "b_bar", b)
        object.__setattr__(self, "d_bar", d)
        object.__setattr__(self, "a_tilde", lists[0])
        object.__setattr__(self, "b_tilde", lists[1])
        object.__setattr__(self, "d_tilde", lists[2])

    @property
    def n_x(self) -> int:
        return self.a_bar.shape[0]

    @property
    def n_u(self) -> int:
        return self.b_bar.shape[1]

    @property
    def n_w(self) -> int:
        return self.d_bar.shape[1]

    @property
    def n_p(self) -> int:
        return len(self.a_tilde)

    def stacked(self):
        """Nominal plus perturbation matrices stacked along a leading axis of length ``n_p + 1``.

        Slot 0 is the nominal matrix; slot ``j + 1`` multiplies ``p_j``.
        """
        A = np.stack((self.a_bar,) + self.a_tilde)
        B = np.stack((self.b_bar,) + self.b_tilde)
        D = np.stack((self.d_bar,) + self.d_tilde)
        return A, B, D

    def realize(self, p: Sequence[float]):
        """Dynamics matrices for one parameter realisation."""
        p = np.asarray(p, dtype=float)
        A = self.a_bar + sum((pj * m for pj, m in zip(p, self.a_tilde)), np.zeros_like(self.a_bar))
        B = self.b_bar + sum((pj * m for pj, m in zip(p, self.b_tilde)), np.zeros_like(self.b_bar))
        D = self.d_bar + sum((pj * m for pj, m in zip(p, self.d_tilde)), np.zeros_like(self.d_bar))
        return A, B, D

    def without_uncertainty(self) -> "UncertainSystem":
        return UncertainSystem(self.a_bar, self.b_bar, self.d_bar,
                               tuple(np.zeros_like(m) for m in self.a_tilde),
                               tuple(np.zeros_like(m) for m in self.b_tilde),
                               tuple(np.zeros_like(m) for m in self.d_tilde))

    def to_dict(self) -> dict:
        return {
            "a_bar": self.a_bar.tolist(), "b_bar": self.b_bar.tolist(), "d_bar": self.d_bar.tolist(),
            "a_tilde": [m.tolist() for m in self.a_tilde],
            "b_tilde": [m.tolist() for m in self.b_tilde],
            "d_tilde": [m.tolist() for m in self.d_tilde],
        }
