"""Problem data: steering targets, weights, chance constraints and affine policies."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .system import ParameterDistribution, ParameterSet, UncertainSystem

TERMINAL_PSD = "psd"
TERMINAL_EQUALITY = "equality"


class ProblemError(ValueError):
    """Invalid problem data. ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True, eq=False)
class ChanceConstraint:
    """``Pr(alpha^T y <= beta) >= 1 - delta`` on the state (``kind='state'``) or input."""

    alpha: np.ndarray
    beta: float
    delta: float
    kind: str = "state"

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).reshape(-1))
        if self.kind not in ("state", "input"):
            raise ProblemError(f"unknown chance constraint kind {self.kind!r}", "kind")
        if not 0.0 < self.delta < 1.0:
            raise ProblemError("violation probability must lie in (0, 1)", "delta")

    @property
    def cantelli_factor(self) -> float:
        return float(np.sqrt((1.0 - self.delta) / self.delta))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha.tolist(), "beta": self.beta, "delta": self.delta}


@dataclass(eq=False)
class Policy:
    """Affine state feedback ``u_k = L_k x_k + v_k`` for ``k = 0..N-1``."""

    L: np.ndarray  # (N, n_u, n_x)
    v: np.ndarray  # (N, n_u)

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.L.ndim != 3 or self.v.ndim != 2 or self.L.shape[0] != self.v.shape[0] \
                or self.L.shape[1] != self.v.shape[1]:
            raise ValueError(f"inconsistent policy shapes L{self.L.shape} v{self.v.shape}")

    @classmethod
    def zeros(cls, N: int, n_u: int, n_x: int) -> "Policy":
        return cls(np.zeros((N, n_u, n_x)), np.zeros((N, n_u)))

    @property
    def horizon(self) -> int:
        return self.v.shape[0]

    def copy(self) -> "Policy":
        return Policy(self.L.copy(), self.v.copy())

    def distance(self, other: "Policy") -> float:
        """Sum over steps of ``||v_k - v'_k||_2 + ||vec(L_k - L'_k)||_2``."""
        dv = np.linalg.norm(self.v - other.v, axis=1)
        dL = np.linalg.norm((self.L - other.L).reshape(self.horizon, -1), axis=1)
        return float(np.sum(dv) + np.sum(dL))

    def to_dict(self) -> dict:
        return {"L": self.L.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        return cls(np.array(d["L"], dtype=float), np.array(d["v"], dtype=float))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "Policy":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _check_psd(mat: np.ndarray, path: str, strict: bool = False, message: Optional[str] = None):
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=0.0):
        raise ProblemError(message or "matrix is not symmetric", path)
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if strict and w.min() <= 0.0:
        raise ProblemError(message or "matrix is not positive definite", path)
    if w.min() < -1e-10:
        raise ProblemError(message or "matrix is not positive semidefinite", path)


@dataclass(eq=False)
class SteeringProblem:
    """Finite-horizon covariance steering problem with constant random parameters.

    ``terminal_index`` selects the state coordinates the terminal mean and
    covariance targets refer to (default: all).  ``gain_mask`` marks the
    feedback entries that may be nonzero (default: all).
    """

    system: UncertainSystem
    params: ParameterSet
    horizon: int
    mu0: np.ndarray
    sigma0: np.ndarray
    mu_f: np.ndarray
    sigma_f: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    noise: ParameterDistribution = field(default_factory=ParameterDistribution.gaussian)
    chance_constraints: Sequence[ChanceConstraint] = ()
    terminal_mode: str = TERMINAL_PSD
    terminal_index: Optional[Sequence[int]] = None
    gain_mask: Optional[np.ndarray] = None
    plot_index: Sequence[int] = (0, 1)
    name: str = "problem"

    def __post_init__(self):
        sys = self.system
        n_x, n_u = sys.n_x, sys.n_u
        if not isinstance(self.params, ParameterSet):
            self.params = ParameterSet(tuple(self.params))
        if self.params.n_p != sys.n_p:
            raise ProblemError(f"{self.params.n_p} parameter distributions given, system has n_p={sys.n_p}",
                               "parameters")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise ProblemError("horizon must be a nonnegative integer", "horizon")
        self.horizon = int(self.horizon)
        if self.terminal_index is None:
            self.terminal_index = tuple(range(n_x))
        self.terminal_index = tuple(int(i) for i in self.terminal_index)
        if any(not 0 <= i < n_x for i in self.terminal_index) or len(set(self.terminal_index)) != len(
                self.terminal_index):
            raise ProblemError("invalid terminal state selection", "terminal_index")
        n_f = len(self.terminal_index)
        self.mu0 = self._vector(self.mu0, n_x, "mu0")
        self.sigma0 = self._matrix(self.sigma0, (n_x, n_x), "sigma0")
        _check_psd(self.sigma0, "sigma0", message="invalid initial covariance")
        self.mu_f = self._vector(self.mu_f, n_f, "mu_f")
        self.sigma_f = self._matrix(self.sigma_f, (n_f, n_f), "sigma_f")
        _check_psd(self.sigma_f, "sigma_f")
        self.Q = self._matrix(self.Q, (n_x, n_x), "Q")
        _check_psd(self.Q, "Q")
        self.R = self._matrix(self.R, (n_u, n_u), "R")
        _check_psd(self.R, "R", strict=True)
        if self.terminal_mode not in (TERMINAL_PSD, TERMINAL_EQUALITY):
            raise ProblemError(f"unknown terminal mode {self.terminal_mode!r}", "terminal_mode")
        if abs(self.noise.raw_moment(1)) > 0 or abs(self.noise.raw_moment(2) - 1.0) > 1e-12:
            raise ProblemError("additive noise must have zero mean and unit variance", "noise")
        if self.gain_mask is None:
            self.gain_mask = np.ones((n_u, n_x), dtype=bool)
        self.gain_mask = np.asarray(self.gain_mask, dtype=bool)
        if self.gain_mask.shape != (n_u, n_x):
            raise ProblemError(f"shape {self.gain_mask.shape}, expected {(n_u, n_x)}", "gain_mask")
        for i, cc in enumerate(self.chance_constraints):
            dim = n_x if cc.kind == "state" else n_u
            if cc.alpha.shape != (dim,):
                raise ProblemError(f"alpha has length {cc.alpha.size}, expected {dim}",
                                   f"chance_constraints[{i}].alpha")
        self.chance_constraints = tuple(self.chance_constraints)
        self.plot_index = tuple(int(i) for i in self.plot_index)
        # order 2N feeds the recursions; 2N + 2 covers one extra diagonal order
        for j, d in enumerate(self.params.dists):
            if d.max_order < 2 * self.horizon + 2:
                raise ProblemError(f"explicit table needs moments up to order {2 * self.horizon + 2}",
                                   f"parameters[{j}].moments")

    @staticmethod
    def _vector(x, n, path):
        a = np.asarray(x, dtype=float).reshape(-1)
        if a.shape != (n,):
            raise ProblemError(f"length {a.size}, expected {n}", path)
        return a

    @staticmethod
    def _matrix(x, shape, path):
        a = np.asarray(x, dtype=float)
        if a.shape != tuple(shape):
            raise ProblemError(f"shape {a.shape}, expected {tuple(shape)}", path)
        return a

    @property
    def n_x(self):
        return self.system.n_x

    @property
    def n_u(self):
        return self.system.n_u

    @property
    def n_w(self):
        return self.system.n_w

    @property
    def n_p(self):
        return self.system.n_p

    @property
    def state_constraints(self):
        return [c for c in self.chance_constraints if c.kind == "state"]

    @property
    def input_constraints(self):
        return [c for c in self.chance_constraints if c.kind == "input"]

    def zero_policy(self) -> Policy:
        return Policy.zeros(self.horizon, self.n_u, self.n_x)

    def replace(self, **changes) -> "SteeringProblem":
        kw = {k: getattr(self, k) for k in (
            "system", "params", "horizon", "mu0", "sigma0", "mu_f", "sigma_f", "Q", "R", "noise",
            "chance_constraints", "terminal_mode", "terminal_index", "gain_mask", "plot_index", "name")}
        kw.update(changes)
        return SteeringProblem(**kw)
