"""Scenario builders and the JSON configuration schema.

See ``docs/config.md`` for the configuration reference.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .problem import TERMINAL_EQUALITY, TERMINAL_PSD, ChanceConstraint, ProblemError, SteeringProblem
from .system import KINDS, ParameterDistribution, UncertainSystem

DEFAULT_Q = 1e-2
DEFAULT_R = 1e-1


def build_spacecraft(theta_x: float = 0.5, theta_w: float = 0.2, dt: float = 0.2, mass: float = 1.0,
                     psi: Optional[ParameterDistribution] = None,
                     noise: Optional[ParameterDistribution] = None, horizon: int = 10,
                     name: str = "spacecraft") -> SteeringProblem:
    """Planar double integrator whose thrust frame is rotated by an unknown small angle.

    State ``(v_x, v_y, X, Y)``, input the two body-frame forces.  The unknown
    heading ``Psi`` mixes the velocities into the position update.
    """
    if theta_x < 0 or theta_w < 0:
        raise ProblemError("noise intensities must be nonnegative", "params.theta_x/theta_w")
    if dt <= 0 or mass <= 0:
        raise ProblemError("dt and mass must be positive", "params")
    psi = psi or ParameterDistribution.uniform(-1.0, 1.0)
    noise = noise or ParameterDistribution.gaussian(1.0)
    A = np.eye(4)
    A[2, 0] = A[3, 1] = dt
    B = np.zeros((4, 2))
    B[0, 0] = B[1, 1] = dt / mass
    D = np.zeros((4, 2))
    D[0, 0] = D[1, 1] = theta_w * dt / mass
    At = np.zeros((4, 4))
    At[2, 1] = -theta_x * dt
    At[3, 0] = theta_x * dt
    system = UncertainSystem(A, B, D, (At,))
    return SteeringProblem(
        system, [psi], horizon,
        mu0=[1.0, -1.0, 1.5, 1.5], sigma0=1e-3 * np.eye(4),
        mu_f=np.zeros(4), sigma_f=np.diag([1.2, 1.0, 0.12, 0.12]),
        Q=DEFAULT_Q * np.eye(4), R=DEFAULT_R * np.eye(2), noise=noise,
        plot_index=(2, 3), name=name)


def spacecraft_regime(regime: str, **kw) -> SteeringProblem:
    """The three noise regimes: ``additive``, ``multiplicative``, ``mixed``."""
    table = {"additive": (0.0, 1.2), "multiplicative": (0.3, 0.0), "mixed": (0.5, 0.2)}
    if regime not in table:
        raise ProblemError(f"unknown regime {regime!r}; expected one of {sorted(table)}", "params.regime")
    tx, tw = table[regime]
    return build_spacecraft(theta_x=tx, theta_w=tw, name=f"spacecraft_{regime}", **kw)


def build_bicycle(v_bar: float = 15.0, d_f: float = 1.5, d_r: float = 1.5, dt: float = 0.1,
                  theta_x: float = 1.5, psi_dot_ref: float = 1.0,
                  v_dist: Optional[ParameterDistribution] = None, horizon: int = 10,
                  name: str = "bicycle") -> SteeringProblem:
    """Kinematic bicycle linearized about a reference path, with unknown forward speed.

    Physical state ``(phi, e_psi, e_y)``.  A fourth state fixed at 1 carries the
    constant ``-psi_dot_ref * dt`` heading-error offset; its gain column is
    masked to zero and the terminal targets address the physical states only.
    """
    wb = d_f + d_r
    if wb <= 0:
        raise ProblemError("wheelbase d_f + d_r must be positive", "params.d_f/d_r")
    if dt <= 0:
        raise ProblemError("dt must be positive", "params.dt")
    v_dist = v_dist or ParameterDistribution.gaussian(1.0)
    lr = d_r / wb
    A = np.zeros((4, 4))
    A[:3, :3] = [[1.0, 0.0, 0.0],
                 [v_bar * dt / wb, 1.0, 0.0],
                 [lr * v_bar * dt, v_bar * dt, 1.0]]
    A[1, 3] = -psi_dot_ref * dt
    A[3, 3] = 1.0
    B = np.array([[dt], [lr * dt], [0.0], [0.0]])
    At = np.zeros((4, 4))
    At[:3, :3] = theta_x * np.array([[0.0, 0.0, 0.0],
                                     [dt / wb, 0.0, 0.0],
                                     [lr * dt, dt, 0.0]])
    system = UncertainSystem(A, B, np.zeros((4, 1)), (At,))
    mask = np.ones((1, 4), dtype=bool)
    mask[0, 3] = False
    return SteeringProblem(
        system, [v_dist], horizon,
        mu0=[0.0, 0.0, 1.0, 1.0], sigma0=np.diag([1e-3, 1e-3, 0.1, 0.0]),
        mu_f=[0.3, 0.0, 0.0], sigma_f=np.diag([1.0, 0.002, 0.01]),
        Q=DEFAULT_Q * np.diag([1.0, 1.0, 1.0, 0.0]), R=DEFAULT_R * np.eye(1),
        terminal_index=(0, 1, 2), gain_mask=mask, plot_index=(0, 2), name=name)


# ---------------------------------------------------------------------------
# configuration files

_TOP_KEYS = {"name", "system", "parameters", "noise", "horizon", "mu0", "sigma0", "mu_f", "sigma_f", "Q", "R",
             "chance_constraints", "terminal_mode", "terminal_index", "gain_mask", "plot_index", "scp", "solver",
             "mc", "output_dir", "initial_guess"}
_BUILDER_PARAMS = {
    "spacecraft": {"regime", "theta_x", "theta_w", "dt", "mass", "psi", "noise", "horizon"},
    "bicycle": {"v_bar", "d_f", "d_r", "dt", "theta_x", "psi_dot_ref", "v_dist", "horizon"},
}
_SCP_KEYS = {"eps", "trust_weight", "max_iters", "adapt_trust", "condense"}
_SOLVER_KEYS = {"max_iters", "eps_abs", "eps_rel", "alpha", "rho", "sigma", "adaptive_rho", "time_limit",
                "log_path"}
_MC_KEYS = {"samples", "seed", "ellipse_points", "ellipse_sigma", "trajectory_dump"}


class ConfigError(ProblemError):
    pass


@dataclass
class ScenarioConfig:
    problem: SteeringProblem
    scp: Any  # ScpSettings
    mc: dict = field(default_factory=lambda: {"samples": 10000, "seed": 0})
    output_dir: str = "out"
    initial_guess: Optional[str] = None
    source: Optional[str] = None


def _check_keys(d: dict, allowed: set, path: str):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", path)
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown field {extra[0]!r}", f"{path}.{extra[0]}" if path else extra[0])


def _dist(d, path) -> ParameterDistribution:
    if not isinstance(d, dict) or d.get("kind") not in KINDS:
        raise ConfigError(f"distribution needs a kind in {list(KINDS)}", path)
    try:
        return ParameterDistribution.from_dict(d)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from None


def _array(x, path, ndim=None) -> np.ndarray:
    try:
        a = np.asarray(x, dtype=float)
    except (ValueError, TypeError):
        raise ConfigError("not a numeric array", path) from None
    if ndim is not None and a.ndim != ndim:
        raise ConfigError(f"expected a {ndim}-d array, got {a.ndim}-d", path)
    if not np.all(np.isfinite(a)):
        raise ConfigError("non-finite entry", path)
    return a


def _base_problem(cfg: dict) -> SteeringProblem:
    sysd = cfg.get("system")
    if sysd is None:
        raise ConfigError("missing", "system")
    if not isinstance(sysd, dict):
        raise ConfigError("expected an object", "system")
    if "builder" in sysd:
        _check_keys(sysd, {"builder", "params"}, "system")
        builder = sysd["builder"]
        if builder not in _BUILDER_PARAMS:
            raise ConfigError(f"unknown builder {builder!r}; expected one of {sorted(_BUILDER_PARAMS)}",
                              "system.builder")
        params = dict(sysd.get("params", {}))
        _check_keys(params, _BUILDER_PARAMS[builder], "system.params")
        for key in ("psi", "noise", "v_dist"):
            if key in params:
                params[key] = _dist(params[key], f"system.params.{key}")
        try:
            if builder == "spacecraft":
                regime = params.pop("regime", None)
                if regime is not None:
                    return spacecraft_regime(regime, **params)
                return build_spacecraft(**params)
            return build_bicycle(**params)
        except ProblemError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"system.{exc.path}" if exc.path else "system") from None
        except TypeError as exc:
            raise ConfigError(str(exc), "system.params") from None
    _check_keys(sysd, {"a_bar", "b_bar", "d_bar", "a_tilde", "b_tilde", "d_tilde"}, "system")
    mats = {}
    for key in ("a_bar", "b_bar", "d_bar"):
        if key not in sysd:
            raise ConfigError("missing", f"system.{key}")
        mats[key] = _array(sysd[key], f"system.{key}", 2)
    for key in ("a_tilde", "b_tilde", "d_tilde"):
        mats[key] = tuple(_array(m, f"system.{key}[{j}]", 2) for j, m in enumerate(sysd.get(key, [])))
    try:
        system = UncertainSystem(**mats)
    except ValueError as exc:
        raise ConfigError(str(exc), "system") from None
    missing = [k for k in ("parameters", "horizon", "mu0", "sigma0", "mu_f", "sigma_f") if k not in cfg]
    if missing and system.n_p == 0 and missing == ["parameters"]:
        missing = []
    if missing:
        raise ConfigError("missing", missing[0])
    n_x, n_u = system.n_x, system.n_u
    return SteeringProblem(
        system, [ParameterDistribution.gaussian(1.0)] * system.n_p, int(cfg["horizon"]),
        mu0=np.zeros(n_x), sigma0=np.zeros((n_x, n_x)), mu_f=np.zeros(n_x), sigma_f=np.eye(n_x),
        Q=DEFAULT_Q * np.eye(n_x), R=DEFAULT_R * np.eye(n_u), name=cfg.get("name", "problem"))


def problem_from_dict(cfg: dict) -> SteeringProblem:
    _check_keys(cfg, _TOP_KEYS, "")
    base = _base_problem(cfg)
    changes = {}
    if "parameters" in cfg:
        if not isinstance(cfg["parameters"], list):
            raise ConfigError("expected a list", "parameters")
        changes["params"] = [_dist(d, f"parameters[{j}]") for j, d in enumerate(cfg["parameters"])]
    if "noise" in cfg:
        changes["noise"] = _dist(cfg["noise"], "noise")
    if "horizon" in cfg:
        h = cfg["horizon"]
        if not isinstance(h, int) or isinstance(h, bool) or h < 0:
            raise ConfigError("must be a nonnegative integer", "horizon")
        changes["horizon"] = h
    for key, nd in (("mu0", 1), ("sigma0", 2), ("mu_f", 1), ("sigma_f", 2), ("Q", 2), ("R", 2)):
        if key in cfg:
            changes[key] = _array(cfg[key], key, nd)
    if "terminal_mode" in cfg:
        if cfg["terminal_mode"] not in (TERMINAL_PSD, TERMINAL_EQUALITY):
            raise ConfigError(f"must be {TERMINAL_PSD!r} or {TERMINAL_EQUALITY!r}", "terminal_mode")
        changes["terminal_mode"] = cfg["terminal_mode"]
    if "terminal_index" in cfg:
        changes["terminal_index"] = [int(i) for i in cfg["terminal_index"]]
    if "gain_mask" in cfg:
        changes["gain_mask"] = np.asarray(cfg["gain_mask"], dtype=bool)
    if "plot_index" in cfg:
        changes["plot_index"] = [int(i) for i in cfg["plot_index"]]
    if "name" in cfg:
        changes["name"] = str(cfg["name"])
    if "chance_constraints" in cfg:
        ccs = []
        for i, c in enumerate(cfg["chance_constraints"]):
            path = f"chance_constraints[{i}]"
            _check_keys(c, {"kind", "alpha", "beta", "delta"}, path)
            for key in ("alpha", "beta", "delta"):
                if key not in c:
                    raise ConfigError("missing", f"{path}.{key}")
            try:
                ccs.append(ChanceConstraint(_array(c["alpha"], f"{path}.alpha", 1), float(c["beta"]),
                                            float(c["delta"]), c.get("kind", "state")))
            except ProblemError as exc:
                raise ConfigError(str(exc).split(": ", 1)[-1], f"{path}.{exc.path}") from None
        changes["chance_constraints"] = ccs
    try:
        return base.replace(**changes)
    except ProblemError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.path) from None


def config_from_dict(cfg: dict, source: Optional[str] = None) -> ScenarioConfig:
    from .scp import ScpSettings
    from .solver import SolverSettings

    problem = problem_from_dict(cfg)
    solver_d = cfg.get("solver", {})
    _check_keys(solver_d, _SOLVER_KEYS, "solver")
    scp_d = cfg.get("scp", {})
    _check_keys(scp_d, _SCP_KEYS, "scp")
    try:
        solver = SolverSettings(**solver_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "solver") from None
    try:
        scp = ScpSettings(solver=solver, **scp_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "scp") from None
    mc = {"samples": 10000, "seed": 0, "ellipse_points": 64, "ellipse_sigma": 2.0, "trajectory_dump": 0}
    mc_d = cfg.get("mc", {})
    _check_keys(mc_d, _MC_KEYS, "mc")
    mc.update(mc_d)
    if not isinstance(mc["samples"], int) or mc["samples"] < 2:
        raise ConfigError("must be an integer >= 2", "mc.samples")
    guess = cfg.get("initial_guess")
    if guess is not None and source is not None:
        guess = str((Path(source).parent / guess).resolve())
    if guess is not None and not Path(guess).exists():
        raise ConfigError(f"file not found: {guess}", "initial_guess")
    return ScenarioConfig(problem, scp, mc, str(cfg.get("output_dir", "out")), guess, source)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", "config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "config") from None
    return config_from_dict(cfg, str(path))
