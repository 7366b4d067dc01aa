import itertools

import numpy as np
import pytest

from covsteer.problem import Policy, SteeringProblem
from covsteer.system import ParameterDistribution as PD
from covsteer.system import UncertainSystem

ACCEPTANCE_LINES = []


def scalar_fixture(horizon: int = 2) -> SteeringProblem:
    """x+ = (1 + p) x + w with p, w = +-1 equiprobable, x0 = 1."""
    sys = UncertainSystem([[1.0]], [[0.0]], [[1.0]], ([[1.0]],))
    return SteeringProblem(sys, [PD.two_point(1.0)], horizon, mu0=[1.0], sigma0=[[0.0]], mu_f=[0.0],
                           sigma_f=[[10.0]], Q=[[0.01]], R=[[0.1]], noise=PD.two_point(1.0))


def hand_enumeration(problem: SteeringProblem, policy: Policy):
    """All equiprobable two-point outcomes rolled out by a plain python loop.

    Returns per-time arrays of outcomes ``x_t`` (S, n) and the parameter draws (S, n_p).
    """
    sys = problem.system
    N, n_p, n_w = problem.horizon, problem.n_p, problem.n_w
    pv = np.array([d.value for d in problem.params.dists])
    wv = problem.noise.value
    xs, ps = [[] for _ in range(N + 1)], []
    for signs in itertools.product((-1.0, 1.0), repeat=n_p + N * n_w):
        p = np.array(signs[:n_p]) * pv
        A = sys.a_bar + sum(p[j] * sys.a_tilde[j] for j in range(n_p))
        B = sys.b_bar + sum(p[j] * sys.b_tilde[j] for j in range(n_p))
        D = sys.d_bar + sum(p[j] * sys.d_tilde[j] for j in range(n_p))
        x = problem.mu0.copy()
        xs[0].append(x)
        for k in range(N):
            w = wv * np.array(signs[n_p + k * n_w:n_p + (k + 1) * n_w])
            x = A @ x + B @ (policy.L[k] @ x + policy.v[k]) + D @ w
            xs[k + 1].append(x)
        ps.append(p)
    return [np.array(x) for x in xs], np.array(ps)


def random_two_point_problem(rng, n_x, n_u, n_p, horizon) -> SteeringProblem:
    sys = UncertainSystem(
        rng.normal(size=(n_x, n_x)) * 0.6, rng.normal(size=(n_x, n_u)), rng.normal(size=(n_x, 1)),
        tuple(rng.normal(size=(n_x, n_x)) * 0.3 for _ in range(n_p)),
        tuple(rng.normal(size=(n_x, n_u)) * 0.3 for _ in range(n_p)),
        tuple(rng.normal(size=(n_x, 1)) * 0.3 for _ in range(n_p)))
    dists = [PD.two_point(float(rng.uniform(0.3, 1.5))) for _ in range(n_p)]
    return SteeringProblem(sys, dists, horizon, mu0=rng.normal(size=n_x), sigma0=np.zeros((n_x, n_x)),
                           mu_f=np.zeros(n_x), sigma_f=np.eye(n_x), Q=np.eye(n_x), R=np.eye(n_u),
                           noise=PD.two_point(1.0))


def random_policy(rng, problem, scale=0.3) -> Policy:
    N, n_u, n_x = problem.horizon, problem.n_u, problem.n_x
    return Policy(scale * rng.normal(size=(N, n_u, n_x)), rng.normal(size=(N, n_u)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
