import numpy as np
import pytest

from covsteer.moments import propagate
from covsteer.problem import ChanceConstraint, Policy, SteeringProblem
from covsteer.scenarios import spacecraft_regime
from covsteer.scp import INFEASIBLE_LINEARIZATION, ScpError, ScpSettings, ScpTrace, run, verify_feasibility
from covsteer.system import UncertainSystem


def deterministic_one_step():
    sys = UncertainSystem([[1.0, 0.5], [0.0, 1.0]], [[1.0, 0.0], [0.0, 2.0]], np.zeros((2, 1)))
    return SteeringProblem(sys, [], 1, mu0=[1.0, -1.0], sigma0=np.zeros((2, 2)), mu_f=[0.5, 2.0],
                           sigma_f=np.eye(2), Q=np.eye(2), R=np.eye(2))


def test_one_step_reaches_analytic_feedforward():
    pr = deterministic_one_step()
    res = run(pr)
    A, B = pr.system.a_bar, pr.system.b_bar
    u = np.linalg.solve(B, pr.mu_f - A @ pr.mu0)
    assert res.converged and len(res.trace) <= 2
    # x0 is deterministic, so only the applied input L0 x0 + v0 is determined
    assert np.allclose(res.policy.L[0] @ pr.mu0 + res.policy.v[0], u, atol=1e-6)


@pytest.fixture(scope="module")
def spacecraft_run():
    pr = spacecraft_regime("mixed")
    return pr, run(pr)


def test_spacecraft_converges_and_is_feasible(spacecraft_run):
    pr, res = spacecraft_run
    assert res.converged and len(res.trace) <= 60
    assert verify_feasibility(pr, res.policy).passed


def test_stationary_start_returns_immediately(spacecraft_run):
    pr, res = spacecraft_run
    again = run(pr, res.policy)
    assert len(again.trace) == 1 and again.converged
    assert again.trace[0].delta < 1e-4


def test_deterministic_trace(spacecraft_run):
    pr, res = spacecraft_run
    second = run(pr)
    assert second.trace.deltas == res.trace.deltas


def test_perturbed_policy_gap_matches_propagation(spacecraft_run):
    pr, res = spacecraft_run
    bad = res.policy.copy()
    bad.v[0] += 1.0
    rep = verify_feasibility(pr, bad)
    want = np.max(np.abs(propagate(pr, bad)[-1].mu - pr.mu_f))
    assert not rep.mean_ok
    assert rep.mean_gap == pytest.approx(want, rel=1e-12)


def test_converged_margins_nonnegative_with_chance_constraint():
    pr = spacecraft_regime("mixed").replace(
        chance_constraints=[ChanceConstraint([0, 0, 1, 0], 2.2, 0.1, "state")])
    res = run(pr)
    rep = verify_feasibility(pr, res.policy)
    assert res.converged and rep.passed
    assert rep.min_cantelli_margin >= -1e-6


def test_zero_noise_steered_exactly_has_nonnegative_margins():
    pr = deterministic_one_step().replace(
        chance_constraints=[ChanceConstraint([1.0, 0.0], 5.0, 0.1, "state")])
    res = run(pr)
    rep = verify_feasibility(pr, res.policy)
    assert rep.passed and rep.min_cantelli_margin >= 0


def test_first_iterate_infeasible_raises():
    # no control authority, terminal mean unreachable
    sys = UncertainSystem([[1.0]], [[0.0]], [[0.0]])
    pr = SteeringProblem(sys, [], 2, mu0=[1.0], sigma0=[[0.0]], mu_f=[3.0], sigma_f=[[1.0]], Q=[[1.0]], R=[[1.0]])
    with pytest.raises(ScpError, match="infeasible linearization"):
        run(pr)
    assert "adjust initial guess" in INFEASIBLE_LINEARIZATION


def test_settings_validation():
    with pytest.raises(ValueError):
        ScpSettings(eps=0)
    with pytest.raises(ValueError):
        ScpSettings(trust_weight=-1)


def test_guess_shape_checked():
    pr = deterministic_one_step()
    with pytest.raises(ValueError):
        run(pr, Policy(np.zeros((2, 2, 2)), np.zeros((2, 2))))


def test_trace_csv_and_monotone_iterations(spacecraft_run, tmp_path):
    _, res = spacecraft_run
    path = tmp_path / "trace.csv"
    res.trace.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# covsteer-csv v1 scp-trace"
    assert len(lines) == 2 + len(res.trace)
    t = ScpTrace()
    t.append(res.trace[0])
    with pytest.raises(ValueError):
        t.append(res.trace[0])
