import numpy as np
import pytest

from conftest import scalar_fixture
from covsteer.montecarlo import OracleError, enumerable, enumerate_exact, simulate
from covsteer.moments import propagate
from covsteer.problem import Policy, SteeringProblem
from covsteer.scenarios import spacecraft_regime
from covsteer.system import ParameterDistribution as PD
from covsteer.system import UncertainSystem


def test_same_seed_same_batch():
    pr = spacecraft_regime("mixed")
    a = simulate(pr, pr.zero_policy(), 500, seed=3)
    b = simulate(pr, pr.zero_policy(), 500, seed=3)
    c = simulate(pr, pr.zero_policy(), 500, seed=4)
    assert np.array_equal(a.trajectories, b.trajectories)
    assert not np.array_equal(a.trajectories, c.trajectories)


def test_zero_noise_rollout_is_deterministic():
    sys = UncertainSystem([[1.0, 0.1], [0.0, 1.0]], [[0.0], [0.1]], np.zeros((2, 1)))
    pr = SteeringProblem(sys, [], 5, mu0=[1.0, 0.0], sigma0=np.zeros((2, 2)), mu_f=[0, 0], sigma_f=np.eye(2),
                         Q=np.eye(2), R=np.eye(1))
    pol = Policy(np.full((5, 1, 2), -0.5), np.ones((5, 1)))
    batch = simulate(pr, pol, 10, seed=0)
    x = pr.mu0.copy()
    for k in range(5):
        x = sys.a_bar @ x + sys.b_bar @ (pol.L[k] @ x + pol.v[k])
        assert np.allclose(batch.trajectories[k + 1], x, atol=1e-14)


def test_sample_moments_within_standard_errors():
    pr = spacecraft_regime("mixed")
    rng = np.random.default_rng(2)
    pol = Policy(0.1 * rng.normal(size=(10, 2, 4)), rng.normal(size=(10, 2)))
    batch = simulate(pr, pol, 20000, seed=1)
    tabs = propagate(pr, pol)
    for k in (3, 10):
        assert np.all(np.abs(batch.mean[k] - tabs[k].mu) <= 4.5 * batch.mean_se(k))
        assert np.all(np.abs(batch.cov[k] - tabs[k].sigma) <= 4.5 * batch.cov_se(k) + 1e-12)


def test_enumeration_rejects_random_initial_state():
    pr = scalar_fixture().replace(sigma0=[[1.0]])
    assert not enumerable(pr)
    with pytest.raises(OracleError):
        enumerate_exact(pr, pr.zero_policy())


def test_explicit_distribution_cannot_be_sampled():
    moments = [PD.gaussian(1.0).raw_moment(m) for m in range(1, 7)]
    pr = scalar_fixture().replace(params=[PD.explicit(moments)], noise=PD.gaussian(1.0))
    with pytest.raises(OracleError):
        simulate(pr, pr.zero_policy(), 10)


def test_csv_outputs(tmp_path):
    pr = spacecraft_regime("mixed")
    batch = simulate(pr, pr.zero_policy(), 100, seed=0)
    batch.write_summary(tmp_path / "s.csv")
    batch.write_ellipses(tmp_path / "e.csv", (2, 3), 16, 2.0)
    batch.write_trajectories(tmp_path / "t.csv", 5)
    for name in ("s.csv", "e.csv", "t.csv"):
        assert (tmp_path / name).read_text().startswith("# covsteer-csv v1")


def test_ellipse_matches_covariance():
    pr = spacecraft_regime("mixed")
    batch = simulate(pr, pr.zero_policy(), 2000, seed=0)
    pts = batch.ellipse(10, (2, 3), 400, 1.0)
    S = batch.cov[10][np.ix_([2, 3], [2, 3])]
    d = pts - batch.mean[10][[2, 3]]
    # every point lies on the unit Mahalanobis contour
    assert np.allclose(np.einsum("ij,jk,ik->i", d, np.linalg.inv(S), d), 1.0, atol=1e-8)
