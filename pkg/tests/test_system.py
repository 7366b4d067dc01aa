import numpy as np
import pytest

from covsteer.system import (MomentOrderError, ParameterDistribution as PD, ParameterSet, UncertainSystem,
                             count_multi_indices, multi_indices)


def test_gaussian_moments_are_double_factorials():
    d = PD.gaussian(2.0)
    assert [d.raw_moment(m) for m in range(7)] == [1, 0, 4, 0, 48, 0, 15 * 64]


def test_uniform_moments_match_quadrature():
    d = PD.uniform(-1.0, 1.0)
    xs = np.linspace(-1, 1, 200001)
    for m in range(7):
        assert d.raw_moment(m) == pytest.approx(np.trapezoid(xs ** m, xs) / 2, abs=1e-9)


def test_two_point_moments():
    d = PD.two_point(1.5)
    assert [d.raw_moment(m) for m in range(5)] == [1, 0, 2.25, 0, 1.5 ** 4]


def test_explicit_table_and_order_error():
    d = PD.explicit([0.0, 1.0, 0.0, 3.0])
    assert d.raw_moment(4) == 3.0
    with pytest.raises(MomentOrderError):
        d.raw_moment(5)


def test_distribution_dict_round_trip():
    for d in (PD.gaussian(0.5), PD.uniform(-2, 2), PD.two_point(3.0), PD.explicit([0, 1, 0, 3])):
        e = PD.from_dict(d.to_dict())
        assert [e.raw_moment(m) for m in range(5)] == [d.raw_moment(m) for m in range(5)]


def test_joint_moment_factorizes_over_independent_parameters():
    ps = ParameterSet((PD.gaussian(1.0), PD.uniform(-1, 1)))
    assert ps.joint_moment((0, 0, 1, 1)) == pytest.approx(1.0 * (1 / 3))
    assert ps.joint_moment((0, 1)) == 0.0
    assert ps.param_cov((0,), (0,)) == pytest.approx(1.0)


def test_multi_index_counts():
    for n_p in range(1, 4):
        for order in range(5):
            got = [mi for mi in multi_indices(n_p, order) if len(mi) == order]
            assert len(got) == count_multi_indices(n_p, order)
    assert multi_indices(2, 2) == [(), (0,), (1,), (0, 0), (0, 1), (1, 1)]


def test_realize_adds_parameter_terms():
    sys = UncertainSystem(np.eye(2), np.ones((2, 1)), np.zeros((2, 1)), (np.eye(2),), (np.ones((2, 1)),))
    A, B, D = sys.realize([2.0])
    assert np.allclose(A, 3 * np.eye(2)) and np.allclose(B, 3.0) and np.allclose(D, 0)


def test_system_shape_errors():
    with pytest.raises(ValueError):
        UncertainSystem(np.eye(2), np.ones((3, 1)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        UncertainSystem(np.eye(2), np.ones((2, 1)), np.zeros((2, 1)), (np.eye(2),), (np.ones((2, 1)),) * 2)
