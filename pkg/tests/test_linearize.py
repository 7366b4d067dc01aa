import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covsteer.linearize import (ReferencePoint, Sym, cantelli_constraints, cantelli_margin, lin2, lin3,
                                linearize_dynamics)
from covsteer.moments import propagate
from covsteer.problem import ChanceConstraint, Policy
from covsteer.scenarios import build_bicycle, spacecraft_regime


def _target(blk, tables):
    tab = tables[blk.out_time]
    if blk.out_kind == "mean":
        return tab.mean[blk.out_a]
    if blk.out_kind == "xx":
        return tab.xx[blk.out_a, blk.out_b]
    return tab.xp[blk.out_a, blk.out_b]


def _random_policy(rng, pr, scale=0.2):
    pol = Policy(scale * rng.normal(size=pr.zero_policy().L.shape), rng.normal(size=pr.zero_policy().v.shape))
    pol.L[:, ~pr.gain_mask] = 0.0
    return pol


def test_lin2_scalar_example():
    assert lin2(Sym("x", [[2.0]]), Sym("y", [[3.0]])).evaluate({"x": 2.0, "y": 3.0}) == pytest.approx(6.0)


def test_lin3_scalar_example():
    X, Y, Z = Sym("X", [[1.0]]), Sym("Y", [[2.0]]), Sym("Z", [[3.0]])
    # X Y^ Z^ + X^ Y Z^ + X^ Y^ Z - 2 X^ Y^ Z^ at (1.5, 2, 3)
    assert lin3(X, Y, Z).evaluate({"X": 1.5, "Y": 2.0, "Z": 3.0}) == pytest.approx(9.0)


def test_lin_products_match_finite_difference_gradient(rng):
    Xh, Yh, Zh = rng.normal(size=(2, 3)), rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    X, Y, Z = Sym("X", Xh), Sym("Y", Yh), Sym("Z", Zh)
    expr = lin3(X, Y, Z)
    dX, dY, dZ = rng.normal(size=Xh.shape), rng.normal(size=Yh.shape), rng.normal(size=Zh.shape)
    h = 1e-6
    fd = ((Xh + h * dX) @ (Yh + h * dY) @ (Zh + h * dZ) - (Xh - h * dX) @ (Yh - h * dY) @ (Zh - h * dZ)) / (2 * h)
    lin = expr.evaluate({"X": Xh + dX, "Y": Yh + dY, "Z": Zh + dZ}) - Xh @ Yh @ Zh
    assert np.allclose(lin, fd, atol=1e-8)


@pytest.mark.parametrize("build", [lambda: spacecraft_regime("mixed"), build_bicycle])
def test_collapse_at_reference(build, rng):
    pr = build()
    pol = _random_policy(rng, pr)
    ref = ReferencePoint.at(pr, pol)
    worst = 0.0
    for blk in linearize_dynamics(pr, ref):
        tgt = _target(blk, ref.tables)
        worst = max(worst, np.abs(blk.evaluate(ref.tables, pol) - tgt).max() / max(1.0, np.abs(tgt).max()))
    assert worst <= 1e-12


@pytest.mark.parametrize("build", [lambda: spacecraft_regime("mixed"), build_bicycle])
def test_tangency_is_second_order(build, rng):
    pr = build()
    pol = _random_policy(rng, pr)
    ref = ReferencePoint.at(pr, pol)
    blocks = linearize_dynamics(pr, ref)
    dL, dv = rng.normal(size=pol.L.shape), rng.normal(size=pol.v.shape)
    dL[:, ~pr.gain_mask] = 0.0
    errs = []
    for h in (1e-3, 1e-4):
        p2 = Policy(pol.L + h * dL, pol.v + h * dv)
        tabs = propagate(pr, p2)  # moments move with the policy too
        errs.append(max(np.abs(blk.evaluate(tabs, p2) - _target(blk, tabs)).max() for blk in blocks))
    ratio = errs[0] / errs[1]
    assert 50 < ratio < 200, errs


def _cantelli_problem(kind):
    pr = spacecraft_regime("mixed")
    if kind == "state":
        cc = ChanceConstraint([0, 0, 1, 0], 2.2, 0.1, "state")
    else:
        cc = ChanceConstraint([1, 0], 3.0, 0.05, "input")
    return pr.replace(chance_constraints=[cc]), cc


@pytest.mark.parametrize("kind", ["state", "input"])
def test_cantelli_collapse(kind, rng):
    pr, cc = _cantelli_problem(kind)
    pol = _random_policy(rng, pr)
    ref = ReferencePoint.at(pr, pol)
    for blk in cantelli_constraints(pr, ref):
        k = blk.out_time
        tab = ref.tables[k]
        if kind == "state":
            mean, var = cc.alpha @ tab.mu, cc.alpha @ tab.sigma @ cc.alpha
        else:
            g = pol.L[k].T @ cc.alpha
            mean, var = cc.alpha @ (pol.L[k] @ tab.mu + pol.v[k]), g @ tab.sigma @ g
        assert blk.evaluate(ref.tables, pol)[0] == pytest.approx(-cantelli_margin(cc, mean, var), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(-1.0, 1.0), st.integers(0, 9))
def test_cantelli_surrogate_is_conservative(scale, shift, k):
    """The tangent of sqrt lies above sqrt, so the convex row is never looser than the true bound."""
    pr, cc = _cantelli_problem("state")
    rng = np.random.default_rng(int(1000 * scale) + k)
    ref = ReferencePoint.at(pr, _random_policy(rng, pr))
    blk = cantelli_constraints(pr, ref)[k]
    pol = Policy(ref.policy.L * scale, ref.policy.v + shift)
    tabs = propagate(pr, pol)
    tab = tabs[k]
    true = -cantelli_margin(cc, cc.alpha @ tab.mu, cc.alpha @ tab.sigma @ cc.alpha)
    assert blk.evaluate(tabs, pol)[0] >= true - 1e-12
