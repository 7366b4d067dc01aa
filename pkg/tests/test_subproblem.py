import json

import numpy as np
import pytest

from covsteer.linearize import ReferencePoint
from covsteer.problem import Policy
from covsteer.scenarios import build_bicycle, spacecraft_regime
from covsteer.subproblem import VariableLayout, assemble, census, condense, extract_policy


@pytest.mark.parametrize("build", [lambda: spacecraft_regime("mixed"), build_bicycle,
                                   lambda: spacecraft_regime("mixed", horizon=3)])
def test_census_matches_layout(build):
    pr = build()
    assert VariableLayout(pr).size == census(pr.n_x, pr.n_u, pr.n_p, pr.horizon)


def test_spacecraft_census_value():
    assert census(4, 2, 1, 10) == 6588


@pytest.fixture(scope="module")
def spacecraft_ref():
    pr = spacecraft_regime("mixed")
    rng = np.random.default_rng(5)
    pol = Policy(0.2 * rng.normal(size=(10, 2, 4)), rng.normal(size=(10, 2)))
    return pr, ReferencePoint.at(pr, pol)


def test_reference_point_satisfies_equalities(spacecraft_ref):
    pr, ref = spacecraft_ref
    prog = assemble(pr, ref)
    x = prog.scaled(prog.layout.pack(ref.tables, ref.policy))
    r = prog.residual(x)
    defining = prog.meta["defining_rows"]
    assert np.abs(r[:defining]).max() <= 1e-9 * max(1.0, np.abs(prog.b[:defining]).max())


def test_reference_point_cost_is_exact_stage_cost(spacecraft_ref):
    pr, ref = spacecraft_ref
    prog = assemble(pr, ref, trust_weight=10.0)
    x = prog.scaled(prog.layout.pack(ref.tables, ref.policy))
    want = 0.0
    for k in range(pr.horizon):
        mu, S = ref.tables[k].mu, ref.tables[k].sigma
        L, v = ref.policy.L[k], ref.policy.v[k]
        um = L @ mu + v
        want += mu @ pr.Q @ mu + np.trace(S @ pr.Q) + um @ pr.R @ um + np.trace(pr.R @ L @ S @ L.T)
    assert prog.objective(x) == pytest.approx(want, rel=1e-10)  # epigraphs zero at the reference


def test_pack_extract_round_trip(spacecraft_ref):
    pr, ref = spacecraft_ref
    prog = assemble(pr, ref)
    x = prog.scaled(prog.layout.pack(ref.tables, ref.policy))
    pol, mom = extract_policy(prog, x)
    assert np.allclose(pol.L, ref.policy.L) and np.allclose(pol.v, ref.policy.v)
    assert np.allclose(mom["mu_N"], ref.tables[-1].mu)


def test_condense_reproduces_moments(spacecraft_ref):
    pr, ref = spacecraft_ref
    prog = assemble(pr, ref)
    c = condense(prog)
    x = prog.scaled(prog.layout.pack(ref.tables, ref.policy))
    assert np.allclose(c.expand(c.reduce(x)), x, atol=1e-9)
    # objective and remaining rows carry over
    u = c.reduce(x)
    assert 0.5 * u @ c.P @ u + c.q @ u + c.c0 == pytest.approx(prog.objective(x), rel=1e-9)
    assert np.allclose(c.b - c.A @ u, prog.residual(x)[c.defining:], atol=1e-9)


def test_cone_structure(spacecraft_ref):
    pr, ref = spacecraft_ref
    prog = assemble(pr, ref)
    assert prog.cones.psd == (4,)
    assert prog.cones.soc == (3, 9) * 10
    # trust cones hold at the reference with t = 0 and zero deviation
    x = prog.scaled(prog.layout.pack(ref.tables, ref.policy))
    r = prog.residual(x)
    lo = prog.cones.zero + prog.cones.nonneg
    hi = lo + sum(prog.cones.soc)
    assert np.allclose(r[lo:hi], 0.0, atol=1e-12)


def test_dump_is_json(spacecraft_ref, tmp_path):
    pr, ref = spacecraft_ref
    prog = assemble(pr, ref)
    prog.dump(tmp_path / "p.json")
    d = json.loads((tmp_path / "p.json").read_text())
    assert d["format"] == "covsteer-conic/1"
    assert d["n_vars"] == prog.n_vars and len(d["b"]) == prog.A.shape[0]
