import json
from pathlib import Path

import numpy as np
import pytest

from covsteer.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from covsteer.problem import Policy
from covsteer.scenarios import ConfigError, build_bicycle, build_spacecraft, config_from_dict, spacecraft_regime

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_bicycle_golden_matrices():
    pr = build_bicycle()
    A = pr.system.a_bar
    assert A[1][0] == pytest.approx(0.5)
    assert A[2][1] == pytest.approx(1.5)
    assert A[1][3] == pytest.approx(-0.1)
    assert not pr.gain_mask[0, 3]


def test_spacecraft_regimes():
    assert not np.any(spacecraft_regime("additive").system.a_tilde[0])
    assert not np.any(spacecraft_regime("multiplicative").system.d_bar)
    pr = spacecraft_regime("mixed")
    assert pr.system.a_tilde[0][2, 1] == pytest.approx(-0.1)
    assert pr.system.d_bar[0, 0] == pytest.approx(0.04)
    with pytest.raises(Exception):
        spacecraft_regime("none")


def test_builder_rejects_bad_params():
    with pytest.raises(Exception):
        build_spacecraft(dt=-1)


@pytest.mark.parametrize("cfg,path", [
    ({"system": {"builder": "spacecraft"}, "scp": {"trust_wieght": 1}}, "scp.trust_wieght"),
    ({"system": {"builder": "rocket"}}, "system.builder"),
    ({"system": {"builder": "spacecraft", "params": {"dt": -1}}}, "system"),
    ({"system": {"builder": "spacecraft"}, "horizon": -2}, "horizon"),
    ({"system": {"builder": "spacecraft"}, "mu_f": [0, 0]}, "mu_f"),
    ({"system": {"builder": "spacecraft"}, "noise": {"kind": "gaussian", "std": 2.0}}, "noise"),
    ({"system": {"builder": "spacecraft"},
      "chance_constraints": [{"kind": "state", "alpha": [1, 0, 0, 0], "beta": 1, "delta": 1.5}]},
     "chance_constraints[0].delta"),
    ({"system": {"a_bar": [[1]], "b_bar": [[1]]}}, "system.d_bar"),
])
def test_config_errors_name_the_path(cfg, path):
    with pytest.raises(ConfigError) as info:
        config_from_dict(cfg)
    assert path in str(info.value)


def test_all_shipped_configs_load():
    from covsteer.scenarios import load_config
    for f in sorted(CONFIGS.glob("*.json")):
        load_config(f)


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"system": {"builder": "spacecraft"}, "Q": [[1]]}))
    assert main(["plan", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "Q" in capsys.readouterr().err
    assert main(["verify", str(tmp_path / "missing.json"), "p.json"]) == EXIT_CONFIG
    assert main(["plan"]) == EXIT_CONFIG


def test_cli_oracle_enumeration(capsys):
    assert main(["oracle", str(CONFIGS / "scalar_two_point.json")]) == EXIT_OK
    assert "enumeration oracle" in capsys.readouterr().out


def test_cli_plan_verify_simulate_round_trip(tmp_path, capsys):
    cfg = CONFIGS / "spacecraft_mixed.json"
    out = tmp_path / "run"
    assert main(["plan", str(cfg), "--out", str(out)]) == EXIT_OK
    for name in ("policy.json", "moments.csv", "scp_trace.csv"):
        assert (out / name).exists()
    pol = Policy.load(out / "policy.json")
    assert pol.L.shape == (10, 2, 4)
    assert main(["verify", str(cfg), str(out / "policy.json")]) == EXIT_OK
    assert main(["simulate", str(cfg), str(out / "policy.json"), "--out", str(out), "--samples", "500"]) == EXIT_OK
    assert (out / "mc_summary.csv").exists() and (out / "ellipses.csv").exists()
    assert main(["oracle", str(cfg), "--policy", str(out / "policy.json"), "--samples", "5000"]) == EXIT_OK
    # a perturbed policy fails verification
    pol.v[0] += 1.0
    pol.save(tmp_path / "bad.json")
    assert main(["verify", str(cfg), str(tmp_path / "bad.json")]) == EXIT_FAIL
    capsys.readouterr()


def test_cli_rejects_wrong_policy_shape(tmp_path):
    Policy(np.zeros((3, 1, 1)), np.zeros((3, 1))).save(tmp_path / "p.json")
    assert main(["verify", str(CONFIGS / "spacecraft_mixed.json"), str(tmp_path / "p.json")]) == EXIT_CONFIG
