import json

import pytest

from modlock import errors
from modlock.cli import main

BASE_CFG = """\
model.family = vdp_laser
control.alpha = 100.0
control.gamma = 0.1
"""

# mu = 0.05, Delta at the case-I window midpoint (beta0 + mu^2 * -0.90494)
LOCKED_CFG = """\
model.family = vdp_laser
control.alpha = 100.0
control.beta  = 1.3786986
control.gamma = 5.0
"""

VALIDATE_CFG = """\
model.family = vdp_laser
control.alpha = 200.0
control.gamma = 2.0
"""


@pytest.fixture()
def base_cfg(tmp_path):
    path = tmp_path / "base.cfg"
    path.write_text(BASE_CFG, encoding="utf-8")
    return path


def run(args):
    return main([str(a) for a in args])


def test_exit_code_table_is_exhaustive():
    mapping = {
        errors.ConfigError: 2,
        errors.NoConvergenceError: 3,
        errors.BracketFailureError: 3,
        errors.DegenerateOrbitError: 3,
        errors.AssumptionViolationError: 4,
        errors.InvalidOrbitError: 4,
        errors.NondegeneracyError: 4,
        errors.IntegrationFailureError: 5,
        errors.InvalidFieldError: 5,
        errors.ContractViolationError: 1,
        errors.DomainError: 1,
        errors.BoundUnavailableError: 1,
    }
    for cls, code in mapping.items():
        assert cls.exit_code == code, cls


def test_cmd_orbit_outputs(base_cfg, tmp_path):
    out = tmp_path / "out"
    assert run(["orbit", "--config", base_cfg, "--out", out]) == 0
    payload = json.loads((out / "orbit.json").read_text())
    assert payload["hyperbolic"] is True
    assert abs(payload["T"] - 4.54986461) <= 1e-6
    assert abs(payload["alpha0"] - 2.0) <= 1e-6
    assert payload["trivial_multiplier_error"] <= 1e-6
    assert payload["normalization_residual"] <= 1e-6
    lines = (out / "orbit.csv").read_text().splitlines()
    header_comments = [ln for ln in lines if ln.startswith("#")]
    assert any("manifest:" in ln for ln in header_comments)
    data = [ln for ln in lines if not ln.startswith("#")]
    assert data[0] == "psi,x0,r,p_x0,p_r"
    assert len(data) == 1 + 512
    manifest = json.loads((out / "orbit_manifest.json").read_text())
    for name in manifest["outputs"]:
        text = (out / name).read_text()
        assert manifest["manifest_hash"] in text


def test_cmd_orbit_no_cycle_exit3(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(BASE_CFG + "model.eta = -0.1\n", encoding="utf-8")
    code = run(["orbit", "--config", cfg, "--out", tmp_path / "o"])
    assert code == 3


def test_cmd_orbit_malformed_config_exit2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("model.familly = vdp_laser\n", encoding="utf-8")
    code = run(["orbit", "--config", cfg, "--out", tmp_path / "o"])
    assert code == 2
    assert "model.familly" in capsys.readouterr().err


def test_cmd_gfun_outputs(base_cfg, tmp_path):
    out = tmp_path / "out"
    assert run(["gfun", "--config", base_cfg, "--out", out]) == 0
    payload = json.loads((out / "gfun.json").read_text())
    assert abs(payload["G_minus"] - (-1.95827494)) <= 1e-6
    assert abs(payload["G_plus"] - 0.14879718) <= 1e-6
    assert len(payload["singular_points"]) == 2
    lines = [ln for ln in (out / "gfun.csv").read_text().splitlines()
             if not ln.startswith("#")]
    assert lines[0] == "psi,G,dG"
    assert len(lines) == 1 + 512


def test_cmd_region_outputs(base_cfg, tmp_path):
    out = tmp_path / "out"
    assert run(["region", "--config", base_cfg, "--out", out,
                "--section", "alpha", "--var-steps", "512"]) == 0
    payload = json.loads((out / "region.json").read_text())
    assert payload["n_sqrt_branches"] == 2
    lines = [ln for ln in (out / "region.csv").read_text().splitlines()
             if not ln.startswith("#")]
    assert lines[0] == "beta,gamma,branch"


def test_cmd_region_beta_section(base_cfg, tmp_path):
    out = tmp_path / "out"
    assert run(["region", "--config", base_cfg, "--out", out,
                "--section", "beta", "--var-steps", "64"]) == 0
    lines = [ln for ln in (out / "region.csv").read_text().splitlines()
             if not ln.startswith("#")]
    assert lines[0] == "inv_alpha,gamma,branch"


def test_cmd_simulate_locked(tmp_path):
    cfg = tmp_path / "locked.cfg"
    cfg.write_text(LOCKED_CFG, encoding="utf-8")
    out = tmp_path / "out"
    assert run(["simulate", "--config", cfg, "--out", out, "--init-psi", "1.0"]) == 0
    payload = json.loads((out / "simulate.json").read_text())
    assert payload["classification"] == "locked"
    assert payload["sigma_hat"] is not None
    lines = [ln for ln in (out / "simulate.csv").read_text().splitlines()
             if not ln.startswith("#")]
    assert lines[0] == "t,psi1_hat,residual"
    assert len(lines) > 1000


def test_cmd_validate(tmp_path):
    cfg = tmp_path / "val.cfg"
    cfg.write_text(VALIDATE_CFG, encoding="utf-8")
    out = tmp_path / "out"
    assert run(["validate", "--config", cfg, "--out", out]) == 0
    payload = json.loads((out / "validate.json").read_text())
    assert payload["mean_rel_dev"] <= 0.2
    assert 0.2 <= payload["scaling_ratio"] <= 0.3


def test_cmd_sweep_determinism(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(LOCKED_CFG, encoding="utf-8")
    outs = []
    for name in ("o1", "o2"):
        out = tmp_path / name
        assert run(["sweep", "--config", cfg, "--out", out, "--seed", "7",
                    "--gamma-min", "3.0", "--gamma-max", "6.0",
                    "--gamma-steps", "2", "--beta-steps", "2",
                    "--budget-factor", "0.01", "--jobs", "2"]) == 0
        outs.append(out)
    csv1 = (outs[0] / "sweep.csv").read_bytes()
    csv2 = (outs[1] / "sweep.csv").read_bytes()
    assert csv1 == csv2
    j1 = json.loads((outs[0] / "sweep.json").read_text())
    j2 = json.loads((outs[1] / "sweep.json").read_text())
    assert j1 == j2
    lines = [ln for ln in csv1.decode().splitlines() if not ln.startswith("#")]
    assert lines[0] == ("alpha,beta,gamma,mu,Delta,classification,"
                        "theta_lock,drift_rate,predicted_inside")
    assert len(lines) == 1 + 4
