import json
from importlib import resources
from pathlib import Path

import pytest
import yaml

from ocppe.cli import main
from ocppe.config import load_config
from ocppe.errors import ConfigError

TINY = str(resources.files("ocppe") / "fixtures" / "tiny.csv")
FAST = {"basis": {"degree": 1}, "estimator": {"J": 10}}


def _cfg(tmp_path, name="run.yaml", **body):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(body))
    return str(p)


def _estimate_cfg(tmp_path, **extra):
    body = {"input": TINY, "intervention": {"kind": "location_shift"}, "indices": [[0.2, 0.4], [0.4, 0.6]],
            **FAST, **extra}
    return _cfg(tmp_path, **body)


def test_estimate_writes_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["estimate", _estimate_cfg(tmp_path, estimate={"naive": True}), "--out", str(out)]) == 0
    lines = (out / "estimates.csv").read_text().splitlines()
    assert lines[0] == "tau1,tau2,sigma,theta,se,lo,hi" and len(lines) == 3
    res = json.loads((out / "result_000.json").read_text())
    assert res["estimator"] == "dml" and res["tau1"] == 0.2
    assert (out / "naive_estimates.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "estimate" and len(man["config_hash"]) == 64


def test_estimate_is_byte_identical(tmp_path):
    cfg = _estimate_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["estimate", cfg, "--out", str(a)])
    main(["estimate", cfg, "--out", str(b)])
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_unknown_key_exit_2(tmp_path, capsys):
    assert main(["estimate", _estimate_cfg(tmp_path, bogus=1), "--out", str(tmp_path / "o")]) == 2
    assert "unknown keys" in capsys.readouterr().err


def test_bad_yaml_exit_2(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("input: [unclosed\n")
    assert main(["estimate", str(p)]) == 2


def test_bad_index_exit_2(tmp_path):
    cfg = _cfg(tmp_path, input=TINY, intervention={"kind": "location_shift"}, indices=[[0.5, 0.2]])
    assert main(["estimate", cfg, "--out", str(tmp_path / "o")]) == 2


def test_seed_required_for_bootstrap(tmp_path):
    cfg = _cfg(tmp_path, input=TINY, intervention={"kind": "location_shift"},
               test={"kind": "homogeneity_quantiles", "grid_step": 0.2, "B": 100}, **FAST)
    with pytest.raises(SystemExit) as exc:
        main(["test", cfg])
    assert exc.value.code == 2


def test_malformed_csv_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,d,x1\n1,2,3\n4,5\n")
    cfg = _cfg(tmp_path, input=str(bad), intervention={"kind": "location_shift"}, indices=[[0.2, 0.4]])
    assert main(["estimate", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "line 3" in capsys.readouterr().err


def test_numerical_failure_exit_4(tmp_path, capsys):
    cfg = _estimate_cfg(tmp_path, intervention={"kind": "expression", "expr": "d + delta*500*d**3"})
    assert main(["estimate", cfg, "--out", str(tmp_path / "o")]) == 4
    assert "NumericalError" in capsys.readouterr().err


def test_test_command_and_determinism(tmp_path):
    cfg = _cfg(tmp_path, input=TINY, intervention={"kind": "location_shift"},
               test={"kind": "homogeneity_quantiles", "grid_step": 0.2, "B": 100, "dump_draws": True}, **FAST)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["test", cfg, "--seed", "4", "--out", str(a)]) == 0
    assert main(["test", cfg, "--seed", "4", "--out", str(b)]) == 0
    for f in ("test_report.json", "bootstrap_draws.csv", "manifest.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    rep = json.loads((a / "test_report.json").read_text())
    assert rep["B"] == 100 and rep["seed"] == 4


def test_policy_command(tmp_path):
    cfg = _cfg(tmp_path, input=TINY, intervention={"kind": "location_shift"},
               policy={"tau1": 0.25, "tau2": 0.75, "K": 2, "B": 100,
                       "features": [{"column": "x1", "op": "gt", "threshold": 0}]}, **FAST)
    out = tmp_path / "p"
    assert main(["policy", cfg, "--seed", "1", "--threads", "1", "--out", str(out)]) == 0
    rep = json.loads((out / "welfare_report.json").read_text())
    assert len(rep["rules"]) == 4
    assert (out / "welfare.csv").read_text().startswith("rule,gain,se_analytic,se_bootstrap")


def test_simulate_rejects_small_oracle(tmp_path):
    cfg = _cfg(tmp_path, simulate={"reps": 1, "mc_size": 1000})
    assert main(["simulate", cfg, "--seed", "1", "--out", str(tmp_path / "s")]) == 2


def test_config_relative_input(tmp_path):
    (tmp_path / "data.csv").write_text(Path(TINY).read_text())
    rc = load_config(_cfg(tmp_path, input="data.csv", indices=[[0.1, 0.2]]))
    assert rc.input_path() == tmp_path / "data.csv"
    with pytest.raises(ConfigError):
        load_config(_cfg(tmp_path, "x.yaml", estimator={"link": "cauchit"}))


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    for p in sorted(root.glob("*.yaml")):
        load_config(p)
