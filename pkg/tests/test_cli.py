import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from mvstab.cli import main
from mvstab.config import DEFAULTS, SCHEMA, load_scenario, shipped_scenarios

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

SMALL_COS = """\
schema = 1
name = "cos_small"
analyses = ["invariant", "kernel", "spectrum", "resolvent"]

[dynamics]
dim = 1
drift = ["-x0"]
sigma = 1.4142135623730951
constants = { J = 1.0 }
interaction = [{ f = "J*cos(x0)", w = ["1"] }]

[mc]
M = 4000
seed = 3

[grid]
step = 0.05
T = 5.0
dt = 0.01
"""


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_shipped_scenarios_validate_against_schema():
    names = shipped_scenarios()
    assert {"cos_example", "kuramoto_sub", "kuramoto_super", "ou_free"} <= set(names)
    for path in names.values():
        jsonschema.validate(tomllib.loads(path.read_text()), SCHEMA)
        load_scenario(path)


def test_cos_example_is_stable(tmp_path, capsys):
    assert main(["run", "cos_example", "-o", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "spectrum: stable, λ′ = " in out
    lam = float(out.split("λ′ = ")[1].split()[0])
    assert 1.2 < lam < 1.4
    for f in ("fixed_points.csv", "theta.csv", "roots.csv", "omega.csv", "manifest.json"):
        assert (tmp_path / f).exists()


def test_kuramoto_super_verdict(tmp_path, capsys):
    assert main(["run", "kuramoto_super", "-o", str(tmp_path)]) == 0
    assert "torus: criterion violated, λ′ = -0.5" in capsys.readouterr().out
    assert (tmp_path / "torus_criterion.csv").exists()


def test_validate_subcommand_supercritical(tmp_path, capsys):
    assert main(["validate", "kuramoto_super", "-o", str(tmp_path)]) == 0
    assert "no decay observed" in capsys.readouterr().out
    assert (tmp_path / "order_parameter.csv").exists()
    assert (tmp_path / "order_parameter.svg").read_text().startswith("<svg")


def test_validate_free_ou(tmp_path, capsys):
    assert main(["validate", "ou_free", "-o", str(tmp_path)]) == 0
    assert "validate: PASS" in capsys.readouterr().out


def test_unparseable_drift(tmp_path, capsys):
    p = write(tmp_path, SMALL_COS.replace('drift = ["-x0"]', 'drift = ["-x0 +* 2"]'))
    assert main(["run", str(p)]) == 1
    err = capsys.readouterr().err
    assert "byte offset 5" in err and "dynamics" in err


def test_schema_errors_carry_field_paths(tmp_path, capsys):
    p = write(tmp_path, SMALL_COS.replace("M = 4000", "M = -1").replace("dim = 1", 'dim = "one"'))
    assert main(["run", str(p)]) == 1
    err = capsys.readouterr().err
    assert "mc.M" in err and "dynamics.dim" in err


def test_dependency_order_enforced(tmp_path, capsys):
    p = write(tmp_path, SMALL_COS.replace('["invariant", "kernel", "spectrum", "resolvent"]', '["spectrum"]'))
    assert main(["run", str(p)]) == 1
    assert "requires" in capsys.readouterr().err


def test_numerical_failure_names_the_analysis(tmp_path, capsys):
    text = SMALL_COS.replace('drift = ["-x0"]', 'drift = ["x0^3"]')
    p = write(tmp_path, text)
    assert main(["run", str(p), "-o", str(tmp_path / "o")]) == 2
    assert "invariant failed" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["error"].startswith("invariant failed")


def test_inconclusive_exit_code(tmp_path):
    p = write(tmp_path, """\
schema = 1
name = "tail"
analyses = ["torus"]
[torus]
W = "-6*cos(3*x0)"
n_max = 2
q = 16
""")
    assert main(["run", str(p), "-o", str(tmp_path / "o")]) == 3


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    assert main(["run", "does-not-exist.toml"]) == 1


def test_schema_and_examples(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    jsonschema.Draft202012Validator.check_schema(schema)
    assert main(["examples"]) == 0
    assert "kuramoto_super" in capsys.readouterr().out


def test_reruns_are_byte_identical_and_manifest_complete(tmp_path):
    p = write(tmp_path, SMALL_COS)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(p), "-o", str(a)]) == 0
    assert main(["run", str(p), "-o", str(b)]) == 0
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name
    manifest = json.loads((a / "manifest.json").read_text())
    cfg = manifest["resolved_config"]
    for section, values in DEFAULTS.items():
        assert section in cfg
        if isinstance(values, dict):
            assert set(values) <= set(cfg[section])
    assert manifest["seeds"] == {"mc": 3}
    assert len(manifest["sha256"]) == 64 and "numpy" in manifest["versions"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mvstab", "examples"], capture_output=True, text=True)
    assert res.returncode == 0 and "cos_example" in res.stdout
