import json
import os

import pytest

from gremlab.harness import (EXPERIMENTS, ConfigError, Table, load_config, main, run_experiment, section,
                             table_csv)


def test_default_config_has_every_experiment():
    cp = load_config()
    for name in EXPERIMENTS:
        section(cp, name)
    assert section(cp, "run").int("seed") == 12345


def test_override_and_rejections(tmp_path):
    good = tmp_path / "good.ini"
    good.write_text("[pi-check]\nn2_max = 3\n")
    assert section(load_config(str(good)), "pi-check").int("n2_max") == 3
    for text in ("[nope]\nx = 1\n", "[pi-check]\nbogus = 1\n", "not an ini file"):
        bad = tmp_path / "bad.ini"
        bad.write_text(text)
        with pytest.raises(ConfigError):
            load_config(str(bad))


def test_typed_section_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[pi-check]\nn2_max = 2.5\n")
    with pytest.raises(ConfigError):
        run_experiment("pi-check", load_config(str(bad)))


def test_csv_schema_line_and_repr_floats():
    text = table_csv(Table("demo", ["a", "b"], [(1, 0.1 + 0.2)]))
    lines = text.splitlines()
    assert lines[0] == "# schema: gremlab.demo/1"
    assert lines[2] == "1,0.30000000000000004"


def test_cli_writes_outputs_and_manifest(tmp_path):
    out = tmp_path / "out"
    assert main(["pi-check", "--out", str(out)]) == 0
    d = out / "pi-check"
    man = json.loads((d / "manifest.json").read_text())
    assert man["passed"] and man["seed"] == 12345 and len(man["config_hash"]) == 64
    assert {f["file"] for f in man["files"]} == {"pi.csv"}
    assert not [f for f in os.listdir(out) if f.startswith(".")]


def test_cli_json_format(tmp_path):
    assert main(["ehrenfest-check", "--out", str(tmp_path), "--format", "json"]) == 0
    data = json.loads((tmp_path / "ehrenfest-check" / "ehrenfest.json").read_text())
    assert data["schema"] == "gremlab.ehrenfest/1" and data["rows"]


def test_cli_malformed_config_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[trap-sim]\njumps = lots\n")
    out = tmp_path / "out"
    assert main(["trap-sim", "--config", str(bad), "--out", str(out)]) != 0
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_cli_failing_check_exit_code(tmp_path):
    cfg = tmp_path / "strict.ini"
    cfg.write_text("[pi-check]\ntolerance = 0\n")
    assert main(["pi-check", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_seed_reproducible():
    a = run_experiment("trap-sim", seed=7)
    b = run_experiment("trap-sim", seed=7)
    assert [c.value for c in a.checks] == [c.value for c in b.checks]
