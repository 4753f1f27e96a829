import csv
import hashlib
import json
import subprocess
import sys

import pytest

from fracinv.cli import ConfigError, load_config, main


def _run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def test_unknown_kind_exits_2_with_usage(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--kind", "bogus"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_kind_in_config(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[run]\nkind = "bogus"\n')
    assert main(["--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "usage" in err and "run.kind" in err


@pytest.mark.parametrize(
    "text,field",
    [
        ('[layout]\nn_interior = "x"\n', "layout.n_interior"),
        ("[layout]\nbogus = 1\n", "layout.bogus"),
        ("[nowhere]\na = 1\n", "[nowhere]"),
        ('[system]\npreset = "brusselator"\n', "system.preset"),
        ("[run]\nworkers = 0\n", "run.workers"),
    ],
)
def test_config_diagnostics_name_field(tmp_path, text, field):
    cfg = tmp_path / "c.toml"
    cfg.write_text(text)
    with pytest.raises(ConfigError, match=field.replace("[", r"\[").replace("]", r"\]")):
        load_config(cfg)


def test_bad_layout_value_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[layout]\nn_interior = 2\n")
    code, _ = _run(tmp_path, "--config", str(cfg), "--kind", "forward")
    assert code == 2 and "layout" in capsys.readouterr().err


def test_forward_deterministic_and_manifest(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[system]\npreset = "gray_scott"\nparams = {m = 0.5}\n[source]\nprofile = "bump"\ntime = "t"\n[layout]\nn_interior = 16\nn_time = 16\n')
    code_a, a = _run(tmp_path, "--config", str(cfg), "--kind", "forward", "--seed", "9", name="a")
    code_b, b = _run(tmp_path, "--config", str(cfg), "--kind", "forward", "--seed", "9", name="b")
    assert code_a == code_b == 0
    assert (a / "state.csv").read_bytes() == (b / "state.csv").read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 9
    assert {"numpy", "scipy", "python", "fracinv"} <= set(manifest["versions"])
    assert manifest["wall_time_s"] >= 0
    listed = {e["path"]: e["sha256"] for e in manifest["outputs"]}
    on_disk = {p.name for p in a.iterdir()} - {"manifest.json"}
    assert set(listed) == on_disk
    for name, digest in listed.items():
        assert hashlib.sha256((a / name).read_bytes()).hexdigest() == digest


def test_invert_potential_noiseless(tmp_path):
    code, out = _run(tmp_path, "--kind", "invert-potential")
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["errors"]["rel_l2"] <= 0.05


def test_invert_potential_noisy_seeded(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[inverse]\nnoise = 0.001\n")
    _run(tmp_path, "--config", str(cfg), "--kind", "invert-potential", "--seed", "3", "--workers", "2", name="a")
    _run(tmp_path, "--config", str(cfg), "--kind", "invert-potential", "--seed", "3", name="b")
    assert (tmp_path / "a" / "potential_p.csv").read_bytes() == (tmp_path / "b" / "potential_p.csv").read_bytes()


@pytest.mark.parametrize("kind", ["adjoint", "linearize", "invert-interaction", "invert-order"])
def test_other_kinds_run(tmp_path, kind):
    code, out = _run(tmp_path, "--kind", kind)
    assert code == 0
    assert (out / "manifest.json").exists() and (out / "summary.json").exists()


def test_verify_defaults(tmp_path):
    code, out = _run(tmp_path, "--kind", "verify")
    assert code == 0
    with open(out / "verify.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["check", "status", "values"]
    assert len(rows) > 20 and all(r[1] == "pass" for r in rows[1:])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fracinv.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "--kind" in res.stdout
