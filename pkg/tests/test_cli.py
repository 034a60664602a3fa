import json

import pytest
import yaml

from dtnwaves.cli import RunConfig, UsageError, load_config, main, sha256


def run_cli(*args):
    return main([str(a) for a in args])


def test_dispersion_table(tmp_path):
    out = tmp_path / "out"
    assert run_cli("dispersion", "-o", out) == 0
    text = (out / "dispersion.csv").read_text()
    assert text.splitlines()[0].startswith("D,E,s,Z,r")
    assert "1.199678" in text
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "PASS"
    assert {o["path"] for o in manifest["outputs"]} == {"dispersion.csv"}


def test_missing_grid_file_is_a_usage_error(tmp_path):
    out = tmp_path / "out"
    code = run_cli("dispersion", "-o", out, "--set", "profile.grid=nowhere.csv")
    assert code == 2
    assert not out.exists()


def test_missing_config_file(tmp_path):
    assert run_cli("dispersion", "-c", tmp_path / "none.yaml", "-o", tmp_path / "o") == 2


@pytest.mark.parametrize("content", ["a: [1, 2", "bogus_key: 3", "E: -1", "criteria: [12]",
                                     "- just\n- a list\n"])
def test_bad_configs_exit_2(tmp_path, content):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(content)
    out = tmp_path / "out"
    assert run_cli("dispersion", "-c", cfg, "-o", out) == 2
    assert not out.exists()


def test_unknown_command_exits_2():
    assert run_cli("frobnicate") == 2


def test_config_round_trip(tmp_path):
    cfg = RunConfig(profile={"kind": "radial-bump", "D0": 1.0, "params": {"amplitude": 0.2}},
                    E=0.8, h=[0.2, 0.1])
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg.to_dict()))
    back = load_config(p)
    assert back == cfg
    assert back.hs == [0.2, 0.1]
    assert back.build_profile().kind == "radial-bump"


def test_overrides_apply_to_nested_keys():
    cfg = load_config(None, ["grid.N=64", "source.x0=[1, 2]", "E=2"])
    assert cfg.grid["N"] == 64 and cfg.source["x0"] == [1, 2] and cfg.E == 2
    with pytest.raises(UsageError):
        load_config(None, ["no-equals-sign"])


def test_unknown_profile_kind():
    cfg = load_config(None, ["profile.kind=spiral"])
    with pytest.raises(UsageError):
        cfg.build_profile()


def test_runs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--set", "grid.n_angles=16", "--set", "grid.T=1.0", "--set", "grid.dt=0.05",
            "--set", "profile.kind=radial-bump"]
    assert run_cli("rays", "-o", a, *args) == 0
    assert run_cli("rays", "-o", b, *args) == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    for name in ("rays.csv", "rays_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    listed = {o["path"]: o["sha256"] for o in ma["outputs"]}
    assert listed == {o["path"]: o["sha256"] for o in mb["outputs"]}
    assert listed["rays.csv"] == sha256(a / "rays.csv")
    assert ma["inputs_sha256"] == mb["inputs_sha256"]


def test_green_with_oracle_check(tmp_path):
    out = tmp_path / "g"
    code = run_cli("green", "-o", out, "--h", 0.05, "--verify",
                   "--set", "grid.X=3.5", "--set", "grid.N=32")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["criteria"] == {"7": "PASS"}
    meta = json.loads((out / "green.json").read_text())
    assert meta["shape"] == [32, 32]
    assert (out / "green_real.f64").stat().st_size == 32 * 32 * 8


def test_green_verify_needs_constant_depth(tmp_path):
    out = tmp_path / "g"
    assert run_cli("green", "-o", out, "--verify", "--set", "profile.kind=radial-bump") == 2


def test_failed_study_exits_1(tmp_path):
    out = tmp_path / "g"
    args = ["--set", "profile.kind=annular", "--set", "grid.N=16"]
    assert run_cli("green", "-o", out, *args) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "FAIL" and "trapping" in manifest["error"]


def test_verify_all_subset(tmp_path):
    out = tmp_path / "v"
    assert run_cli("verify-all", "-o", out, "--criteria", 1) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["criteria"] == {"1": "PASS"}
