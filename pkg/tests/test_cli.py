import filecmp
import json
import os

import numpy as np
import pytest
from filelock import FileLock

from lcskit.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def test_pipeline_duffing(tmp_path):
    out = tmp_path / "run"
    assert run("--out", out, "flowmap", "--flow", "duffing", "--a", "0",
               "--b", "2", "--grid", "60x60", "--domain=-3,3,-3,3") == 0
    assert run("--out", out, "cg") == 0
    assert run("--out", out, "lines", "--kind", "strain", "--seed-at", "0,0",
               "--lmax", "6") == 0
    assert run("--out", out, "lcs", "--kind", "attracting",
               "--seeds", "10x10") == 0
    assert run("--out", out, "advect", "--flow", "duffing", "--a", "0",
               "--times", "0.4") == 0
    for name in ("flowmap.fmg1", "cg.cgf1", "ftle.csv", "lines.csv",
                 "lines.json", "lcs.json", "lcs.svg", "advected.json"):
        assert (out / name).exists(), name
    # every output stage carries a provenance sidecar
    for name in ("flowmap.fmg1", "cg.cgf1", "lines.json", "lcs.json",
                 "advected.json"):
        prov = json.loads((out / (name + ".prov.json")).read_text())
        assert prov["tool"] == "lcskit" and prov["config_hash"]


def test_rerun_is_noop_and_force_recomputes(tmp_path, capsys):
    out = tmp_path / "run"
    args = ("--out", out, "flowmap", "--flow", "duffing", "--a", "0",
            "--b", "1", "--grid", "20x20", "--domain=-1,1,-1,1")
    assert run(*args) == 0
    t0 = os.path.getmtime(out / "flowmap.fmg1")
    assert run(*args) == 0
    capsys.readouterr()
    assert os.path.getmtime(out / "flowmap.fmg1") == t0
    assert run("--force", *args) == 0
    assert os.path.getmtime(out / "flowmap.fmg1") >= t0


def test_flowmap_determinism(tmp_path):
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert run("--out", out, "flowmap", "--flow", "double-gyre",
                   "--a", "0", "--b", "5", "--grid", "40x20") == 0
        outs.append(out / "flowmap.fmg1")
    assert filecmp.cmp(*outs, shallow=False)


def test_backward_interval_accepted(tmp_path):
    out = tmp_path / "run"
    assert run("--out", out, "flowmap", "--flow", "duffing", "--b", "0",
               "--a", "2", "--grid", "12x12", "--domain=-1,1,-1,1") == 0
    from lcskit.flowmap import load_flowmap

    fm = load_flowmap(out / "flowmap.fmg1")
    assert fm.a == 2.0 and fm.b == 0.0


def test_stage_mismatch_exits_2(tmp_path):
    out = tmp_path / "run"
    assert run("--out", out, "flowmap", "--flow", "duffing", "--a", "0",
               "--b", "1", "--grid", "12x12", "--domain=-1,1,-1,1") == 0
    rc = run("--out", out, "cg", "--fm", out / "flowmap.fmg1")
    assert rc == 0
    rc = run("--out", out, "lines", "--cg", out / "flowmap.fmg1")
    assert rc == 2


def test_usage_error_exits_2(tmp_path):
    assert run("--out", tmp_path, "flowmap", "--a", "0", "--b", "1") == 2
    assert run("--out", tmp_path, "verify", "--flow", "abc", "--a", "0",
               "--b", "1", "--check", "theorem1") == 2


def test_lock_guard(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    with FileLock(out / ".lcskit.lock"):
        rc = run("--out", out, "flowmap", "--flow", "duffing", "--a", "0",
                 "--b", "1", "--grid", "12x12", "--domain=-1,1,-1,1")
    assert rc == 2


def test_config_file_with_flag_override(tmp_path):
    cfgpath = tmp_path / "cfg.json"
    cfgpath.write_text(json.dumps({
        "flow": "duffing", "a": 0.0, "b": 1.0, "grid": "12x12",
        "domain": "-1,1,-1,1"}))
    out = tmp_path / "run"
    assert run("--config", cfgpath, "--out", out, "flowmap") == 0
    from lcskit.flowmap import load_flowmap

    fm = load_flowmap(out / "flowmap.fmg1")
    assert fm.b == 1.0
    out2 = tmp_path / "run2"
    assert run("--config", cfgpath, "--out", out2, "flowmap",
               "--b", "1.5") == 0
    assert load_flowmap(out2 / "flowmap.fmg1").b == 1.5


def test_verify_lemma1_exit_codes(tmp_path):
    out = tmp_path / "v"
    rc = run("--out", out, "verify", "--flow", "duffing", "--a", "0",
             "--b", "2", "--check", "lemma1", "--n-seeds", "20")
    assert rc == 0
    doc = json.loads((out / "verify.json").read_text())
    assert doc["pass"] is True
    assert doc["checks"][0]["tol"] == 1e-3


def test_verify_failure_exits_1(tmp_path):
    # the quadrature/advection comparison genuinely fails at T=10 on a
    # coarse grid: useful as an honest nonzero-exit case
    out = tmp_path / "v"
    rc = run("--out", out, "verify", "--flow", "double-gyre", "--a", "0",
             "--b", "10", "--check", "appendixb", "--grid", "81x41",
             "--n-lines", "4")
    assert rc == 1
    doc = json.loads((out / "verify.json").read_text())
    assert doc["pass"] is False


def test_gridded_roundtrip_through_cli(tmp_path):
    import lcskit

    dg = lcskit.make_double_gyre(0.1, 0.1, 2 * np.pi / 10)
    g = lcskit.sample_to_grid(dg, (48, 24), np.linspace(0.0, 5.0, 6))
    data = tmp_path / "field.vgf"
    lcskit.save_gridded(g, data)
    out = tmp_path / "run"
    assert run("--out", out, "flowmap", "--data", data, "--a", "0.2",
               "--b", "4.5", "--grid", "24x12") == 0
    prov = json.loads((out / "flowmap.fmg1.prov.json").read_text())
    assert str(data) in prov["inputs"]


def test_demo_svg_deterministic(tmp_path):
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert run("--out", out, "demo", "--name", "duffing-manifolds") == 0
        outs.append(out / "duffing-manifolds.svg")
    assert filecmp.cmp(*outs, shallow=False)
