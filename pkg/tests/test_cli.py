import json
import subprocess
import sys

import numpy as np
import pytest

from cotx.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, resolve, run
from cotx.color import ImageRGB, write_image
from cotx.core import ComposedMap, load_dataset
from cotx.synthetic import SyntheticSpec, reference_error


def sh(*argv):
    return run([str(a) for a in argv])


@pytest.fixture
def small_pair(tmp_path):
    prefix = tmp_path / "g"
    assert sh("synthetic", "--name", "gaussian_1d", "--n", 300, "--seed", 1, "--m2", 1.5, "--out-prefix", prefix) == 0
    return tmp_path / "g_source.csv", tmp_path / "g_target.csv"


def test_synthetic_then_fit_recovers_identity(tmp_path, capsys):
    u = tmp_path / "u"
    assert sh("synthetic", "--name", "unbalanced_identity", "--n", 2000, "--seed", 7, "--out-prefix", u) == 0
    assert (tmp_path / "u_source.csv").exists() and (tmp_path / "u_config.json").exists()
    out = tmp_path / "map.json"
    code = sh("fit", "--source", tmp_path / "u_source.csv", "--target", tmp_path / "u_target.csv",
              "--family", "composeflow", "--out", out, "--diagnostics", tmp_path / "diag.csv")
    assert code == EXIT_OK and out.exists()
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["layers"] >= 1
    tmap = ComposedMap.load(out)
    assert reference_error(tmap, SyntheticSpec("unbalanced_identity", 2000, seed=7)) <= 0.1


def test_apply_and_dimension_mismatch(tmp_path, small_pair):
    src, tgt = small_pair
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"outer_steps": 10}))
    assert sh("fit", "--source", src, "--target", tgt, "--out", tmp_path / "m.json", "--config", cfg) == 0
    assert sh("apply", "--map", tmp_path / "m.json", "--data", src, "--out", tmp_path / "o.csv") == 0
    mapped = load_dataset(tmp_path / "o.csv")
    assert mapped.n == 300 and mapped.dims == (1, 0)
    two = tmp_path / "two.csv"
    two.write_text("x,z1\n1,2\n3,4\n")
    assert sh("apply", "--map", tmp_path / "m.json", "--data", two, "--out", tmp_path / "o2.csv") == EXIT_DATA
    assert not (tmp_path / "o2.csv").exists()


def test_invalid_solver_config_is_usage_error(tmp_path, small_pair):
    src, tgt = small_pair
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lambda_growth": 0.9}))
    assert sh("fit", "--source", src, "--target", tgt, "--out", tmp_path / "m.json", "--config", cfg) == EXIT_USAGE
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert sh("fit", "--source", src, "--target", tgt, "--out", tmp_path / "m.json", "--config", cfg) == EXIT_USAGE
    cfg.write_text("{not json")
    assert sh("fit", "--source", src, "--target", tgt, "--out", tmp_path / "m.json", "--config", cfg) == EXIT_USAGE


def test_usage_and_data_errors(tmp_path, small_pair, capsys):
    src, tgt = small_pair
    assert sh("fit", "--source", src, "--target", tgt, "--out", tmp_path / "m.json", "--bogus", 1) == EXIT_USAGE
    assert sh("fit", "--source", src) == EXIT_USAGE
    assert sh() == EXIT_USAGE
    assert sh("frobnicate") == EXIT_USAGE
    assert sh("kl-estimate", "--source", tmp_path / "nope.csv", "--target", tgt) == EXIT_DATA
    assert sh("fit", "--source", src, "--target", tgt, "--out", tmp_path / "no" / "m.json") == EXIT_DATA
    assert "error" in capsys.readouterr().err


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"family": "composeflow", "seed": 3, "outer_steps": 12, "solver": {"lambda0": 2.0}}))
    cmd, args, solver, _ = resolve(["fit", "--source", "a", "--target", "b", "--out", "m", "--config", str(cfg),
                                    "--seed", "5"])
    assert args["family"] == "composeflow" and args["seed"] == 5
    assert solver.seed == 5 and solver.outer_steps == 12 and solver.lambda0 == 2.0
    cfg.write_text(json.dumps({"command": "apply"}))
    with pytest.raises(Exception):
        resolve(["fit", "--source", "a", "--target", "b", "--out", "m", "--config", str(cfg)])


def test_resolved_config_reruns_bit_exact(tmp_path, small_pair):
    src, tgt = small_pair
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"outer_steps": 15, "seed": 4}))
    assert sh("fit", "--source", src, "--target", tgt, "--out", tmp_path / "a.json", "--config", cfg) == 0
    resolved = tmp_path / "a.config.json"
    doc = json.loads(resolved.read_text())
    assert doc["command"] == "fit" and doc["solver"]["outer_steps"] == 15 and doc["solver"]["seed"] == 4
    assert sh("fit", "--config", resolved, "--out", tmp_path / "b.json") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_thread_settings(tmp_path, small_pair, monkeypatch):
    src, tgt = small_pair
    argv = ["kl-estimate", "--source", str(src), "--target", str(tgt)]
    assert resolve(argv + ["--threads", "2"])[3] == 2
    monkeypatch.setenv("COTX_THREADS", "3")
    assert resolve(argv)[3] == 3
    assert resolve(argv + ["--threads", "1"])[3] == 1
    monkeypatch.setenv("COTX_THREADS", "many")
    assert sh(*argv) == EXIT_USAGE
    monkeypatch.delenv("COTX_THREADS")
    assert sh(*argv, "--threads", 0) == EXIT_USAGE


def test_kl_estimate_prints_json(tmp_path, small_pair, capsys):
    src, tgt = small_pair
    assert sh("kl-estimate", "--source", src, "--target", tgt, "--iterations", 30, "--out", tmp_path / "kl.json") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == json.loads((tmp_path / "kl.json").read_text())
    assert doc["value"] >= 0


def test_treatment_command(tmp_path):
    assert sh("synthetic", "--name", "acic", "--n", 600, "--seed", 2, "--out-prefix", tmp_path / "t") == 0
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"outer_steps": 20}))
    out = tmp_path / "res"
    assert sh("treatment", "--table", tmp_path / "t_trial.csv", "--out-dir", out, "--config", cfg) == 0
    for name in ("unbalance.csv", "effects.csv", "diagnostics.csv", "map.json", "summary.json", "config.json"):
        assert (out / name).exists(), name
    header = (out / "effects.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["row_id", "x"] and header[-1] == "tau_hat" and len(header) == 11
    assert not (out / "patients.csv").exists()

    lines = (tmp_path / "t_trial.csv").read_text().splitlines()
    with_ids = [lines[0] + ",patient"] + [f"{row},{k % 5}" for k, row in enumerate(lines[1:])]
    (tmp_path / "p_trial.csv").write_text("\n".join(with_ids) + "\n")
    out2 = tmp_path / "res2"
    assert sh("treatment", "--table", tmp_path / "p_trial.csv", "--out-dir", out2, "--config", cfg,
              "--patient-id", "patient") == 0
    rows = (out2 / "patients.csv").read_text().splitlines()
    assert rows[0] == "patient_id,bin_lo,bin_hi,observed,predicted" and len(rows) == 1 + 5 * 20


def test_color_transfer_command(tmp_path):
    rng = np.random.default_rng(0)
    for name in ("a.png", "b.png"):
        write_image(tmp_path / name, ImageRGB(rng.integers(0, 256, (24, 24, 3)).astype(np.uint8)))
    code = sh("color-transfer", "--mode", "ot1d", "--src", tmp_path / "a.png", "--ref", tmp_path / "b.png",
              "--out", tmp_path / "c.png", "--superpixels", 16, "--dump-lab", tmp_path / "p.csv")
    assert code == 0 and (tmp_path / "c.png").exists() and (tmp_path / "c.config.json").exists()
    assert (tmp_path / "p.csv").read_text().startswith("image,L,a,b")
    assert sh("color-transfer", "--mode", "ot2d", "--src", tmp_path / "a.png", "--ref", tmp_path / "b.png",
              "--out", tmp_path / "d.png") == EXIT_USAGE


def test_module_entry_point_exit_code():
    proc = subprocess.run([sys.executable, "-m", "cotx", "fit", "--nope"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE and "error" in proc.stderr
