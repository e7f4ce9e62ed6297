import json
import subprocess
import sys

import pytest

from cellopt.cli import main
from cellopt.pipeline import Axis, GridSpec, generate_dataset


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    g = GridSpec((Axis(60, 75, 4), Axis(1e14, 9e14, 3, "log10"), Axis(0.25, 0.5, 3),
                  Axis(6e16, 1.8e17, 3, "log10")))
    path = d / "small.csv"
    generate_dataset(g, "diode-composite").save(path)
    return path


def read(path):
    return json.loads(path.read_text())


def test_degrade_prints_multiple(tmp_path, capsys):
    assert main(["degrade", "--out-dir", str(tmp_path)]) == 0
    assert "7.5203 x N0" in capsys.readouterr().out
    out = read(tmp_path / "degrade.json")
    assert out["multiple"] == pytest.approx(7.52, abs=0.01)
    assert "timestamp" not in out
    assert "timestamp" in read(tmp_path / "degrade.meta.json")


def test_global_flags_before_or_after_subcommand(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "7", "--out-dir", str(a), "degrade"]) == 0
    assert main(["degrade", "--seed", "7", "--out-dir", str(b)]) == 0
    assert (a / "degrade.json").read_text() == (b / "degrade.json").read_text()
    assert read(a / "degrade.json")["seed"] == 7


def test_environment_supplies_defaults(tmp_path, monkeypatch):
    monkeypatch.setenv("CELLOPT_SEED", "13")
    monkeypatch.setenv("CELLOPT_OUT_DIR", str(tmp_path))
    assert main(["degrade"]) == 0
    assert read(tmp_path / "degrade.json")["seed"] == 13
    # explicit flag wins
    assert main(["degrade", "--seed", "5"]) == 0
    assert read(tmp_path / "degrade.json")["seed"] == 5


def test_optimize_reference_models(tmp_path):
    assert main(["optimize", "--out-dir", str(tmp_path), "--starts", "4"]) == 0
    out = read(tmp_path / "optimum.json")
    assert out["eta_pct"] == pytest.approx(17.13, abs=0.05)
    assert set(out["x_star"]) == {"x_pct", "n_abs", "t_abs", "n_etl"}


def test_optimize_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["optimize", "--out-dir", str(tmp_path / d), "--starts", "3",
                     "--w-eta", "0.7"]) == 0
    assert (tmp_path / "a/optimum.json").read_text() == (tmp_path / "b/optimum.json").read_text()


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["optimize", "--no-such-flag"]) == 2
    assert main(["optimize", "--out-dir", str(tmp_path), "--bounds", "x=1"]) == 2
    assert main(["reconstruct", "--out-dir", str(tmp_path), "--jsc", "20"]) == 2
    assert main(["degrade", "--threads", "0"]) == 2
    assert main([]) == 2
    capsys.readouterr()


def test_computation_failure_exits_1(tmp_path, capsys):
    # FF above the ideal-diode limit has no diode behind it
    rc = main(["reconstruct", "--out-dir", str(tmp_path), "--jsc", "20", "--voc", "1.0",
               "--ff", "99.5"])
    assert rc == 1
    assert "reconstruct failed" in capsys.readouterr().err


def test_reconstruct_from_metrics(tmp_path):
    assert main(["reconstruct", "--out-dir", str(tmp_path), "--jsc", "20", "--voc", "1.0",
                 "--ff", "80"]) == 0
    out = read(tmp_path / "reconstruct.json")
    assert out["j_ph"] >= 20 and 1 <= out["n"] <= 3
    assert (tmp_path / "reconstructed_jv.csv").exists()


def test_fit_sweep_ablate_classify(tmp_path, small_csv):
    o = str(tmp_path)
    assert main(["fit", "--data", str(small_csv), "--target", "eta", "--degree", "2",
                 "--out-dir", o]) == 0
    model = read(tmp_path / "eta_pr2.json")
    assert model["degree"] == 2
    assert main(["sweep-degrees", "--data", str(small_csv), "--max-degree", "3",
                 "--out-dir", o]) == 0
    assert [r["degree"] for r in read(tmp_path / "sweep_degrees.json")["rows"]] == [1, 2, 3]
    assert main(["ablate", "--data", str(small_csv), "--degree", "2", "--out-dir", o]) == 0
    assert len(read(tmp_path / "ablation.json")["rows"]) == 7
    assert main(["classify", "--data", str(small_csv), "--clusters", "4", "--epochs", "5",
                 "--out-dir", o, "--x", "70", "--nabs", "2e14", "--tabs", "0.4",
                 "--netl", "1e17"]) == 0
    c = read(tmp_path / "classify.json")
    assert c["prediction"] in ("Superior", "Inferior")
    assert c["superior_rows"] + c["inferior_rows"] == 108


def test_optimize_with_fitted_models(tmp_path, small_csv):
    o = str(tmp_path)
    for t in ("eta", "delta"):
        assert main(["fit", "--data", str(small_csv), "--target", t, "--degree", "2",
                     "--out-dir", o]) == 0
    assert main(["optimize", "--eta-model", str(tmp_path / "eta_pr2.json"),
                 "--delta-model", str(tmp_path / "delta_pr2.json"), "--starts", "2",
                 "--out-dir", o]) == 0
    assert read(tmp_path / "optimum.json")["converged"]


def test_simulate_composite(tmp_path):
    assert main(["simulate", "--backend", "diode-composite", "--x", "70", "--nabs", "2e14",
                 "--tabs", "0.4", "--netl", "1e17", "--out-dir", str(tmp_path)]) == 0


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cellopt.cli", "degrade", "--out-dir",
                        str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0 and "x N0" in r.stdout


def test_simulate_drift_diffusion_with_device_file(tmp_path):
    from cellopt.drift_diffusion import default_device, save_device
    dev = tmp_path / "dev.json"
    save_device(default_device(r_s=5.0), dev)
    args = ["simulate", "--x", "68.7", "--nabs", "1e14", "--tabs", "0.4", "--netl", "1e17"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--device", str(dev), "--out-dir", str(tmp_path / "b")]) == 0
    a, b = read(tmp_path / "a/simulate.json"), read(tmp_path / "b/simulate.json")
    assert b["ff_pct"] < a["ff_pct"]
    assert (tmp_path / "a/jv.csv").exists()
