"""End-to-end tests of the command-line front-end.

Everything runs main() in-process (fast, same interpreter); one test goes
through the installed console script to check the packaging wiring.
"""

import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from slca.cli import main, write_objective_svg
from slca.core import read_matrix_csv, read_trace_csv
from slca.gain import load_gain_csv
from slca.generators import load_instance


def _files(dirpath):
    return sorted(os.listdir(dirpath))


def _read_bytes(dirpath):
    return {name: open(os.path.join(dirpath, name), "rb").read()
            for name in _files(dirpath)}


@pytest.fixture()
def small_instance(tmp_path):
    """Seeded 16x24 nonnegative instance shared by the solve tests."""
    out = tmp_path / "inst"
    rc = main(["gen", "gaussian", "--m", "16", "--n", "24", "--k", "3",
               "--seed", "11", "--out", str(out)])
    assert rc == 0
    return out


# ------------------------------------------------------------------ generate


def test_gen_gaussian_writes_complete_instance(tmp_path):
    out = tmp_path / "g"
    rc = main(["gen", "gaussian", "--m", "32", "--n", "64", "--k", "5",
               "--seed", "7", "--out", str(out)])
    assert rc == 0
    assert _files(out) == ["A.bin", "meta.json", "s.csv", "truth.csv"]
    problem, truth = load_instance(out)
    assert problem.A.shape == (32, 64)
    assert problem.s.shape == (32,)
    assert np.count_nonzero(truth.a_true) == 5
    meta = json.loads((out / "meta.json").read_text())
    assert meta["sign_mode"] == "nonneg"
    assert meta["truth"]["seed"] == 7


def test_gen_same_command_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    argv = ["gen", "gaussian", "--m", "12", "--n", "20", "--k", "2",
            "--seed", "5", "--out"]
    assert main(argv + [str(a)]) == 0
    assert main(argv + [str(b)]) == 0
    assert _read_bytes(a) == _read_bytes(b)


def test_gen_ricker_dictionary_size(tmp_path):
    out = tmp_path / "r"
    rc = main(["gen", "ricker", "--samples", "512", "--freqs", "8",
               "--centers", "64", "--out", str(out)])
    assert rc == 0
    problem, truth = load_instance(out)
    assert problem.A.shape == (512, 512)  # 8 freqs x 64 centers
    assert np.count_nonzero(truth.a_true) == 3
    assert np.all(truth.a_true >= 0)


def test_gen_sinusoid_writes_test_block_and_no_truth(tmp_path):
    out = tmp_path / "s"
    rc = main(["gen", "sinusoid", "--features", "40", "--train", "30",
               "--test", "20", "--active", "5", "--seed", "2",
               "--out", str(out)])
    assert rc == 0
    assert "A_test.bin" in _files(out) and "s_test.csv" in _files(out)
    assert "truth.csv" not in _files(out)
    problem, truth = load_instance(out)
    assert problem.A.shape == (30, 40)
    assert truth is None


def test_gen_cs_image_is_free_sign(tmp_path):
    out = tmp_path / "c"
    rc = main(["gen", "cs-image", "--n", "16", "--ratio", "0.5",
               "--wavelet", "haar", "--levels", "2", "--out", str(out)])
    assert rc == 0
    problem, truth = load_instance(out)
    assert problem.A.shape == (128, 256)
    assert problem.sign_mode == "free"
    assert truth.a_true.shape == (256,)


# --------------------------------------------------------------------- solve


def test_solve_two_solvers_writes_traces_and_summary(small_instance,
                                                     tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["solve", "--instance", str(small_instance), "--out", str(out),
               "--solver", "fista", "--solver", "slca-lif",
               "--t-max", "20"])
    assert rc == 0
    assert _files(out) == ["fista-coeffs.csv", "fista-trace.csv",
                           "slca-lif-coeffs.csv", "slca-lif-trace.csv",
                           "summary.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["solvers"]) == {"fista", "slca-lif"}
    assert summary["solvers"]["fista"]["solver_id"] == "fista"
    assert summary["solvers"]["slca-lif"]["solver_id"] == "slca-lif"
    for name in ("fista", "slca-lif"):
        times, objectives, nm, spikes = read_trace_csv(
            out / f"{name}-trace.csv")
        assert len(times) == summary["solvers"][name]["samples"]
        assert nm is not None  # instance has a ground truth
        coeffs = read_matrix_csv(out / f"{name}-coeffs.csv")
        assert coeffs.shape == (len(times), 24)
    # spiking run that long should land near the proximal optimum
    gap = (summary["solvers"]["slca-lif"]["objective_final"]
           - summary["solvers"]["fista"]["objective_final"])
    assert gap < 0.05
    # timing goes to stderr only
    assert "samples in" in capsys.readouterr().err


def test_solve_rerun_is_byte_identical(small_instance, tmp_path):
    argv_tail = ["--solver", "fista", "--solver", "slca-lif",
                 "--t-max", "10", "--formats", "csv,json,svg"]
    a, b = tmp_path / "ra", tmp_path / "rb"
    assert main(["solve", "--instance", str(small_instance),
                 "--out", str(a)] + argv_tail) == 0
    assert main(["solve", "--instance", str(small_instance),
                 "--out", str(b)] + argv_tail) == 0
    assert _read_bytes(a) == _read_bytes(b)
    assert "objectives.svg" in _files(a)


def test_solve_outputs_carry_no_wall_clock_fields(small_instance, tmp_path):
    out = tmp_path / "run"
    assert main(["solve", "--instance", str(small_instance),
                 "--out", str(out), "--solver", "ista"]) == 0

    def keys(node):
        if isinstance(node, dict):
            for k, v in node.items():
                yield k
                yield from keys(v)

    summary = json.loads((out / "summary.json").read_text())
    assert not any("wall" in k for k in keys(summary))
    header = (out / "ista-trace.csv").read_text().splitlines()[0]
    assert header == "time,objective,nmse_vs_truth,spikes_total"


def test_solve_free_instance_merges_split_decode(tmp_path):
    inst = tmp_path / "free"
    assert main(["gen", "gaussian", "--m", "16", "--n", "24", "--k", "3",
                 "--seed", "3", "--free", "--out", str(inst)]) == 0
    out = tmp_path / "run"
    rc = main(["solve", "--instance", str(inst), "--out", str(out),
               "--solver", "slca-lif", "--t-max", "20"])
    assert rc == 0
    coeffs = read_matrix_csv(out / "slca-lif-coeffs.csv")
    assert coeffs.shape[1] == 24  # merged back to signed width
    summary = json.loads((out / "summary.json").read_text())
    assert summary["sign_mode"] == "free"
    assert summary["solvers"]["slca-lif"]["feasible"]


def test_solve_lam_and_penalty_overrides(small_instance, tmp_path):
    out = tmp_path / "run"
    rc = main(["solve", "--instance", str(small_instance), "--out", str(out),
               "--solver", "fista", "--lam", "0.05",
               "--penalty", "elastic_net", "--rho", "0.7"])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["lam"] == 0.05
    assert summary["penalty"] == {"kind": "elastic_net", "rho": 0.7}


def test_solve_config_file_and_flag_precedence(small_instance, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text(
        "[solve]\n"
        f"instance = {small_instance}\n"
        f"out = {tmp_path / 'from-ini'}\n"
        "solvers = fista\n"
        "\n"
        "[prox]\n"
        "max-iters = 7\n"
        "tol = 0.0\n"
    )
    assert main(["solve", "--config", str(ini)]) == 0
    summary = json.loads((tmp_path / "from-ini" / "summary.json").read_text())
    assert summary["config"]["prox"]["max-iters"] == 7
    assert summary["solvers"]["fista"]["samples"] == 8  # iterates 0..7
    # explicit flags win over config-file keys
    out2 = tmp_path / "flagged"
    assert main(["solve", "--config", str(ini), "--out", str(out2),
                 "--max-iters", "3"]) == 0
    summary2 = json.loads((out2 / "summary.json").read_text())
    assert summary2["config"]["prox"]["max-iters"] == 3
    assert summary2["solvers"]["fista"]["samples"] == 4


def test_solve_ode_and_classic_agree_with_fista(small_instance, tmp_path):
    out = tmp_path / "run"
    rc = main(["solve", "--instance", str(small_instance), "--out", str(out),
               "--solver", "fista", "--solver", "lca-ode",
               "--solver", "slca-classic", "--ode-t-max", "30",
               "--t-max", "30"])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    f_star = summary["solvers"]["fista"]["objective_final"]
    assert abs(summary["solvers"]["lca-ode"]["objective_final"] - f_star) < 1e-6
    assert abs(summary["solvers"]["slca-classic"]["objective_final"] - f_star) < 1e-2


# ------------------------------------------------------------------- compare


def test_compare_merges_traces_and_draws_svg(small_instance, tmp_path):
    run = tmp_path / "run"
    assert main(["solve", "--instance", str(small_instance),
                 "--out", str(run), "--solver", "fista",
                 "--solver", "ista"]) == 0
    out = tmp_path / "cmp"
    rc = main(["compare", str(run / "fista-trace.csv"),
               str(run / "ista-trace.csv"), "--out", str(out)])
    assert rc == 0
    lines = (out / "compare.csv").read_text().strip().splitlines()
    assert lines[0] == "label,time,objective"
    labels = {ln.split(",")[0] for ln in lines[1:]}
    assert labels == {"fista", "ista"}
    svg = (out / "compare.svg").read_text()
    assert svg.startswith("<svg")
    assert svg.count("<polyline") == 2  # one line per trace
    assert "fista" in svg and "ista" in svg  # legend entries
    assert "1e" in svg  # log-scale objective ticks


def test_svg_clamps_non_positive_objectives(tmp_path):
    path = tmp_path / "p.svg"
    write_objective_svg(
        [("a", np.array([0.0, 1.0, 2.0]), np.array([1.0, 1e-3, 0.0]))], path)
    svg = path.read_text()
    assert svg.count("<polyline") == 1
    assert "NaN" not in svg and "inf" not in svg


# ---------------------------------------------------------------------- gain


def test_gain_writes_loadable_table(tmp_path):
    out = tmp_path / "lif.csv"
    rc = main(["gain", "--model", "lif-nondim", "--out", str(out),
               "--points", "16", "--sim-time", "5", "--discard-time", "1"])
    assert rc == 0
    table = load_gain_csv(out)
    assert table.model_id == "lif"
    assert table.currents.size == 16
    assert np.all(np.diff(table.rates) >= 0)


def test_gain_divergence_exits_two(tmp_path):
    rc = main(["gain", "--model", "wb", "--i-max", "1e20", "--points", "4",
               "--sim-time", "3", "--discard-time", "1",
               "--out", str(tmp_path / "wb.csv")])
    assert rc == 2


# ---------------------------------------------------------- validate-penalty


def test_validate_penalty_log_reports_rule3_failure(capsys):
    rc = main(["validate-penalty", "log", "--theta", "1", "--lambda", "2"])
    assert rc == 0  # the report is the product; FAIL is still a clean run
    out = capsys.readouterr().out
    assert "rule 1" in out and "PASS" in out
    assert "rule 3" in out and "FAIL" in out
    # the curvature bound fails as the coefficient approaches zero
    witness = float(out.split("witness grid point:")[1].split()[0])
    assert witness < 1e-3


def test_validate_penalty_l1_passes_all_rules(capsys):
    rc = main(["validate-penalty", "l1", "--lam", "0.5"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out


# -------------------------------------------------------------- error paths


@pytest.mark.parametrize("argv", [
    ["bogus-command"],
    ["gen", "gaussian", "--m", "8", "--n", "4", "--k", "1", "--out", "x"],
    ["solve", "--out", "x", "--solver", "fista"],          # no instance
    ["solve", "--instance", "/nonexistent", "--out", "x",
     "--solver", "fista"],
    ["solve", "--instance", "x", "--out", "y"],            # no solver
    ["validate-penalty", "elastic_net", "--lam", "1"],     # missing --rho
    ["gain", "--model", "no-such-preset", "--out", "x"],
])
def test_usage_errors_exit_one(argv, tmp_path, capsys):
    argv = [str(tmp_path / a) if a in ("x", "y") else a for a in argv]
    assert main(argv) == 1


def test_unknown_solver_name_exits_one(small_instance, tmp_path):
    rc = main(["solve", "--instance", str(small_instance),
               "--out", str(tmp_path / "o"), "--solver", "levenberg"])
    assert rc == 1


def test_unknown_format_exits_one(small_instance, tmp_path):
    rc = main(["solve", "--instance", str(small_instance),
               "--out", str(tmp_path / "o"), "--solver", "fista",
               "--formats", "csv,pdf"])
    assert rc == 1


# ----------------------------------------------------------- console script


def test_installed_console_script_runs():
    exe = shutil.which("slca")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip()


def test_module_invocation_matches_entry_point():
    proc = subprocess.run([sys.executable, "-m", "slca.cli",
                           "validate-penalty", "atan", "--eta", "2",
                           "--lam", "0.1"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "rule 3" in proc.stdout
