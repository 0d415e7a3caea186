import json
import math

import numpy as np
import pandas as pd
import pytest

import app
from conftest import SMALL_GRID
from modules.acceptance import AcceptanceRunner
from modules.errors import ConfigError, InvalidInputError
from modules.experiment_config import ExperimentConfig
from modules.report_generator import ReportGenerator, ResultRecord, to_jsonable
from modules.sweep_runner import SweepRunner, monotone_errors_per_k


@pytest.fixture
def reporter(tmp_path):
    return ReportGenerator(tmp_path / "results", tmp_path / "audit")


@pytest.fixture(scope="module")
def acceptance():
    return AcceptanceRunner()


def _symbol_config(**sweep):
    return ExperimentConfig.from_dict({
        "name": "symbol_test",
        "kernel": {"kind": "bgk", "grid": SMALL_GRID},
        "sweep": {"operation": "symbol"} | sweep,
    })


# Config ---------------------------------------------------------------------------------


def test_defaults_and_hash():
    config = ExperimentConfig()
    assert config.config_hash() == ExperimentConfig.from_dict({}).config_hash()
    assert len(config.config_hash()) == 64
    changed = config.with_overrides("mc", seed=1)
    assert changed.mc["seed"] == 1
    assert changed.mc["particles"] == config.mc["particles"]
    assert changed.config_hash() != config.config_hash()


def test_partial_tree_is_merged():
    config = ExperimentConfig.from_dict({"equilibrium": {"alpha": 1.5}, "kernel": {"grid": {"panels": 8}}})
    assert config.equilibrium["alpha"] == 1.5
    assert config.equilibrium["r_cut"] == 1.0
    assert config.kernel["grid"] == {"panels": 8}
    assert ExperimentConfig.from_dict(config.to_dict()).config_hash() == config.config_hash()


def test_unknown_section():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"solvers": {}})


def test_load_templates_by_name():
    config = ExperimentConfig.load("reference_fractional")
    assert config.name == "reference_fractional"
    assert config.validate().kind == "fractional"
    assert ExperimentConfig.load("classical_maxwellian").validate().kind == "classical"
    assert ExperimentConfig.load("critical").validate().kind == "critical"


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "nowhere.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(broken)


def test_invalid_parameters_become_config_errors():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"equilibrium": {"alpha": 0.5}, "kernel": {"kind": "separable", "beta": 0.7}}).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"equilibrium": {"alpha": -1.0}}).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"equilibrium": {"alpha": 1.5},
                                    "kernel": {"kind": "physical", "beta": 1.2}}).build_kernel()


def test_critical_declaration_reaches_the_regime():
    spec = {
        "equilibrium": {"alpha": 1.5, "tail_exact": False,
                        "ell": {"kind": "tabulated", "table": [[1.0, 1.0], [10.0, 1.0]]}},
        "kernel": {"kind": "separable", "beta": 0.5},
    }
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(spec).build_regime()
    declared = ExperimentConfig.from_dict(spec | {"regime": {"critical_declared": True}})
    assert declared.build_regime().kind == "critical"


# Reports --------------------------------------------------------------------------------


def test_to_jsonable():
    value = to_jsonable({"z": complex(1.0, -2.0), "a": np.arange(2), "x": np.float64(math.inf), "b": np.bool_(True)})
    assert value == {"z": {"re": 1.0, "im": -2.0}, "a": [0, 1], "x": "inf", "b": True}


def test_csv_follows_registered_columns(reporter):
    path = reporter.export_to_csv([{"passed": True, "criterion": "A1", "extra": 1}], "acceptance", "a.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["criterion", "measured", "target", "tolerance", "passed", "runtime_s"]
    assert frame.loc[0, "criterion"] == "A1"


def test_records_are_appended(reporter):
    record = ResultRecord(config_hash="abc", module="symbol", operation="kappa", outputs={"kappa": math.pi})
    reporter.append_record(record)
    path = reporter.append_record(ResultRecord(config_hash="abc", module="sweep", operation="symbol",
                                               status="failed", error="InvalidInputError: eps"))
    rows = ReportGenerator.read_records(path)
    assert [r["module"] for r in rows] == ["symbol", "sweep"]
    assert rows[0]["outputs"]["kappa"] == pytest.approx(math.pi)
    assert rows[1]["status"] == "failed"
    assert rows[0]["code_version"]


def test_stamped_name():
    assert ReportGenerator.stamped_name("sweep", "0123456789abcdef", "csv") == "sweep_0123456789ab.csv"


# Sweeps ---------------------------------------------------------------------------------


def test_empty_axes_give_one_cell():
    cells = SweepRunner.cells(ExperimentConfig())
    assert cells == [{"cell": 0, "eps": 0.02, "k": 1.0, "p": 1.0}]


def test_cells_are_the_cross_product():
    cells = SweepRunner.cells(_symbol_config(eps=[0.1, 0.01], k=[0.5, 1.0], p=[0.0, 1.0]))
    assert len(cells) == 8
    assert [c["cell"] for c in cells] == list(range(8))


def test_symbol_sweep_writes_reports(reporter):
    config = _symbol_config(eps=[0.1, 0.01, 0.001], k=[1.0])
    records = SweepRunner(reporter, threads=2).run_sweep(config)
    assert [r.inputs["eps"] for r in records] == [0.1, 0.01, 0.001]
    assert not any(r.failed for r in records)
    assert monotone_errors_per_k(records) == {1.0: True}

    stem = f"sweep_{config.config_hash()[:12]}"
    frame = pd.read_csv(reporter.output_dir / f"{stem}.csv")
    assert list(frame.columns) == ["cell", "operation", "eps", "k", "p", "status", "value", "limit", "abs_err", "error"]
    summary = json.loads((reporter.output_dir / f"{stem}.json").read_text(encoding="utf-8"))
    assert summary["failed"] == 0
    assert "wall_time" not in summary["cells"][0]
    logs = list(reporter.audit_dir.glob("results_*.jsonl"))
    assert len(ReportGenerator.read_records(logs[0])) == 3


def test_failed_cells_are_recorded():
    records = SweepRunner(threads=1).run_sweep(_symbol_config(eps=[0.1, 1.5]))
    assert [r.status for r in records] == ["ok", "failed"]
    assert records[1].error.startswith("InvalidInputError")


def test_unknown_operation():
    config = ExperimentConfig.from_dict({"sweep": {"operation": "fourier"}})
    with pytest.raises(InvalidInputError):
        SweepRunner().run_sweep(config)


# Acceptance -----------------------------------------------------------------------------


def test_closed_form_and_regime_map_criteria(acceptance):
    report = acceptance.run_acceptance(["A1", "A11"])
    assert report["passed"]
    assert [r["criterion"] for r in report["criteria"]] == ["A1", "A11"]
    assert all(r["runtime_s"] >= 0 for r in report["criteria"])


def test_symbol_limit_criterion(acceptance):
    row = acceptance.a2_symbol_limit()
    assert row["passed"], row


def test_perturbed_kappa_fails_symbol_limit():
    report = AcceptanceRunner(kappa_perturbation=0.1).run_acceptance(["A2"])
    assert not report["passed"]
    assert report["kappa_perturbation"] == 0.1


def test_unknown_criterion_is_a_failed_row(acceptance):
    row = acceptance.run_acceptance(["A99"])["criteria"][0]
    assert not row["passed"]
    assert "KeyError" in row["details"]["error"]



def test_symbol_bound_criterion(acceptance):
    row = acceptance.a3_symbol_bound()
    assert row["passed"], row
    assert row["details"]["points"] == 100


@pytest.mark.slow
def test_coercivity_criterion(acceptance):
    row = acceptance.a4_coercivity()
    assert row["passed"], row
    assert row["details"]["M_b3"]["bgk"] == pytest.approx(2.0, rel=1e-12)


@pytest.mark.slow
def test_classical_criterion_moment(acceptance):
    row = acceptance.a8_classical()
    assert row["measured"] <= 1e-6
    assert all(np.isfinite(row["details"]["relative_l2"]))


@pytest.mark.slow
@pytest.mark.parametrize("criterion", ["A5", "A6", "A7", "A9"])
def test_limit_criteria_report_measurements(acceptance, criterion):
    row = acceptance.run_acceptance([criterion])["criteria"][0]
    assert "error" not in row["details"], row
    assert np.isfinite(row["measured"])
    assert row["tolerance"] is not None


@pytest.mark.slow
def test_monte_carlo_criterion_uses_three_standard_errors():
    row = AcceptanceRunner(mc_particles=20000).a10_monte_carlo()
    assert row["tolerance"] == "3 SE"
    cf = row["details"]["cf"]
    assert [c["k"] for c in cf] == [0.5, 1.0, 2.0]
    within = all(abs(c["abs_cf"] - c["target"]) <= 3.0 * c["se"] for c in cf)
    if not within:
        assert not row["passed"]
    for c in cf:
        if abs(c["abs_cf"] - c["target"]) <= 3.0 * c["se"]:
            assert c["within_bias_band"]


@pytest.mark.slow
def test_physical_kernel_criterion(acceptance):
    assert acceptance.a12_physical_kernel()["passed"]


# Command line ---------------------------------------------------------------------------


def test_cli_classify(capsys, tmp_path):
    code = app.main(["--out", str(tmp_path), "classify", "--alpha", "1.5", "--beta", "0.5"])
    assert code == app.EXIT_OK
    assert "regime: critical" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["classify", "--alpha", "0.5", "--beta", "0.7"],
    ["classify", "--alpha", "1.5"],
    ["classify", "--map", "--alpha-grid", "1.0,x"],
])
def test_cli_invalid_input(tmp_path, argv):
    assert app.main(["--out", str(tmp_path)] + argv) == app.EXIT_INVALID


def test_cli_regime_map(tmp_path):
    code = app.main(["--out", str(tmp_path), "classify", "--map", "--alpha-grid", "0.5,1.5,3", "--beta-grid", "-0.5,0.5"])
    assert code == app.EXIT_OK
    frame = pd.read_csv(tmp_path / "regime_map.csv")
    assert len(frame) == 6
    assert set(frame["kind"]) == {"fractional", "critical", "classical", "unsupported"}


def test_parse_helpers():
    assert app.parse_floats("0.1, 0.2") == [0.1, 0.2]
    assert app.parse_floats(None) == []
    assert app.parse_ell("power_log:1.5") == {"kind": "power_log", "param": 1.5}


def test_cli_negative_lists(tmp_path):
    assert app.attach_list_values(["--beta-grid", "-0.5,0.5"]) == ["--beta-grid=-0.5,0.5"]
    assert app.attach_list_values(["--alpha", "-1"]) == ["--alpha", "-1"]
    code = app.main(["--out", str(tmp_path), "classify", "--map", "--alpha-grid=0.5,1.5", "--beta-grid=-0.5,-0.2"])
    assert code == app.EXIT_OK
    assert len(pd.read_csv(tmp_path / "regime_map.csv")) == 4


def _cli_config(tmp_path, **sections):
    spec = {
        "name": "cli",
        "kernel": {"kind": "bgk", "grid": SMALL_GRID},
        "solver": {"box_length": 4.0 * math.pi, "modes": 8, "T": 0.5, "eps": 0.1},
        "mc": {"particles": 4000, "snapshots": [0.25, 0.5], "horizon": 0.5, "eps": 0.1, "block_size": 1024},
        "sweep": {"operation": "symbol", "eps": [0.1, 0.01], "k": [1.0], "p": [1.0]},
    } | sections
    path = tmp_path / "cli.json"
    path.write_text(json.dumps(spec), encoding="utf-8")
    return str(path)


def test_cli_kappa(capsys, tmp_path):
    out = tmp_path / "out"
    code = app.main(["--out", str(out), "--config", _cli_config(tmp_path), "kappa"])
    assert code == app.EXIT_OK
    assert "regime: fractional" in capsys.readouterr().out
    summary = json.loads(next(out.glob("kappa_*.json")).read_text(encoding="utf-8"))
    assert summary["kappa"]["kappa"] == pytest.approx(math.pi / 4.0)


def test_cli_solve_fractional_heat(tmp_path):
    out = tmp_path / "out"
    code = app.main(["--out", str(out), "--config", _cli_config(tmp_path), "solve", "--equation", "frac",
                     "--times", "0.25,0.5"])
    assert code == app.EXIT_OK
    summary = json.loads(next(out.glob("solve_frac_*.json")).read_text(encoding="utf-8"))
    assert summary["mass"][0] == pytest.approx(summary["mass"][1])
    frame = pd.read_csv(next(out.glob("density_frac_*.csv")))
    assert sorted(set(frame["time"])) == [0.25, 0.5]


def test_cli_solve_kinetic_compare(tmp_path):
    out = tmp_path / "out"
    code = app.main(["--out", str(out), "--config", _cli_config(tmp_path), "solve", "--compare"])
    assert code == app.EXIT_OK
    summary = json.loads(next(out.glob("solve_kinetic_*.json")).read_text(encoding="utf-8"))
    assert summary["kinetic"]["norm_final"] <= summary["kinetic"]["norm_initial"] * (1.0 + 1e-12)
    assert 0.0 <= summary["relative_l2_vs_limit"] < 1.0


def test_cli_mc_is_reproducible(tmp_path):
    config = _cli_config(tmp_path)
    tables = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = app.main(["--out", str(out), "--config", config, "--seed", "7", "--threads", "2", "mc",
                         "--k", "0.5,1.0"])
        assert code == app.EXIT_OK
        tables.append(pd.read_csv(next(out.glob("mc_cf_*.csv"))))
    pd.testing.assert_frame_equal(tables[0], tables[1])
    summary = json.loads(next((tmp_path / "a").glob("mc_*.json")).read_text(encoding="utf-8"))
    assert summary["particles"] == 4000
    assert list(tables[0].columns) == ["time", "k", "re_cf", "im_cf", "abs_cf", "se_abs", "limit"]
    assert set(tables[0]["k"]) == {0.5, 1.0}


def test_cli_sweep(capsys, tmp_path):
    out = tmp_path / "out"
    code = app.main(["--out", str(out), "--config", _cli_config(tmp_path), "sweep"])
    assert code == app.EXIT_OK
    assert "2 cells, 0 failed" in capsys.readouterr().out
    assert len(list(out.glob("sweep_*.csv"))) == 1
