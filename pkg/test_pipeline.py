"""Run configuration, the LangGraph pipeline, experiments and the CLI."""

import json
from math import comb

import numpy as np
import pandas as pd
import pytest

import dataio
from config import load_run_config, parse_k
from errors import ConfigError, ParameterError, StageError
from experiments import (
    bench_command,
    combination_sweep,
    compare_modes,
    comparison_rows,
    learning_curve_run,
    mixing_report,
    sweep_trend,
)
from main import main
from models import BenchConfig, CvCell, CvReport, FeatureTable, IvaOptions, LabelVector, RunConfig
from pipeline_graph import CELLS_FILE, FUSED_FILE, MANIFEST_FILE, REPORT_FILE, config_hash, run_pipeline

N_MOLECULES = 60

INI = """\
[inputs]
A = A.csv
B = B.csv

[labels]
path = labels.csv
property = gap
units = eV

[fusion]
mode = iva
components = 3

[iva]
max_iters = 100

[cv]
repeats = 1
outer_folds = 2
seed = 5

[output]
dir = out
"""


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(0)
    S = rng.laplace(size=(3, N_MOLECULES))
    ids = [f"m{i:03d}" for i in range(N_MOLECULES)]
    for name, d in (("A", 4), ("B", 5)):
        data = rng.standard_normal((d, 3)) @ S + 0.01 * rng.standard_normal((d, N_MOLECULES))
        dataio.write_feature_table(FeatureTable.from_array(name, data, molecule_ids=ids), tmp_path / f"{name}.csv")
    # labels in a different row order than the tables
    order = rng.permutation(N_MOLECULES)
    pd.DataFrame({"id": [ids[i] for i in order], "gap": (S[0] + 0.5 * S[1])[order]}).to_csv(
        tmp_path / "labels.csv", index=False
    )
    (tmp_path / "run.ini").write_text(INI)
    return tmp_path


class TestConfig:
    def test_loads_sections_relative_to_file(self, workspace):
        cfg = load_run_config(workspace / "run.ini")
        assert cfg.inputs["A"] == workspace / "A.csv"
        assert cfg.out_dir == workspace / "out"
        assert (cfg.fusion.mode, cfg.fusion.components, cfg.fusion.iva.max_iters) == ("iva", 3, 100)
        assert (cfg.cv.repeats, cfg.cv.outer_folds, cfg.cv.seed) == (1, 2, 5)
        assert cfg.property == "gap" and cfg.units == "eV"

    def test_section_seeds_default_to_global_seed(self, workspace):
        cfg = load_run_config(workspace / "run.ini")
        assert cfg.fusion.iva.seed == cfg.seed == 0

    def test_cli_seed_replaces_section_seeds(self, workspace):
        cfg = load_run_config(workspace / "run.ini", {"seed": 9, "mode": "single:B"})
        assert cfg.seed == cfg.cv.seed == cfg.fusion.iva.seed == cfg.bench.seed == 9
        assert cfg.fusion.mode_string() == "single:B"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.ini")

    def test_invalid_value(self, workspace):
        (workspace / "bad.ini").write_text(INI.replace("repeats = 1", "repeats = 0"))
        with pytest.raises(ConfigError):
            load_run_config(workspace / "bad.ini")

    def test_missing_input_table(self, workspace):
        (workspace / "B.csv").unlink()
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(workspace / "run.ini")

    def test_parse_k(self):
        assert parse_k("2") == [2]
        assert parse_k("1-4") == [1, 2, 3, 4]
        assert parse_k("2, 5") == [2, 5]

    def test_config_hash_tracks_content(self, workspace):
        a = load_run_config(workspace / "run.ini")
        assert config_hash(a) == config_hash(load_run_config(workspace / "run.ini"))
        assert config_hash(a) != config_hash(load_run_config(workspace / "run.ini", {"seed": 1}))


class TestPipeline:
    def test_train_writes_report_artifacts_and_manifest(self, workspace):
        cfg = load_run_config(workspace / "run.ini")
        state = run_pipeline(cfg, "train")
        out = workspace / "out"
        for name in (REPORT_FILE, CELLS_FILE, MANIFEST_FILE, "reducers.json", "demixing.json"):
            assert (out / name).exists(), name

        report = state["report"]
        assert report.feature_set == "iva[A+B]"
        assert report.feature_dimension == 6
        assert report.n_used == N_MOLECULES
        assert len(pd.read_csv(out / CELLS_FILE)) == 2

        manifest = json.loads((out / MANIFEST_FILE).read_text())
        assert manifest["command"] == "train"
        assert manifest["config_hash"] == config_hash(cfg)
        assert manifest["dataset_dimensions"] == {"A": 4, "B": 5}
        assert "numpy" in manifest["versions"]

    def test_regular_mode_skips_final_fusion(self, workspace):
        cfg = load_run_config(workspace / "run.ini", {"mode": "regular"})
        state = run_pipeline(cfg, "train")
        assert state["report"].feature_dimension == 9
        assert "fitted" not in state or state["fitted"] is None
        assert not (workspace / "out" / "demixing.json").exists()

    def test_reruns_are_identical(self, workspace):
        first = run_pipeline(load_run_config(workspace / "run.ini"), "train")["report"]
        second = run_pipeline(load_run_config(workspace / "run.ini", {"out_dir": workspace / "again"}), "train")["report"]
        assert first == second

    def test_fuse_writes_fused_table(self, workspace):
        state = run_pipeline(load_run_config(workspace / "run.ini"), "fuse")
        fused = dataio.load_feature_table(workspace / "out" / FUSED_FILE)
        assert state["fitted"].dimension == 6
        assert fused.features[:2] == ["SCV1:A", "SCV1:B"]
        assert fused.n_molecules == N_MOLECULES
        assert "report" not in state or state["report"] is None

    def test_unknown_single_dataset_is_stage_tagged(self, workspace):
        cfg = load_run_config(workspace / "run.ini", {"mode": "single:C"})
        with pytest.raises(StageError) as exc:
            run_pipeline(cfg, "train")
        assert exc.value.stage == "cross_validate"

    def test_missing_labels_fail_in_load_stage(self, workspace):
        (workspace / "nolabels.ini").write_text(INI.replace("path = labels.csv\n", ""))
        with pytest.raises(StageError) as exc:
            run_pipeline(load_run_config(workspace / "nolabels.ini"), "train")
        assert exc.value.stage == "load_inputs"

    def test_mixing_report_from_iva_run(self, workspace):
        run_pipeline(load_run_config(workspace / "run.ini"), "train")
        report = mixing_report(workspace / "out")
        assert len(report.sources) == 2 * 3
        first = report.sources[0]
        assert (first.dataset, first.source) == ("A", 1)
        magnitudes = [abs(w.weight) for w in first.weights]
        assert len(magnitudes) == 4
        assert magnitudes == sorted(magnitudes, reverse=True)

    def test_mixing_report_needs_artifacts(self, tmp_path):
        with pytest.raises(ConfigError, match="missing"):
            mixing_report(tmp_path)

    def test_mixing_report_rejects_non_iva_run(self, workspace):
        run_pipeline(load_run_config(workspace / "run.ini", {"mode": "ica"}), "train")
        with pytest.raises(ParameterError, match="mode='ica'"):
            mixing_report(workspace / "out")


def _fake_report(mae: float, dimension: int = 1) -> CvReport:
    cells = [CvCell(repeat=0, fold=0, mae=mae, sigma=1.0, lambda_=1e-3, n_train=8, n_validation=1, n_test=1)]
    return CvReport.from_cells(cells, property_name="y", feature_set="fake", n_used=10, feature_dimension=dimension)


def _tables(names, n=40):
    rng = np.random.default_rng(1)
    return [FeatureTable.from_array(name, rng.standard_normal((2, n))) for name in names]


def _labels(n=40):
    return LabelVector(property_name="y", values=np.arange(n, dtype=float), molecule_ids=[f"mol{i + 1}" for i in range(n)])


class TestExperiments:
    def test_sweep_covers_every_combination(self):
        tables = _tables("ABCDE")
        calls = []

        def evaluate(members, labels, spec):
            calls.append((tuple(t.name for t in members), spec.mode))
            return _fake_report(len(members) + (0.5 if spec.mode == "iva" else 0.0), len(members))

        report = combination_sweep(tables, _labels(), 2, RunConfig(), evaluate)
        assert len(report.combinations) == comb(5, 2)
        assert len(calls) == 2 * comb(5, 2)
        assert report.combinations[0].members == ["A", "B"]
        assert report.summary["regular"].median == 2.0
        assert report.summary["iva"].median == 2.5

    def test_compare_modes_one_report_per_mode(self):
        seen = []

        def evaluate(members, labels, spec):
            seen.append(spec.mode_string())
            return _fake_report(1.0)

        modes = ["regular", "iva", "single:A"]
        reports = compare_modes(RunConfig(), _tables("AB"), _labels(), modes, evaluate)
        assert seen == modes
        assert [row["mean_mae"] for row in comparison_rows(reports)] == [1.0, 1.0, 1.0]

    def test_sweep_trend_slope(self):
        def evaluate(members, labels, spec):
            return _fake_report(10.0 - len(members))

        reports, slopes = sweep_trend(_tables("ABCD"), _labels(), [1, 2, 3], RunConfig(), evaluate)
        assert [len(r.combinations) for r in reports] == [4, 6, 4]
        assert slopes["regular"] == pytest.approx(-1.0)

    def test_sweep_k_out_of_range(self):
        with pytest.raises(ParameterError):
            combination_sweep(_tables("AB"), _labels(), 3, RunConfig(), lambda *a: _fake_report(1.0))

    def test_learning_curve_uses_nested_subsets(self):
        seen = []

        def evaluate(tables, labels, spec):
            seen.append(set(labels.molecule_ids))
            return _fake_report(10.0 * len(labels.molecule_ids) ** -0.5)

        report = learning_curve_run(
            RunConfig(), _tables("AB"), _labels(), sizes=[10, 20, 40], modes=["regular", "iva"], evaluate=evaluate,
        )
        assert seen[0] < seen[1] < seen[2]
        assert seen[:3] == seen[3:]
        assert [f.mode for f in report.fits] == ["regular", "iva"]
        assert report.fits[0].alpha == pytest.approx(-0.5)
        assert report.fits[0].C == pytest.approx(10.0)

    @pytest.mark.parametrize("sizes", [[20, 10], [10, 80]])
    def test_learning_curve_rejects_bad_sizes(self, sizes):
        with pytest.raises(ParameterError):
            learning_curve_run(RunConfig(), _tables("A"), _labels(), sizes, ["regular"], lambda *a: _fake_report(1.0))

    def test_bench_command_writes_rows_and_summary(self, tmp_path):
        bench = BenchConfig(K=2, P=2, N=300, seeds=2, iva=IvaOptions(max_iters=50))
        rows, summary = bench_command(bench, tmp_path)
        assert len(pd.read_csv(tmp_path / "bench.csv")) == len(rows) == 4
        assert len(pd.read_csv(tmp_path / "bench_timing.csv")) == 4
        assert set(json.loads((tmp_path / "bench_summary.json").read_text())["modes"]) == {"iva", "ica"}
        assert summary.paired.n == 2


class TestCli:
    def test_train(self, workspace, capsys):
        assert main(["train", "--config", str(workspace / "run.ini"), "--log-level", "WARNING"]) == 0
        assert "iva[A+B]" in capsys.readouterr().out
        assert (workspace / "out" / REPORT_FILE).exists()

    def test_seed_and_out_overrides(self, workspace):
        out = workspace / "seeded"
        assert main(["fuse", "--config", str(workspace / "run.ini"), "--seed", "3", "--out", str(out)]) == 0
        assert json.loads((out / MANIFEST_FILE).read_text())["seed"] == 3

    def test_featurize_from_smiles(self, tmp_path):
        (tmp_path / "mols.smi").write_text("C\tmethane\nCO\tmethanol\nCC#N\tacetonitrile\n")
        (tmp_path / "feat.ini").write_text("[featurize]\nsmiles = mols.smi\nfeaturizations = sob, we\n")
        assert main(["featurize", "--config", str(tmp_path / "feat.ini"), "--out", str(tmp_path / "tables")]) == 0
        sob = dataio.load_feature_table(tmp_path / "tables" / "SOB.csv")
        assert sob.molecule_ids == ["methane", "methanol", "acetonitrile"]
        assert dataio.load_feature_table(tmp_path / "tables" / "WE.csv").n_features == 6

    def test_report_after_iva_train(self, workspace, capsys):
        ini = str(workspace / "run.ini")
        assert main(["train", "--config", ini]) == 0
        assert main(["report", "--config", ini, "--top", "2"]) == 0
        assert "A source 1" in capsys.readouterr().out
        assert (workspace / "out" / "mixing_weights.csv").exists()

    def test_bench(self, tmp_path):
        (tmp_path / "bench.ini").write_text("[bench]\nK = 2\nP = 2\nN = 200\n")
        assert main(["bench", "--config", str(tmp_path / "bench.ini"), "--seeds", "2", "--out", str(tmp_path)]) == 0
        assert len(pd.read_csv(tmp_path / "bench.csv")) == 4

    def test_bad_arguments_exit_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--no-such-flag"])
        assert exc.value.code == 1

    def test_unknown_command_exit_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["explode"])
        assert exc.value.code == 1

    def test_pipeline_errors_exit_2(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.ini")]) == 2

    def test_unwritable_output_exit_2(self, tmp_path):
        (tmp_path / "mols.smi").write_text("C\tmethane\nCO\tmethanol\n")
        (tmp_path / "feat.ini").write_text("[featurize]\nsmiles = mols.smi\nfeaturizations = sob\n")
        (tmp_path / "taken").write_text("not a directory")
        assert main(["featurize", "--config", str(tmp_path / "feat.ini"), "--out", str(tmp_path / "taken")]) == 2

    def test_stage_error_exit_2(self, workspace):
        assert main(["train", "--config", str(workspace / "run.ini"), "--mode", "single:C"]) == 2
