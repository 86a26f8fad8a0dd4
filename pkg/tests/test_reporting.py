import asyncio
import json

import pytest

from dynimp.config import RunConfig
from dynimp.core.evaluation import AggregateResult, ExperimentResult
from dynimp.presentation.tables import experiment_report, format_ba, missingness_tier, render, table1, table2
from dynimp.utils.results_exporter import export_experiment, export_loss_log, manifest_path, write_manifest


def agg(method, level, mean=0.8, hw=0.01, seeds=3):
    return AggregateResult(method=method, level=level, mean_ba=mean, ci_half_width=hw, seeds=seeds)


class TestTables:
    @pytest.mark.parametrize("level, tier", [(0.1, "mild"), (0.2, "mild"), (0.3, "medium"), (0.4, "medium"),
                                             (0.5, "severe"), (0.6, "severe")])
    def test_missingness_tiers(self, level, tier):
        assert missingness_tier(level) == tier

    def test_format_ba(self):
        assert format_ba(0.83041, 0.007) == "0.8304 ± 0.0070"
        assert format_ba(None, None) == "n/a"

    def test_table1_layout(self):
        headers, rows = table1([agg("mean", 0.1), agg("dynimp-knn", 0.1, mean=0.9)], ["mean", "dynimp-knn"],
                               [0.1, 0.6])
        assert headers == ["level", "tier", "Filled Mean", "DynImp (kNN)"]
        assert rows[0] == ["0.1", "mild", "0.8000 ± 0.0100", "0.9000 ± 0.0100"]
        assert rows[1][2:] == ["n/a", "n/a"]

    def test_table2_only_lists_dynimp_variants(self):
        headers, rows = table2([agg("dynimp-zero", 0.3)], ["mean", "dynimp-zero", "dynimp-knn"], [0.3])
        assert headers == ["variant", "0.3"]
        assert [r[0] for r in rows] == ["DynImp (0-padding)", "DynImp (kNN)"]

    def test_render_aligns_columns(self):
        text = render((["a", "long header"], [["value", "x"]]))
        first, second = text.splitlines()
        assert first.index("long header") == second.index("x")

    def test_report_skips_table2_without_dynimp(self):
        report = experiment_report([agg("mean", 0.1)], ["mean"], [0.1], results=3, errors=0)
        assert "results=3 aggregates=1 errors=0" in report
        assert "variant" not in report


class TestExporter:
    def test_export_experiment(self, tmp_path):
        config = RunConfig(methods=["mean"], levels=[0.1], seeds=[0, 1])
        results = [ExperimentResult(method="mean", level=0.1, seed=0, ba=0.5, rmse=0.25),
                   ExperimentResult(method="mean", level=0.1, seed=1, error="ValueError: boom")]
        paths = asyncio.run(export_experiment(tmp_path, results, [agg("mean", 0.1, seeds=1)], config))
        assert [p.name for p in paths] == ["results.csv", "aggregate.csv", "table1.csv", "table2.csv"]
        lines = (tmp_path / "results.csv").read_text().splitlines()
        assert lines == [
            "# format_version=1",
            "method,level,seed,ba,rmse,error",
            "mean,0.1,0,0.5,0.25,",
            "mean,0.1,1,,,ValueError: boom",
        ]
        assert (tmp_path / "table2.csv").read_text().splitlines()[1] == "variant,0.1"

    def test_loss_log(self, tmp_path):
        path = asyncio.run(export_loss_log(tmp_path / "loss.csv", [0.5, 0.25]))
        assert path.read_text().splitlines()[1:] == ["epoch,loss", "1,0.5", "2,0.25"]

    def test_manifest(self, tmp_path):
        path = manifest_path(tmp_path / "model.ckpt")
        assert path.name == "model.ckpt.manifest.json"
        asyncio.run(write_manifest(path, "train", RunConfig(seed=9), 1.23456, inputs={"dataset": "d.db"},
                                   outputs=["model.ckpt"]))
        payload = json.loads(path.read_text())
        assert payload["format_version"] == 1
        assert payload["seed"] == 9
        assert payload["wall_clock_seconds"] == 1.235
        assert payload["inputs"] == {"dataset": "d.db"}
        assert payload["config"]["levels"] == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
