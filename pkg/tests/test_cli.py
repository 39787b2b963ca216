import csv
import json

import numpy as np
import pytest

from omicsmkl.cli import ConfigError, main, parse_config
from omicsmkl.data import load_views
from omicsmkl.methods import FittedModel


def _write_config(tmp_path, **overrides):
    cfg = {
        "schema_version": 1,
        "data": {"synthetic": {"generator": "blobs", "seed": 1, "n": 40, "classes": 2,
                               "dims": [4, 3], "informative_view_strength": [1.5, 1.0]}},
        "method": "svm_naive",
        "search": {"folds": 3, "params": {"C": [1, 10], "sigma": [0.05, 0.2]}},
        "seeds": [0, 1],
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


class TestConfig:
    def test_unknown_method_exit_2(self, tmp_path, capsys):
        path = _write_config(tmp_path, method="svm_magic")
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "field 'method'" in err and "line " in err

    def test_line_numbers(self):
        text = '{\n  "schema_version": 1,\n  "method": "svm_naive",\n  "bogus": 3\n}'
        with pytest.raises(ConfigError, match="line 4: field 'bogus'"):
            parse_config(text)
        with pytest.raises(ConfigError, match="line 3: invalid JSON"):
            parse_config('{\n  "a": \n}')

    def test_schema_version_required(self):
        with pytest.raises(ConfigError, match="schema_version"):
            parse_config('{"method": "svm_naive", "data": {"synthetic": {}}}')

    def test_missing_view_file(self, tmp_path):
        text = json.dumps({"schema_version": 1, "method": "svm_naive",
                           "data": {"views": [{"name": "a", "path": "nope.csv"}],
                                    "labels": "labels.csv"}})
        with pytest.raises(ConfigError, match="file not found"):
            parse_config(text, str(tmp_path))

    def test_deep_options_validated(self):
        text = json.dumps({"schema_version": 1, "method": "deep_mkl",
                           "data": {"synthetic": {"generator": "planted"}},
                           "deep": {"fusion": "max"}})
        with pytest.raises(ConfigError, match="field 'deep'"):
            parse_config(text)


class TestRun:
    def test_report_complete_and_deterministic(self, tmp_path):
        path = _write_config(tmp_path)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["run", "--config", str(path), "--out", str(out)]) == 0
            outs.append((out / "report.json").read_bytes())
        assert outs[0] == outs[1]
        report = json.loads(outs[0])
        assert [r["seed"] for r in report["per_seed"]] == [0, 1]
        for r in report["per_seed"]:
            assert set(r["metrics"]) == {"ACC", "AUC", "F1"}
        assert (tmp_path / "a" / "report.txt").read_text().startswith("Method")

    def test_overrides(self, tmp_path):
        path = _write_config(tmp_path)
        out = tmp_path / "o"
        assert main(["run", "--config", str(path), "--out", str(out), "--seed-list", "3",
                     "--train-fraction", "0.6", "--threads", "2"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert [r["seed"] for r in report["per_seed"]] == [3]
        assert main(["run", "--config", str(path), "--train-fraction", "1.5"]) == 2


class TestTrainPredict:
    def _files(self, tmp_path, generator="blobs"):
        data = tmp_path / "data"
        args = ["gen-synthetic", "--generator", generator, "--seed", "2", "--n", "40",
                "--out", str(data)]
        if generator == "blobs":
            args += ["--dims", "4,3", "--strength", "1.5,1.0"]
        assert main(args) == 0
        return data

    def _file_config(self, tmp_path, data, method="simplemkl_svm", **extra):
        cfg = {"schema_version": 1, "method": method,
               "data": {"views": [{"name": "view1", "path": str(data / "view1.csv")},
                                  {"name": "view2", "path": str(data / "view2.csv")}],
                        "labels": str(data / "labels.csv")},
               "params": {"C": 5.0, "sigma": 0.1}}
        cfg.update(extra)
        path = tmp_path / "train.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_round_trip_predictions(self, tmp_path):
        data = self._files(tmp_path)
        cfg = self._file_config(tmp_path, data)
        out = tmp_path / "model"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "fusion_trace.csv").exists()
        model = FittedModel.load(out / "model.json")
        ds = load_views([data / "view1.csv", data / "view2.csv"], data / "labels.csv")
        expected = model.predict(model.values_for(ds))
        scores = model.scores(model.values_for(ds))
        pred_path = tmp_path / "pred.csv"
        assert main(["predict", "--model", str(out / "model.json"), "--data",
                     str(data / "view2.csv"), str(data / "view1.csv"),
                     "--output", str(pred_path)]) == 0
        rows = list(csv.DictReader(pred_path.open()))
        assert [r["sample_id"] for r in rows] == list(ds.samples)
        assert [r["predicted_label"] for r in rows] == [model.class_names[p] for p in expected]
        got = np.array([[float(r[f"score_{c}"]) for c in model.class_names] for r in rows])
        assert got.tobytes() == scores.tobytes()

    def test_missing_view(self, tmp_path, capsys):
        data = self._files(tmp_path)
        cfg = self._file_config(tmp_path, data, method="svm_naive")
        out = tmp_path / "model"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        rc = main(["predict", "--model", str(out / "model.json"), "--data",
                   str(data / "view1.csv"), "--out", str(tmp_path)])
        assert rc == 3
        assert "view2" in capsys.readouterr().err

    def test_named_views(self, tmp_path):
        data = self._files(tmp_path)
        cfg = self._file_config(tmp_path, data, method="svm_concat")
        out = tmp_path / "model"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        (data / "view1.csv").rename(data / "renamed.csv")
        assert main(["predict", "--model", str(out / "model.json"), "--data",
                     f"view1={data / 'renamed.csv'}", str(data / "view2.csv"),
                     "--out", str(tmp_path)]) == 0

    def test_bad_model_file(self, tmp_path):
        (tmp_path / "m.json").write_text("[]")
        assert main(["predict", "--model", str(tmp_path / "m.json"), "--data", "x.csv"]) == 3

    def test_interpret_planted(self, tmp_path):
        data = tmp_path / "data"
        assert main(["gen-synthetic", "--generator", "planted", "--seed", "0", "--n", "120",
                     "--out", str(data)]) == 0
        cfg = self._file_config(
            tmp_path, data, method="deep_mkl",
            deep={"branch_sizes": [32, 16], "learning_rate": 0.001, "batch_size": 32},
            params={"kpca_sigma": 0.05, "n_components": 5, "epochs": 60, "dropout": 0.3},
            attribution={"steps": 50, "top_k_components": 1, "top_k_features": 3})
        out = tmp_path / "model"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "loss_trace.csv").exists()
        assert main(["interpret", "--model", str(out / "model.json"), "--data",
                     str(data / "view1.csv"), str(data / "view2.csv"),
                     "--config", str(cfg), "--out", str(out)]) == 0
        rows = list(csv.DictReader((out / "features.csv").open()))
        view1 = [r for r in rows if r["view"] == "view1"]
        assert len(view1) == 3 and view1[0]["feature"] == "v1_f1"
        comps = list(csv.DictReader((out / "components.csv").open()))
        assert len(comps) == 2

    def test_interpret_rejects_svm(self, tmp_path):
        data = self._files(tmp_path)
        cfg = self._file_config(tmp_path, data, method="svm_naive")
        out = tmp_path / "model"
        main(["train", "--config", str(cfg), "--out", str(out)])
        assert main(["interpret", "--model", str(out / "model.json"), "--data",
                     str(data / "view1.csv"), str(data / "view2.csv")]) == 2


class TestGenSynthetic:
    def test_line_counts_and_reload(self, tmp_path):
        out = tmp_path / "d"
        assert main(["gen-synthetic", "--n", "100", "--dims", "5,4,3",
                     "--strength", "1,1,1", "--out", str(out)]) == 0
        for m in (1, 2, 3):
            assert len((out / f"view{m}.csv").read_text().splitlines()) == 101
        ds = load_views([out / f"view{m}.csv" for m in (1, 2, 3)], out / "labels.csv")
        assert ds.n_samples == 100

    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-synthetic", "--generator", "complementary", "--seed", "5",
                         "--n", "30", "--out", str(tmp_path / name)]) == 0
        for f in ("view1.csv", "view2.csv", "view3.csv", "labels.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["gen-synthetic", "--out", str(blocker / "sub")]) == 3
