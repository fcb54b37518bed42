"""
Command-line tests: generate, train, eval and weights end to end on tiny pairs.
"""

import json

import numpy as np
import pandas as pd
import pytest

from src.main import main
from src.services.checkpoint import PARAMS_FILE


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert main(["generate", str(data), "--n", "30", "--d-v", "8", "--seed", "3", "--quiet"]) == 0
    assert main(["train", str(data), "--out", str(run), "--epochs", "3", "--d", "16", "--seed", "3",
                 "--quiet"]) == 0
    return data, run


class TestGenerate:
    '''generate writes a complete pair or nothing at all.'''

    def test_layout(self, tmp_path):
        assert main(["generate", str(tmp_path / "pair"), "--n", "20", "--quiet"]) == 0
        files = _files(tmp_path / "pair")
        for name in ("kg1/entities.tsv", "kg1/rel_triples.tsv", "kg2/visual.tsv", "alignments.tsv",
                     "generation.json"):
            assert name in files
        assert len(files["alignments.tsv"].decode().splitlines()) == 20

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("a", "b"):
            assert main(["generate", str(tmp_path / name), "--n", "25", "--seed", "7", "--rewire", "0.1",
                         "--quiet"]) == 0
        assert _files(tmp_path / "a") == _files(tmp_path / "b")

    def test_missing_visual_rows(self, tmp_path):
        assert main(["generate", str(tmp_path / "pair"), "--n", "50", "--visual-missing", "0.3", "--quiet"]) == 0
        lines = (tmp_path / "pair" / "kg2" / "visual.tsv").read_text().splitlines()
        assert len(lines) == 35
        record = json.loads((tmp_path / "pair" / "generation.json").read_text())
        assert record["log"]["visual_missing_kg2"] == 15

    def test_invalid_knob_writes_nothing(self, tmp_path):
        assert main(["generate", str(tmp_path / "pair"), "--visual-missing", "1.5", "--quiet"]) == 1
        assert not (tmp_path / "pair").exists()
        assert list(tmp_path.iterdir()) == []

    def test_refuses_non_empty_directory(self, tmp_path):
        out = tmp_path / "pair"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert main(["generate", str(out), "--n", "20", "--quiet"]) == 1
        assert (out / "keep.txt").exists()
        assert main(["generate", str(out), "--n", "20", "--force", "--quiet"]) == 0
        assert not (out / "keep.txt").exists()

    def test_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["generate"])
        assert excinfo.value.code == 1


class TestTrainAndEval:
    '''train writes its artifacts; eval and weights read them back.'''

    def test_artifacts(self, trained_run):
        _, run = trained_run
        for name in ("config.json", "epochs.jsonl", PARAMS_FILE, "params_manifest.json", "train_pairs.tsv",
                     "loss_curve.csv", "metrics.csv", "metrics.json"):
            assert (run / name).exists(), name
        assert len((run / "epochs.jsonl").read_text().splitlines()) == 3
        assert len((run / "train_pairs.tsv").read_text().splitlines()) == 9
        assert json.loads((run / "config.json").read_text())["model"]["d"] == 16

    def test_eval_reproduces_training_metrics(self, trained_run):
        data, run = trained_run
        assert main(["eval", str(run), str(data), "--quiet"]) == 0
        trained = json.loads((run / "metrics.json").read_text())["metrics"]
        evaluated = json.loads((run / "eval_metrics.json").read_text())["metrics"]
        for direction in ("fwd", "bwd", "avg"):
            for metric, value in trained[direction].items():
                assert evaluated[direction][metric] == pytest.approx(value, abs=1e-12)

    def test_eval_single_direction(self, trained_run):
        data, run = trained_run
        assert main(["eval", str(run), str(data), "--direction", "fwd", "--quiet"]) == 0
        evaluated = json.loads((run / "eval_metrics.json").read_text())["metrics"]
        assert set(evaluated) == {"fwd", "avg"}

    def test_eval_backward_direction(self, trained_run):
        data, run = trained_run
        assert main(["eval", str(run), str(data), "--direction", "bwd", "--quiet"]) == 0
        evaluated = json.loads((run / "eval_metrics.json").read_text())["metrics"]
        assert set(evaluated) == {"bwd", "avg"}
        assert evaluated["avg"] == evaluated["bwd"]

    def test_unsupervised_reports_pseudo_seed_precision(self, trained_run, tmp_path, capsys):
        data, _ = trained_run
        assert main(["train", str(data), "--out", str(tmp_path / "run"), "--mode", "unsupervised", "--epochs", "2",
                     "--d", "16", "--seed", "3", "--quiet"]) == 0
        out = capsys.readouterr().out
        assert "pseudo-seed precision: " in out
        assert "(9 pairs)" in out

    def test_meta_weights(self, trained_run, tmp_path):
        data, run = trained_run
        assert main(["weights", str(run), str(data), "--out", str(tmp_path), "--quiet"]) == 0
        weights = pd.read_csv(tmp_path / "meta_weights.csv")
        assert list(weights.columns) == ["row", "entity", "kg", "modality", "weight"]
        assert weights["row"].nunique() == 60
        np.testing.assert_allclose(weights.groupby("row")["weight"].sum(), 1.0, atol=1e-6)
        summary = pd.read_csv(tmp_path / "meta_weight_summary.csv")
        assert list(summary.columns) == ["modality", "mean_weight", "std_weight", "argmax_count",
                                         "argmax_fraction"]
        assert summary["argmax_count"].sum() == 60

    def test_corrupted_parameters(self, trained_run, tmp_path):
        data, run = trained_run
        broken = tmp_path / "run"
        broken.mkdir()
        for name in ("config.json", "params_manifest.json"):
            (broken / name).write_bytes((run / name).read_bytes())
        blob = bytearray((run / PARAMS_FILE).read_bytes())
        blob[10] ^= 0xFF
        (broken / PARAMS_FILE).write_bytes(bytes(blob))
        assert main(["eval", str(broken), str(data), "--quiet"]) == 2

    def test_missing_data_directory(self, tmp_path):
        assert main(["train", str(tmp_path / "nowhere"), "--out", str(tmp_path / "run"), "--quiet"]) == 2

    def test_unwritable_run_directory(self, trained_run, tmp_path):
        data, _ = trained_run
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        assert main(["train", str(data), "--out", str(blocker / "run"), "--epochs", "1", "--quiet"]) == 2

    def test_run_without_config(self, trained_run, tmp_path):
        data, _ = trained_run
        assert main(["eval", str(tmp_path), str(data), "--quiet"]) == 2
