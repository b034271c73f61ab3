"""CLI tests, driven through cli_main so exit codes are observable."""

import json

import numpy as np
import pytest

from hambr import __version__
from hambr.cli import cli_main
from hambr.energy import BankEntry, FeatureBank, dump_bank
from hambr.sphere import UnitVector


def write_scores(path, values):
    path.write_text("\n".join(str(v) for v in values) + "\n")


class TestUsage:
    def test_version(self, capsys):
        assert cli_main(["--version"]) == 0
        assert capsys.readouterr().out.strip() == f"hambr {__version__}"

    def test_no_command(self):
        assert cli_main([]) == 2

    def test_unknown_command(self):
        assert cli_main(["frobnicate"]) == 2

    def test_run_requires_config(self):
        assert cli_main(["run"]) == 2

    def test_missing_config_file_is_runtime_error(self, tmp_path, capsys):
        assert cli_main(["run", "--config", str(tmp_path / "nope.json")]) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestEvalOod:
    def test_perfect_separation(self, tmp_path, capsys):
        id_path, ood_path = tmp_path / "id.txt", tmp_path / "ood.txt"
        write_scores(id_path, np.linspace(0.0, 1.0, 25))
        write_scores(ood_path, np.linspace(2.0, 3.0, 10))
        assert cli_main(["eval-ood", "--id-scores", str(id_path),
                         "--ood-scores", str(ood_path)]) == 0
        assert capsys.readouterr().out.strip() == '{"auroc":1.0,"fpr95":0.0}'

    def test_too_few_id_scores(self, tmp_path, capsys):
        id_path, ood_path = tmp_path / "id.txt", tmp_path / "ood.txt"
        write_scores(id_path, [0.1] * 5)
        write_scores(ood_path, [0.9] * 5)
        assert cli_main(["eval-ood", "--id-scores", str(id_path),
                         "--ood-scores", str(ood_path)]) == 1
        assert "error:" in capsys.readouterr().err


class TestGenData:
    def test_bare_dataset_config(self, tmp_path):
        cfg = tmp_path / "data.json"
        cfg.write_text(json.dumps({"n_per_class": 15, "seed": 2}))
        out = tmp_path / "dataset.jsonl"
        assert cli_main(["gen-data", "--config", str(cfg),
                         "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 45

    def test_full_experiment_config(self, tmp_path):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"dataset": {"n_per_class": 10}, "seed": 4}))
        out = tmp_path / "dataset.jsonl"
        assert cli_main(["gen-data", "--config", str(cfg),
                         "--out", str(out)]) == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(rows) == 30
        assert set(rows[0]) == {"feature", "true", "observed"}


class TestSynthesize:
    def test_outlier_rows_match_chain_count(self, tmp_path):
        bank = FeatureBank()
        rng = np.random.default_rng(3)
        for c, pole in enumerate(([1.0, 0.0], [0.0, 1.0])):
            for _ in range(10):
                v = np.asarray(pole) + 0.05 * rng.standard_normal(2)
                bank.add(BankEntry(UnitVector(v / np.linalg.norm(v)), 1.0, c))
        bank_path = tmp_path / "bank.jsonl"
        with open(bank_path, "w") as fh:
            dump_bank(bank, fh)

        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"sampler": {"n_chains": 6, "seed": 1}}))
        out = tmp_path / "outliers.jsonl"
        assert cli_main(["synthesize", "--bank", str(bank_path),
                         "--config", str(cfg), "--out", str(out)]) == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(rows) == 6
        assert set(rows[0]) == {"chain", "outlier", "potential"}
        for row in rows:
            assert np.isclose(np.linalg.norm(row["outlier"]), 1.0, atol=1e-9)


class TestRunCommand:
    def test_end_to_end_with_overrides(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "dataset": {"n_per_class": 30},
            "sampler": {"n_chains": 6, "n_rounds": 2, "steps_per_round": 2},
            "epochs": 5, "warmup_epochs": 2, "t_filter": 2,
            "output_dir": str(tmp_path / "ignored"),
        }))
        out = tmp_path / "run"
        code = cli_main(["run", "--config", str(cfg),
                         "--seed", "23", "--out", str(out)])
        assert code == 0
        assert capsys.readouterr().out.strip() == str(out)
        resolved = json.loads((out / "config.json").read_text())
        assert resolved["seed"] == 23
        assert resolved["dataset"]["seed"] == 23
        assert (out / "metrics.csv").exists()
