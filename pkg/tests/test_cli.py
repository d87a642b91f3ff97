import json

import pytest

from promptblend.cli import run_cli

TINY = ["--fixture-size", "30", "--fixture-seed", "5", "--val-fraction", "0.2"]
FAST_TRAIN = TINY + ["--pretrain-epochs", "1", "--epochs", "1", "--batch-size", "10"]


def _train(out, seed="1", extra=()):
    return run_cli(["train", *FAST_TRAIN, "--seed", seed, "--out", str(out), *extra])


class TestDispatch:
    def test_no_subcommand_prints_usage(self, capsys):
        assert run_cli([]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand(self, capsys):
        assert run_cli(["frobnicate"]) == 1
        assert "invalid choice" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert run_cli(["train", "--no-such-flag", "x"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_help_exits_zero(self, capsys):
        assert run_cli(["--help"]) == 0
        assert "promptblend" in capsys.readouterr().out

    def test_zero_batch_size_names_the_flag(self, tmp_path, capsys):
        code = run_cli(["train", *TINY, "--batch-size", "0",
                        "--out", str(tmp_path / "run")])
        assert code == 1
        assert "--batch-size" in capsys.readouterr().err

    def test_missing_data_file_is_validation_error(self, tmp_path, capsys):
        code = run_cli(["train", "--data", str(tmp_path / "nope.jsonl"),
                        "--out", str(tmp_path / "run")])
        assert code in (1, 2)
        assert capsys.readouterr().err


class TestTrainCommand:
    def test_smoke_run_writes_all_outputs(self, tmp_path, capsys):
        out = tmp_path / "runA"
        assert _train(out) == 0
        for name in ("curve.csv", "report.txt", "report.json", "record.json",
                     "checkpoint.pbld"):
            assert (out / name).exists(), name
        stdout = capsys.readouterr().out
        assert "control eval loss" in stdout
        curve = (out / "curve.csv").read_text()
        assert curve.splitlines()[0] == "epoch,step,batch_size,loss"

    def test_same_seed_runs_are_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert _train(out1) == 0
        assert _train(out2) == 0
        for name in ("curve.csv", "report.txt", "report.json", "checkpoint.pbld"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_different_seeds_differ(self, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert _train(out1, seed="1") == 0
        assert _train(out2, seed="2") == 0
        assert (out1 / "curve.csv").read_text() != (out2 / "curve.csv").read_text()

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        out1, out2 = tmp_path / "env", tmp_path / "flag"
        monkeypatch.setenv("PROMPTBLEND_SEED", "7")
        assert run_cli(["train", *FAST_TRAIN, "--out", str(out1)]) == 0
        monkeypatch.delenv("PROMPTBLEND_SEED")
        assert _train(out2, seed="7") == 0
        assert (out1 / "curve.csv").read_bytes() == (out2 / "curve.csv").read_bytes()

    def test_validation_failure_leaves_no_partial_output(self, tmp_path, capsys):
        out = tmp_path / "never"
        code = run_cli(["train", "--fixture-size", "1", "--out", str(out)])
        assert code == 1
        assert not out.exists()
        assert capsys.readouterr().err

    def test_record_json_carries_wall_clock(self, tmp_path):
        out = tmp_path / "run"
        assert _train(out) == 0
        record = json.loads((out / "record.json").read_text())
        assert record["wall_clock_seconds"] > 0
        assert record["control_eval_loss"] > 0


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert _train(out) == 0
    return out


class TestPipelineCommands:
    def test_pretrain_then_train_from_checkpoint(self, tmp_path, capsys):
        pre = tmp_path / "pre"
        code = run_cli(["pretrain", *TINY, "--epochs", "1", "--seed", "3",
                        "--out", str(pre)])
        assert code == 0
        assert (pre / "checkpoint.pbld").exists()
        out = tmp_path / "run"
        code = run_cli(["train", *FAST_TRAIN, "--seed", "3",
                        "--checkpoint", str(pre / "checkpoint.pbld"),
                        "--out", str(out)])
        assert code == 0
        assert (out / "report.txt").exists()

    def test_eval_from_checkpoint(self, run_dir, capsys):
        code = run_cli(["eval", *TINY, "--checkpoint",
                        str(run_dir / "checkpoint.pbld")])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "control eval loss" in stdout
        assert "prompted eval loss" in stdout
        assert "prompted accuracy" in stdout

    def test_report_rerenders_identically(self, run_dir, tmp_path, capsys):
        out = tmp_path / "rerender"
        code = run_cli(["report", "--record", str(run_dir / "record.json"),
                        "--out", str(out)])
        assert code == 0
        for name in ("report.txt", "report.json", "curve.csv"):
            assert (out / name).read_bytes() == (run_dir / name).read_bytes(), name

    def test_ortho_prints_score(self, capsys):
        assert run_cli(["ortho", "--seed", "1"]) == 0
        stdout = capsys.readouterr().out
        assert "score:" in stdout
        assert "gram matrix:" in stdout

    def test_ortho_writes_file(self, tmp_path):
        out = tmp_path / "ortho"
        assert run_cli(["ortho", "--seed", "1", "--out", str(out)]) == 0
        assert (out / "ortho.txt").exists()

    def test_embed_summarizes_basis(self, tmp_path, capsys):
        basis_file = tmp_path / "basis.txt"
        basis_file.write_text("# two prompts\nthink step by step\ndraw a diagram\n")
        assert run_cli(["embed", "--basis", str(basis_file), "--seed", "2"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["prompts"] == ["think step by step", "draw a diagram"]
        assert len(payload["gram"]) == 2
        assert 0.0 <= payload["orthogonality_score"] <= 1.0

    def test_ortho_duplicate_basis_file(self, tmp_path, capsys):
        basis_file = tmp_path / "dup.txt"
        basis_file.write_text("same prompt\nsame prompt\n")
        assert run_cli(["ortho", "--basis", str(basis_file), "--seed", "1"]) == 0
        stdout = capsys.readouterr().out
        assert "score: 0.0000" in stdout
        assert "similarity 1.0000" in stdout
