import json
import subprocess
import sys

import pytest

from constgcn import cli


def run_cli(args):
    """Invoke main() in-process; returns (exit_code, stdout_lines)."""
    import io
    from contextlib import redirect_stdout
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = cli.main(args)
    lines = [ln for ln in buf.getvalue().splitlines() if ln.strip()]
    return code, lines


SMALL_GEN = ["--docs", "10", "--dev-docs", "4", "--seed", "7",
             "--relations", "3", "--entities", "3", "5", "--types", "3",
             "--vocab", "96", "--max-coref", "2"]
SMALL_TRAIN = ["--set", "epochs=2", "--set", "min_epochs=2",
               "--set", "token_dim=6", "--set", "feature_dim=2",
               "--set", "negatives=4", "--quiet"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    code, lines = run_cli(["generate", "--out", str(root / "corpus")] + SMALL_GEN)
    assert code == 0
    code, lines = run_cli(["train", "--train", str(root / "corpus/train.json"),
                           "--dev", str(root / "corpus/dev.json"),
                           "--out", str(root / "run")] + SMALL_TRAIN)
    assert code == 0
    return root


class TestGenerate:
    def test_writes_corpora_schema_manifest(self, workspace):
        for name in ("train.json", "dev.json", "schema.json", "manifest.json"):
            assert (workspace / "corpus" / name).exists()

    def test_single_json_line_on_stdout(self, tmp_path):
        code, lines = run_cli(["generate", "--out", str(tmp_path / "c")] + SMALL_GEN)
        assert code == 0
        assert len(lines) == 1
        payload = json.loads(lines[0])
        assert payload["train_docs"] == 10
        assert payload["dev_docs"] == 4

    def test_deterministic_bytes(self, tmp_path):
        run_cli(["generate", "--out", str(tmp_path / "a")] + SMALL_GEN)
        run_cli(["generate", "--out", str(tmp_path / "b")] + SMALL_GEN)
        for name in ("train.json", "dev.json", "schema.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_zero_docs_warns_but_succeeds(self, tmp_path):
        code, lines = run_cli(["generate", "--out", str(tmp_path / "z"),
                               "--docs", "0", "--dev-docs", "0", "--relations", "3",
                               "--types", "3", "--vocab", "96", "--max-coref", "2",
                               "--entities", "3", "5"])
        assert code == 0
        assert json.loads(lines[0])["train_docs"] == 0


class TestTrain:
    def test_outputs_and_stdout(self, workspace):
        for name in ("checkpoint.bin", "history.csv", "manifest.json"):
            assert (workspace / "run" / name).exists()
        manifest = json.loads((workspace / "run" / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["config"]["epochs"] == 2

    def test_unknown_config_key_exit_2(self, workspace, tmp_path):
        code, _ = run_cli(["train", "--train", str(workspace / "corpus/train.json"),
                           "--dev", str(workspace / "corpus/dev.json"),
                           "--out", str(tmp_path / "x"),
                           "--set", "learning_rat=0.1"])
        assert code == 2

    def test_rotate_without_flag_exit_2(self, workspace, tmp_path):
        code, _ = run_cli(["train", "--train", str(workspace / "corpus/train.json"),
                           "--dev", str(workspace / "corpus/dev.json"),
                           "--out", str(tmp_path / "x"),
                           "--set", "variant=rotate"] + SMALL_TRAIN)
        assert code == 2

    def test_rotate_with_flag_accepted(self, workspace, tmp_path):
        code, _ = run_cli(["train", "--train", str(workspace / "corpus/train.json"),
                           "--dev", str(workspace / "corpus/dev.json"),
                           "--out", str(tmp_path / "rot"),
                           "--set", "variant=rotate", "--set", "rotate_transmit=true",
                           "--set", "epochs=1", "--set", "min_epochs=1",
                           "--set", "token_dim=6", "--set", "feature_dim=2",
                           "--set", "negatives=4", "--quiet"])
        assert code == 0

    def test_missing_dev_is_usage_error(self, workspace, tmp_path):
        with pytest.raises(SystemExit) as err:
            cli.main(["train", "--train", str(workspace / "corpus/train.json"),
                      "--out", str(tmp_path / "x")])
        assert err.value.code == 2

    def test_config_file_parsed(self, workspace, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("epochs=1\nmin_epochs=1\ntoken_dim=6\nfeature_dim=2\n"
                       "negatives=4\n# comment\nseed=9\n")
        code, lines = run_cli(["train", "--train", str(workspace / "corpus/train.json"),
                               "--dev", str(workspace / "corpus/dev.json"),
                               "--config", str(cfg),
                               "--out", str(tmp_path / "cfgrun"), "--quiet"])
        assert code == 0
        manifest = json.loads((tmp_path / "cfgrun/manifest.json").read_text())
        assert manifest["config"]["seed"] == 9
        assert manifest["config"]["epochs"] == 1

    def test_reproducible_checkpoint_and_history(self, workspace, tmp_path):
        args = ["train", "--train", str(workspace / "corpus/train.json"),
                "--dev", str(workspace / "corpus/dev.json")] + SMALL_TRAIN
        run_cli(args + ["--out", str(tmp_path / "r1")])
        run_cli(args + ["--out", str(tmp_path / "r2")])
        assert (tmp_path / "r1/checkpoint.bin").read_bytes() == \
               (tmp_path / "r2/checkpoint.bin").read_bytes()
        assert (tmp_path / "r1/history.csv").read_text() == \
               (tmp_path / "r2/history.csv").read_text()


class TestEval:
    def test_eval_json_report(self, workspace):
        code, lines = run_cli(["eval", "--checkpoint", str(workspace / "run/checkpoint.bin"),
                               "--corpus", str(workspace / "corpus/dev.json"),
                               "--train-facts", str(workspace / "corpus/train.json")])
        assert code == 0
        payload = json.loads(lines[0])
        assert set(payload) >= {"micro_f1", "ign_f1", "auc", "per_relation"}

    def test_ign_equals_f1_without_exclusions(self, workspace):
        code, lines = run_cli(["eval", "--checkpoint", str(workspace / "run/checkpoint.bin"),
                               "--corpus", str(workspace / "corpus/dev.json")])
        payload = json.loads(lines[0])
        assert payload["ign_f1"] == payload["micro_f1"]

    def test_schema_mismatch_exit_4(self, workspace, tmp_path):
        schema = tmp_path / "schema.json"
        schema.write_text(json.dumps({"relations": ["a", "b"]}))
        code, _ = run_cli(["eval", "--checkpoint", str(workspace / "run/checkpoint.bin"),
                           "--corpus", str(workspace / "corpus/dev.json"),
                           "--schema", str(schema)])
        assert code == 4


class TestExportScores:
    def test_score_and_golden_csv(self, workspace, tmp_path):
        dev = json.loads((workspace / "corpus/dev.json").read_text())
        doc_id = dev[0]["doc_id"]
        n = len(dev[0]["entities"])
        code, lines = run_cli(["export-scores",
                               "--checkpoint", str(workspace / "run/checkpoint.bin"),
                               "--corpus", str(workspace / "corpus/dev.json"),
                               "--doc-id", doc_id, "--relation", "rel_0",
                               "--layer", "0", "--out", str(tmp_path / "exp")])
        assert code == 0
        payload = json.loads(lines[0])
        rows = open(payload["scores"]).read().strip().splitlines()
        assert rows[0].split(",")[0] == "entity"
        assert len(rows) == n + 1
        for row in rows[1:]:
            for cell in row.split(",")[1:]:
                assert 0.0 < float(cell) < 1.0
        golden_rows = open(payload["golden"]).read().strip().splitlines()
        for row in golden_rows[1:]:
            assert set(row.split(",")[1:]) <= {"0", "1"}

    def test_unknown_doc_id_exit_2(self, workspace, tmp_path):
        code, _ = run_cli(["export-scores",
                           "--checkpoint", str(workspace / "run/checkpoint.bin"),
                           "--corpus", str(workspace / "corpus/dev.json"),
                           "--doc-id", "nope", "--relation", "0",
                           "--out", str(tmp_path / "exp2")])
        assert code == 2


class TestGradcheckCommand:
    def test_negative_control_exit_5(self):
        code, lines = run_cli(["gradcheck", "--seed", "0", "--size", "3", "--corrupt"])
        assert code == 5
        assert json.loads(lines[0])["passed"] is False

    def test_size_bound(self):
        code, _ = run_cli(["gradcheck", "--size", "9"])
        assert code == 2


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "constgcn.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "generate" in proc.stdout
