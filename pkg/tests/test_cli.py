import json

import pytest
from filelock import FileLock

from promptclass.cli import main
from promptclass.config import RunConfig, read_config_file, resolve
from promptclass.errors import UsageError

SMALL = ["--d-model", "16", "--n-layers", "2", "--n-heads", "2", "--d-ffn", "32",
         "--epochs", "2", "--seeds", "2", "--n-per-class", "10", "--max-len", "48",
         "--vocab-size", "300", "--batch-size", "16"]


def _run(tmp_path, *args, out="run"):
    return main([*args, "--out", str(tmp_path / out)])


def test_unknown_command_and_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 1


def test_bad_flag_value_is_usage_error(tmp_path):
    assert _run(tmp_path, "train", "--epochs", "many") == 1
    assert _run(tmp_path, "train", "--layers", "2-4") == 1
    assert _run(tmp_path, "train", "--d-model", "10", "--n-heads", "4") == 1


def test_missing_data_file_is_data_error(tmp_path):
    assert _run(tmp_path, "stats", "--task", "code-smell", "--data", str(tmp_path / "none.csv")) == 2


def test_malformed_data_is_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("text,kind\nx,1\n")
    assert _run(tmp_path, "stats", "--task", "code-smell", "--data", str(bad)) == 2


def test_real_task_without_data(tmp_path):
    assert _run(tmp_path, "stats", "--task", "code-smell") == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[model]\nd_model = 32\nn-layers = 3\n[train]\nepochs = 7\nfreeze_backbone = yes\n")
    assert read_config_file(cfg) == {"d_model": 32, "n_layers": 3, "epochs": 7, "freeze_backbone": True}
    rc = resolve(str(cfg), {"epochs": "9"})
    assert (rc.d_model, rc.n_layers, rc.epochs, rc.freeze_backbone) == (32, 3, 9, True)
    assert rc.seed == RunConfig().seed


def test_config_without_sections(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("seed = 4\nlayers = 1..2\n")
    assert resolve(str(cfg), {}).layers == "1..2"


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[x]\nwidth = 3\n")
    with pytest.raises(UsageError):
        read_config_file(cfg)
    assert main(["stats", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_stats_command(tmp_path):
    assert _run(tmp_path, "stats", "--task", "toy-smell", "--n-per-class", "20") == 0
    data = json.loads((tmp_path / "run" / "stats.json").read_text())
    assert data["classes"] == 2 and data["train"] == 32 and data["test"] == 8
    assert data["unit"] == "tokens"
    assert set(data["below"]) == {"32", "64", "128", "256", "300"}


def test_vocab_command(tmp_path):
    assert _run(tmp_path, "vocab", "--task", "toy-debt", "--vocab-size", "80") == 0
    lines = (tmp_path / "run" / "vocab.txt").read_text().splitlines()
    assert lines[:5] == ["[PAD]", "[CLS]", "[MASK]", "[SEP]", "[UNK]"]


def test_profile_base(tmp_path):
    assert _run(tmp_path, "profile", "--base") == 0
    data = json.loads((tmp_path / "run" / "cost.json").read_text())
    assert data["seq_len"] == 256
    full = next(r for r in data["reports"] if r["variant"] == "full")
    assert full["params_millions"] == pytest.approx(85.07, rel=0.02)
    assert (tmp_path / "run" / "cost.txt").read_text().startswith("Model")


def test_lock_blocks_second_writer(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    with FileLock(str(out / ".lock")):
        assert _run(tmp_path, "profile", "--base") == 1


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    code = main(["train", "--task", "toy-languages", "--template", "Just [MASK] ! {x}",
                 "--layers", "1..2", *SMALL, "--out", str(root / "run")])
    assert code == 0
    return root / "run"


def test_train_outputs(trained):
    for seed in (0, 1):
        d = trained / f"seed_{seed}"
        assert (d / "model.pcls").read_bytes()[:4] == b"PCLS"
        header = (d / "history.csv").read_text().splitlines()[0]
        assert header == "epoch,split,loss,accuracy,macro_p,macro_r,macro_f1"
        assert json.loads((d / "metrics.json").read_text())["seed"] == seed
        assert (d / "history.png").stat().st_size > 0
    report = json.loads((trained / "report.json").read_text())
    assert [r["seed"] for r in report["runs"]] == [0, 1]
    assert set(report["aggregate"]) == {"mean", "std", "max", "n"}
    split = json.loads((trained / "split.json").read_text())
    assert len(split["train"]) == 32 and len(split["test"]) == 8
    assert json.loads((trained / "label_map.json").read_text()) == {"pyish": 0, "cish": 1, "lispish": 2, "sqlish": 3}


def test_eval_and_attention_report(trained, tmp_path):
    ckpt = str(trained / "seed_0" / "model.pcls")
    common = ["--task", "toy-languages", "--n-per-class", "10", "--checkpoint", ckpt]
    assert _run(tmp_path, "eval", *common, out="ev") == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    seed_metrics = json.loads((trained / "seed_0" / "metrics.json").read_text())
    assert metrics["accuracy"] == seed_metrics["accuracy"]
    assert _run(tmp_path, "attention-report", *common, "--figures", "2", out="att") == 0
    recs = [json.loads(l) for l in (tmp_path / "att" / "attention.jsonl").read_text().splitlines()]
    assert len(recs) == 8
    for rec in recs:
        assert set(rec) == {"example_id", "layer_ids", "alphas", "predicted", "gold"}
        assert rec["layer_ids"] == [1, 2]
        assert abs(sum(rec["alphas"]) - 1) < 1e-6
    assert len(list((tmp_path / "att" / "figures").glob("*.png"))) == 2


def test_eval_requires_checkpoint(tmp_path):
    assert _run(tmp_path, "eval", "--task", "toy-languages") == 1


def test_pretrain_then_init(tmp_path):
    args = ["--task", "toy-debt", "--n-per-class", "10", "--d-model", "16", "--n-layers", "2",
            "--n-heads", "2", "--d-ffn", "32", "--max-len", "32", "--epochs", "1"]
    assert _run(tmp_path, "pretrain", *args, out="pre") == 0
    hist = json.loads((tmp_path / "pre" / "pretrain.json").read_text())
    assert hist["steps"] >= 1 and len(hist["loss"]) == 1
    assert (tmp_path / "pre" / "encoder.pcls").exists()


def test_time_command(tmp_path):
    args = ["--text", "int a = b ;", "--d-model", "16", "--n-layers", "2", "--n-heads", "2",
            "--d-ffn", "32", "--max-len", "16", "--groups", "2", "--repeats", "3", "--classes", "2"]
    assert _run(tmp_path, "time", *args) == 0
    data = json.loads((tmp_path / "run" / "time.json").read_text())
    assert data["full"]["shares"]["recurrent"] == 0.0
    assert data["with_bilstm"]["shares"]["recurrent"] > 0.0
    assert (tmp_path / "run" / "time.png").exists()
