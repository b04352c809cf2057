import csv
import json

import pytest

from bootlm import cli
from bootlm.errors import NonFiniteLoss
from bootlm.tokenizer import Vocabulary
from bootlm.trainer import BootstrapTrainer

CORPUS = [
    "the cat sat on the mat",
    "the dog sat on the log",
    "a cat saw a dog",
    "the dog saw the cat on the mat",
] * 30

SUBCOMMANDS = ["prep", "train-tokenizer", "pretrain", "score-pairs", "sweep-temperature", "inspect-checkpoint"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus, vocabulary, config and a short pretraining run shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    (root / "corpus.txt").write_text("\n".join(CORPUS) + "\n")
    assert cli.run(["train-tokenizer", "--input", str(root / "corpus.txt"),
                    "--output", str(root / "vocab.txt"), "--size", "30"]) == 0
    size = len(Vocabulary.load(root / "vocab.txt"))
    (root / "run.cfg").write_text(
        "model.preset = tiny\n"
        f"model.vocab_size = {size}\n"
        "model.seq_len = 16\n"
        "steps = 6\nwarmup_steps = 2\nbatch_size = 4\ncheckpoint_every = 3\n"
        "data.train = corpus.txt\ndata.vocab = vocab.txt\n"
    )
    assert cli.run(["pretrain", "--config", str(root / "run.cfg"), "--out", str(root / "ck"), "--seed", "5"]) == 0
    pairs = [
        {"sentence_good": "the cat sat", "sentence_bad": "cat the sat", "UID": "order"},
        {"sentence_good": "a dog saw the cat", "sentence_bad": "a dog the saw cat", "UID": "order"},
        {"sentence_good": "the dog sat on the mat", "sentence_bad": "the dog on sat the mat", "UID": "verb"},
    ]
    (root / "pairs.jsonl").write_text("".join(json.dumps(p) + "\n" for p in pairs))
    return root


def test_pretrain_outputs(workspace):
    ck = workspace / "ck"
    assert {"final.bin", "student.bin", "metrics.csv", "step0000003.bin"} <= {p.name for p in ck.iterdir()}
    rows = list(csv.DictReader(open(ck / "metrics.csv")))
    assert [int(r["step"]) for r in rows] == list(range(6))


def test_same_seed_same_bytes(workspace):
    assert cli.run(["pretrain", "--config", str(workspace / "run.cfg"),
                    "--out", str(workspace / "again"), "--seed", "5"]) == 0
    for name in ("final.bin", "student.bin", "metrics.csv"):
        assert (workspace / "again" / name).read_bytes() == (workspace / "ck" / name).read_bytes()


def test_score_and_sweep(workspace, capsys):
    ck = str(workspace / "ck" / "student.bin")
    assert cli.run(["score-pairs", "--pairs", str(workspace / "pairs.jsonl"), "--checkpoint", ck]) == 0
    out = capsys.readouterr().out
    assert "order\t" in out and "overall\t" in out
    profile = workspace / "profile.csv"
    assert cli.run(["sweep-temperature", "--pairs", str(workspace / "pairs.jsonl"), "--checkpoint", ck,
                    "--out", str(profile)]) == 0
    lines = profile.read_text().splitlines()
    assert lines[0] == "temperature,order,verb,average" and len(lines) == 52
    assert "best temperature" in capsys.readouterr().out
    assert cli.run(["sweep-temperature", "--pairs", str(workspace / "pairs.jsonl"), "--checkpoint", ck,
                    "--out", str(profile), "--grid", "0.5", "2"]) == 2


def test_inspect(workspace, capsys):
    assert cli.run(["inspect-checkpoint", str(workspace / "ck" / "student.bin")]) == 0
    out = capsys.readouterr().out
    assert "mode: student" in out and "teacher." not in out and "latent_head" not in out
    assert cli.run(["inspect-checkpoint", str(workspace / "ck" / "final.bin")]) == 0
    assert "teacher." in capsys.readouterr().out


def test_prep(tmp_path):
    (tmp_path / "raw.txt").write_text("*CHI:\tmore cookie .\n")
    assert cli.run(["prep", "--source", "childes", "--input", str(tmp_path / "raw.txt"),
                    "--output", str(tmp_path / "clean.txt")]) == 0
    assert (tmp_path / "clean.txt").exists()
    assert cli.run(["prep", "--source", "tweets", "--input", str(tmp_path / "raw.txt"),
                    "--output", str(tmp_path / "x.txt")]) == 2
    assert cli.run(["prep", "--source", "childes", "--input", str(tmp_path / "missing.txt"),
                    "--output", str(tmp_path / "x.txt")]) == 2


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_and_unknown_flags(command, capsys):
    assert cli.run([command, "--help"]) == 0
    assert cli.run([command, "--no-such-flag"]) == 1
    assert "usage" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert cli.run([]) == 1
    assert cli.run(["frobnicate"]) == 1
    assert cli.run(["train-tokenizer", "--input", "x", "--output", "y", "--size", "ten"]) == 1


def test_vocab_mismatch_is_a_data_error(workspace, tmp_path):
    (tmp_path / "run.cfg").write_text((workspace / "run.cfg").read_text().replace("model.vocab_size", "# ")
                                      + "model.vocab_size = 99\n")
    assert cli.run(["pretrain", "--config", str(tmp_path / "run.cfg"), "--out", str(tmp_path / "o"),
                    "--data", str(workspace / "corpus.txt"), "--vocab", str(workspace / "vocab.txt")]) == 2


def test_non_finite_loss_exits_3(workspace, tmp_path, monkeypatch):
    def explode(self, batch):
        raise NonFiniteLoss("loss is nan")

    monkeypatch.setattr(BootstrapTrainer, "train_step", explode)
    assert cli.run(["pretrain", "--config", str(workspace / "run.cfg"), "--out", str(tmp_path / "o")]) == 3
    assert (tmp_path / "o" / "crash.bin").exists()
