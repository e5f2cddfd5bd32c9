import json

import pytest

from swapmark import toy_clip as tc
from swapmark.cli import main


def _json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_bound_command(capsys):
    assert main(["bound", "--m", "100", "--n", "4", "--tau", "0.5", "--alpha", "0.01"]) == 0
    out = _json(capsys)
    assert out["d_star"] == pytest.approx(0.20184, abs=1e-4) and abs(out["residual"]) < 1e-9
    assert main(["bound", "--n", "1"]) == 2


def test_mc_validate_command(capsys):
    assert main(["mc-validate", "--p-success", "1.0", "--trials", "1000", "--seed", "1"]) == 0
    assert _json(capsys)["rejection_rate"] == 1.0
    assert main(["mc-validate", "--p-success", "0.0", "--model", "fixed", "--value", "1.0",
                 "--trials", "1000"]) == 0
    assert _json(capsys)["rejection_rate"] == 0.0


def test_gen_data_writes_every_split(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path)]) == 0
    for name in ("config.echo", "dataset.txt", "train.txt", "adversary.txt", "base_eval.txt", "novel.txt"):
        assert (tmp_path / name).is_file()


def test_embed_verify_exit_codes(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["embed", "swap", "--out", out, "--set", "swap.epochs=3"]) == 0
    metrics = _json(capsys)
    assert set(metrics) >= {"wsr", "acc_base", "acc_novel", "converged", "checkpoint"}
    ckpt = tmp_path / "checkpoints" / "watermarked.ckpt"
    tc.load_checkpoint(ckpt)
    assert main(["verify", str(ckpt), "--out", out, "--classes", "Miqi 1,Miqi 2,Miqi 3,Miqi 4"]) == 1
    assert (tmp_path / "audits" / "verify.json").is_file()


def test_verify_trained_checkpoint(run_dir, tmp_path, capsys):
    ckpt = str(run_dir / "checkpoints" / "watermarked.ckpt")
    assert main(["verify", ckpt, "--out", str(tmp_path), "--name", "owner"]) == 0
    assert "verdict=verified" in capsys.readouterr().out
    saved = json.loads((tmp_path / "audits" / "owner.json").read_text())
    assert saved["verdict"] and saved["seed"] == 0
    assert main(["verify", ckpt, "--out", str(tmp_path), "--classes", "Miqi 1,Miqi 2,Miqi 3,Miqi 4"]) == 1
    # a checkpoint built for another master seed does not fit the scenario
    assert main(["verify", ckpt, "--out", str(tmp_path), "--seed", "3"]) == 2


def test_attack_command_saves_pruned_checkpoint(run_dir, tmp_path):
    ckpt = str(run_dir / "checkpoints" / "watermarked.ckpt")
    assert main(["attack", "prune", ckpt, "--out", str(tmp_path), "--fraction", "0.5"]) == 0
    result = json.loads((tmp_path / "attacks" / "prune.json").read_text())
    assert [c["fraction"] for c in result["post"]["curve"]] == [0.5]
    assert (tmp_path / "checkpoints" / "pruned-0.5.ckpt").is_file()


def test_bench_layout(bench_dir):
    for rel in ("config.echo", "record.json", "checkpoints/watermarked.ckpt", "audits/watermarked.json",
                "attacks/finetune.json", "attacks/sensitivity.json", "plots/summary.tsv",
                "plots/sensitivity_epsilon.png"):
        assert (bench_dir / rel).is_file(), rel


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit):
        main(["embed", "swap", "--set", "no-equals-sign"])
    assert main(["embed", "swap", "--out", str(tmp_path), "--set", "swap.nothing=1"]) == 2
    assert main(["verify", str(tmp_path / "missing.ckpt"), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["attack", "melt", "x.ckpt"])
