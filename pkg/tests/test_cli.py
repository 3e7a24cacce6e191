import json
import os

import numpy as np
import pytest

from difftune.cli import main
from difftune.config import apply_overrides, default_config, load_config
from difftune.nn import ConfigError, load_checkpoint

# Small-but-working pipeline settings for CLI plumbing tests.
TINY = [
    "--set", "schedule.steps=6",
    "--set", "schedule.beta_start=0.01", "--set", "schedule.beta_end=0.2",
    "--set", "policy.hidden=[32,32]",
    "--set", "pretrain.steps=2500", "--set", "pretrain.n_per_mode=8",
    "--set", "pretrain.eval_episodes=30",
]
TINY_FT = [
    "--set", "harvest.n_winners=3", "--set", "harvest.n_losers=3",
    "--set", "train.epochs=2", "--set", "train.eval_every=2",
    "--set", "train.eval_episodes=5", "--set", "eval.episodes=5",
]


def test_missing_config_file_exits_2(tmp_path, capsys):
    rc = main(["pretrain", "--config", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "nope.json" in capsys.readouterr().err


def test_unknown_override_key_exits_2(tmp_path):
    rc = main(["pretrain", "--out", str(tmp_path / "out"),
               "--set", "no.such.key=1"])
    assert rc == 2


def test_malformed_override_exits_2(tmp_path):
    rc = main(["pretrain", "--out", str(tmp_path / "out"), "--set", "seed"])
    assert rc == 2


def test_override_parsing_types():
    cfg = default_config()
    apply_overrides(cfg, ["seed=7", "loss.gamma=0.25", "policy.hidden=[8,8]",
                          "finetune.checkpoint=path/x.ckpt"])
    assert cfg["seed"] == 7
    assert cfg["loss"]["gamma"] == 0.25
    assert cfg["policy"]["hidden"] == [8, 8]
    assert cfg["finetune"]["checkpoint"] == "path/x.ckpt"


def test_config_file_merges_over_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 9, "loss": {"gamma": 0.4}}))
    cfg = load_config(path)
    assert cfg["seed"] == 9
    assert cfg["loss"]["gamma"] == 0.4
    assert cfg["loss"]["beta"] == default_config()["loss"]["beta"]


@pytest.fixture(scope="module")
def pretrain_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pre")
    rc = main(["pretrain", "--out", str(out), "--seed", "3", *TINY])
    assert rc == 0
    return out


def test_pretrain_writes_artifacts(pretrain_run):
    for name in ("pretrained.ckpt", "demos.json", "pretrain_metrics.csv",
                 "pretrain_eval.json", "resolved_config.json"):
        assert (pretrain_run / name).exists(), name
    resolved = json.loads((pretrain_run / "resolved_config.json").read_text())
    assert resolved["seed"] == 3
    assert resolved["pretrain"]["steps"] == 2500  # override took effect


def test_finetune_consumes_checkpoint(pretrain_run, tmp_path):
    out = tmp_path / "ft"
    rc = main(["finetune", "--out", str(out), "--seed", "3", *TINY, *TINY_FT,
               "--set", f"finetune.checkpoint={pretrain_run / 'pretrained.ckpt'}",
               "--set", "corruption.rate=0.5"])
    assert rc == 0
    for name in ("finetuned.ckpt", "history.csv", "trajectories.json",
                 "preferences.json", "final_metrics.json", "eval_rollouts.svg"):
        assert (out / name).exists(), name
    header = (out / "history.csv").read_text().splitlines()[0]
    assert header == ("loss_kind,corruption_rate,epoch,success_rate,"
                      "alignment_rate,drift,loss,seed")
    prefs = json.loads((out / "preferences.json").read_text())
    flipped = sum(p["corrupted"] for p in prefs["pairs"])
    assert flipped == round(0.5 * 9)


def test_finetune_requires_checkpoint(tmp_path):
    rc = main(["finetune", "--out", str(tmp_path / "ft")])
    assert rc == 2


def test_eval_command(pretrain_run, tmp_path):
    out = tmp_path / "ev"
    rc = main(["eval", "--out", str(out), "--seed", "3", *TINY, *TINY_FT,
               "--set", f"eval.checkpoint={pretrain_run / 'pretrained.ckpt'}"])
    assert rc == 0
    assert (out / "eval_metrics.csv").exists()
    assert (out / "eval_rollouts.svg").exists()


def test_sweep_cardinality_and_resume(pretrain_run, tmp_path):
    out = tmp_path / "sw"
    args = ["sweep", "--out", str(out), "--seed", "3", *TINY, *TINY_FT,
            "--set", f"finetune.checkpoint={pretrain_run / 'pretrained.ckpt'}",
            "--set", "sweep.values=[0.0,0.5]", "--set", "sweep.seeds=[3]"]
    assert main(args) == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert len(rows) == 1 + 4  # header + 2 losses x 2 rates x 1 seed
    before = (out / "sweep.csv").read_bytes()
    marker = out / "cells" / "corruption=0.0_robust_s3" / "metrics.json"
    assert marker.exists()
    stamp = os.path.getmtime(marker)
    assert main(args) == 0  # rerun skips completed cells
    assert os.path.getmtime(marker) == stamp
    assert (out / "sweep.csv").read_bytes() == before


def test_gamma_sweep_axis(pretrain_run, tmp_path):
    out = tmp_path / "swg"
    rc = main(["sweep", "--out", str(out), "--seed", "3", *TINY, *TINY_FT,
               "--set", f"finetune.checkpoint={pretrain_run / 'pretrained.ckpt'}",
               "--set", "sweep.axis=gamma", "--set", "sweep.values=[0.0,0.3]",
               "--set", "sweep.seeds=[3]"])
    assert rc == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert len(rows) == 1 + 2  # robust loss only, one row per gamma


def test_oracle_command(tmp_path):
    out = tmp_path / "oracle"
    rc = main(["oracle", "--out", str(out), "--seed", "5",
               "--set", "oracle.instances=40",
               "--set", "oracle.grid={\"lows\":[-1,-1],\"highs\":[1,1],"
                        "\"resolution\":[41,41]}"])
    assert rc == 0
    report = json.loads((out / "oracle_report.json").read_text())
    assert report["lemma1_clean"] == 40
    assert report["lemma1_dirty"] == 40
    assert report["lemma2"] == 40
    assert report["counterexamples"] == []
    assert report["three_cut_fixture"]["holds"]
    assert (out / "vote_regions.svg").exists()
    assert (out / "vote_counts.csv").exists()


def test_checkpoint_round_trip_via_cli(pretrain_run):
    params = load_checkpoint(pretrain_run / "pretrained.ckpt")
    assert params.sizes == (7, 32, 32, 2)
    assert np.isfinite(params.theta).all()
