"""End-to-end command-line flows and the exit-code contract."""

import subprocess
import sys

import numpy as np
import pytest

from langgrid.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_INPUT, EXIT_OK, main

BASE_CFG = """\
# small world, short episodes, fast nets
rooms_per_side=1
n_balls=3
n_boxes=0
n_keys=0
locked_door_fraction=0.0
episode_len=10
event_kinds=FACING,HOLDING
frame_stack=2
hidden_sizes=16,16
batch_size=8
replay_capacity=512
bc_capacity=256
epsilon_decay_steps=200
updates_per_rollout=1
n_teachers=1
total_rollouts=4
master_seed=7
embedder=hashed_bow
embed_dim=32
synonyms_per_event=8
testset_cases=4
testset_steps=15
eval_interval=2
figures=false
"""


def _write_cfg(root, name="run.cfg", extra=""):
    cfg = root / name
    paths = (
        f"synonym_db={root}/db/synonyms.jsonl\n"
        f"testset={root}/db/cases.jsonl\n"
        f"checkpoint_dir={root}/ckpt\n"
        f"metrics_csv={root}/ckpt/metrics.csv\n"
    )
    cfg.write_text(BASE_CFG + paths + extra, encoding="utf-8")
    return cfg


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full run: synonyms, test set, 4 training rollouts."""
    root = tmp_path_factory.mktemp("cli")
    cfg = _write_cfg(root)
    assert main(["gen-synonyms", "--config", str(cfg)]) == EXIT_OK
    assert main(["gen-testset", "--config", str(cfg)]) == EXIT_OK
    assert main(["train", "--config", str(cfg)]) == EXIT_OK
    return {"root": root, "cfg": cfg}


def _metric_rows(root):
    lines = (root / "ckpt" / "metrics.csv").read_text(encoding="utf-8").splitlines()
    return lines[0], lines[1:]


# ----------------------------------------------------------------- happy path


def test_artifacts_exist(pipeline):
    root = pipeline["root"]
    assert (root / "db" / "synonyms.jsonl").exists()
    assert (root / "db" / "synonyms.jsonl.meta.json").exists()
    assert (root / "db" / "cases.jsonl").exists()
    assert (root / "db" / "resolved_config.txt").exists()
    assert (root / "ckpt" / "student.npz").exists()
    assert (root / "ckpt" / "teacher_0.npz").exists()
    assert (root / "ckpt" / "run_state.json").exists()
    assert (root / "ckpt" / "resolved_config.txt").exists()
    header, rows = _metric_rows(root)
    assert header.startswith("rollout,")
    assert len(rows) == 4
    assert (root / "ckpt" / "eval_snapshots.csv").exists()  # eval_interval=2


def test_eval_writes_report(pipeline, capsys):
    cfg = pipeline["cfg"]
    assert main(["eval", "--config", str(cfg)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "success_rate" in out
    report = pipeline["root"] / "ckpt" / "eval_train_synonyms.csv"
    assert report.exists()
    assert report.read_text(encoding="utf-8").splitlines()[-1].startswith("# success_rate,")


def test_eval_reports_are_byte_identical(pipeline, tmp_path):
    cfg = pipeline["cfg"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["eval", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["eval", "--config", str(cfg), "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_eval_mode_flag(pipeline):
    cfg = pipeline["cfg"]
    assert main(["eval", "--config", str(cfg), "--mode", "holdout_synonyms"]) == EXIT_OK
    assert (pipeline["root"] / "ckpt" / "eval_holdout_synonyms.csv").exists()


def test_analyze_writes_report(pipeline, capsys):
    cfg = pipeline["cfg"]
    assert main(["analyze", "--config", str(cfg)]) == EXIT_OK
    assert "trend_slope" in capsys.readouterr().out
    report = pipeline["root"] / "ckpt" / "q_distance.csv"
    assert report.read_text(encoding="utf-8").splitlines()[-1].startswith("# trend_slope,")


def test_resume_extends_run(tmp_path):
    cfg = _write_cfg(tmp_path)
    assert main(["gen-synonyms", "--config", str(cfg)]) == EXIT_OK
    assert main(["gen-testset", "--config", str(cfg)]) == EXIT_OK
    assert main(["train", "--config", str(cfg), "--set", "total_rollouts=2"]) == EXIT_OK
    _, rows = _metric_rows(tmp_path)
    assert len(rows) == 2
    assert (
        main(["train", "--config", str(cfg), "--set", "total_rollouts=4", "--resume"])
        == EXIT_OK
    )
    _, rows = _metric_rows(tmp_path)
    assert len(rows) == 4


def test_figures_written(pipeline, tmp_path):
    cfg = pipeline["cfg"]
    root = pipeline["root"]
    ckpt = root / "ckpt" / "student.npz"
    out = tmp_path / "figs" / "eval.csv"
    assert (
        main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt),
              "--out", str(out), "--set", "figures=true"])
        == EXIT_OK
    )
    assert (tmp_path / "figs" / "eval.png").exists()
    out2 = tmp_path / "figs" / "qd.csv"
    assert (
        main(["analyze", "--config", str(cfg), "--checkpoint", str(ckpt),
              "--out", str(out2), "--set", "figures=true"])
        == EXIT_OK
    )
    assert (tmp_path / "figs" / "qd.png").exists()


def test_module_entry_point(pipeline):
    # python -m langgrid must behave like the console script
    proc = subprocess.run(
        [sys.executable, "-m", "langgrid", "eval", "--config", str(pipeline["cfg"])],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == EXIT_OK
    assert "success_rate" in proc.stdout


# ------------------------------------------------------------------ failures


def test_unknown_key_is_config_error(pipeline, capsys):
    rc = main(["train", "--config", str(pipeline["cfg"]), "--set", "bogus=1"])
    assert rc == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == EXIT_CONFIG


def test_missing_inputs_are_config_errors(tmp_path):
    cfg = _write_cfg(tmp_path)
    # nothing generated yet
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG


def test_incompatible_eval_mode(pipeline):
    # onehot scoring needs the onehot embedder; this run used hashed bag-of-words
    rc = main(["eval", "--config", str(pipeline["cfg"]), "--mode", "onehot"])
    assert rc == EXIT_CONFIG


def test_malformed_db_is_input_error(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    db = tmp_path / "db" / "synonyms.jsonl"
    db.parent.mkdir(parents=True)
    db.write_text("not a synonym file\n", encoding="utf-8")
    assert main(["gen-testset", "--config", str(cfg)]) == EXIT_OK
    assert main(["train", "--config", str(cfg)]) == EXIT_INPUT
    assert "error:" in capsys.readouterr().err


def test_corrupt_testset_is_input_error(pipeline, tmp_path):
    cfg = _write_cfg(tmp_path, name="corrupt.cfg")
    # reuse the trained run but point at a broken testset copy
    src_root = pipeline["root"]
    bad = tmp_path / "bad_cases.jsonl"
    bad.write_text("garbage\n", encoding="utf-8")
    rc = main([
        "eval", "--config", str(cfg),
        "--set", f"testset={bad}",
        "--set", f"checkpoint_dir={src_root}/ckpt",
        "--set", f"synonym_db={src_root}/db/synonyms.jsonl",
    ])
    assert rc == EXIT_INPUT


def test_missing_checkpoint_is_input_error(pipeline, tmp_path):
    rc = main([
        "eval", "--config", str(pipeline["cfg"]),
        "--checkpoint", str(tmp_path / "nothing.npz"),
    ])
    assert rc == EXIT_INPUT


def test_db_hash_mismatch_is_input_error(pipeline, capsys):
    # same file on disk, but the run now asks for a differently-seeded DB
    rc = main(["eval", "--config", str(pipeline["cfg"]), "--set", "synonym_seed=999"])
    assert rc == EXIT_INPUT
    assert "config hash" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, extra="learning_rate=1e100\nupdates_per_rollout=4\n")
    assert main(["gen-synonyms", "--config", str(cfg)]) == EXIT_OK
    assert main(["gen-testset", "--config", str(cfg)]) == EXIT_OK
    with np.errstate(all="ignore"):  # the blow-up itself is the point
        rc = main(["train", "--config", str(cfg)])
    assert rc == EXIT_DIVERGED
    assert "diverged" in capsys.readouterr().err
