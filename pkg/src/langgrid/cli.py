"""Command-line entry point.

One executable, five subcommands covering the pipeline end to end:

    langgrid gen-synonyms  --config run.cfg
    langgrid gen-testset   --config run.cfg
    langgrid train         --config run.cfg [--resume]
    langgrid eval          --config run.cfg [--checkpoint F] [--mode M] [--out F]
    langgrid analyze       --config run.cfg [--checkpoint F] [--out F]

Configuration is a flat key=value file; any key can be overridden with
repeated --set flags. Every command writes the fully resolved configuration
next to its outputs so a run can be reproduced from its artifacts alone.

Exit codes: 0 success, 2 configuration error, 3 unreadable or mismatched
input file, 4 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import embed as embed_mod
from . import evalkit, instructor, orchestrator
from .config import (
    ConfigError,
    RunConfig,
    config_hash,
    db_hash,
    load_config,
    testset_hash,
    write_resolved,
)
from .qlearn import TrainingDivergenceError, load_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_DIVERGED = 4


def _load_db_checked(cfg: RunConfig):
    db, meta = instructor.load_db(cfg.synonym_db)
    expected = db_hash(cfg)
    found = meta.get("config_hash")
    if found is not None and found != expected:
        raise IOError(
            f"synonym DB {cfg.synonym_db} was generated under config hash {found}, "
            f"this run expects {expected}"
        )
    return db


def _load_testset_checked(cfg: RunConfig) -> evalkit.TestSet:
    testset = evalkit.load_testset(cfg.testset)
    expected = testset_hash(cfg)
    found = testset.meta.get("config_hash")
    if found is not None and found != expected:
        raise IOError(
            f"testset {cfg.testset} was generated under config hash {found}, "
            f"this run expects {expected}"
        )
    return testset


def _load_student(cfg: RunConfig, checkpoint: str | None):
    path = Path(checkpoint) if checkpoint else Path(cfg.checkpoint_dir) / "student.npz"
    agent, meta = load_checkpoint(path, cfg.trainer_config())
    return agent, meta, path


def cmd_gen_synonyms(cfg: RunConfig, args) -> int:
    db = instructor.gen_synonym_db(cfg.synonyms_per_event, cfg.synonym_seed)
    instructor.save_db(db, cfg.synonym_db, config_hash=db_hash(cfg))
    write_resolved(cfg, Path(cfg.synonym_db).parent)
    print(f"wrote {len(db.sets)} synonym sets ({cfg.synonyms_per_event} each) to {cfg.synonym_db}")
    return EXIT_OK


def cmd_gen_testset(cfg: RunConfig, args) -> int:
    testset = evalkit.gen_testset(
        cfg.grid_config(),
        cfg.testset_cases,
        cfg.testset_steps,
        cfg.testset_seed,
        cfg.allowed_event_kinds(),
        config_hash=testset_hash(cfg),
    )
    evalkit.save_testset(testset, cfg.testset)
    write_resolved(cfg, Path(cfg.testset).parent)
    n_events = sum(len(c.events) for c in testset.cases)
    print(
        f"wrote {len(testset.cases)} cases ({n_events} events, "
        f"{cfg.testset_steps} steps each) to {cfg.testset}"
    )
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    # A config pointing at absent inputs is a config problem; catch it before
    # any training state exists. Malformed file contents still exit with 3.
    if not Path(cfg.synonym_db).exists():
        raise ConfigError(f"synonym_db does not exist: {cfg.synonym_db}")
    if cfg.embedder == "file_lookup" and not Path(cfg.embedding_file).exists():
        raise ConfigError(f"embedding_file does not exist: {cfg.embedding_file}")
    if (cfg.eval_interval or cfg.train_on_testset) and not Path(cfg.testset).exists():
        raise ConfigError(f"testset does not exist: {cfg.testset}")

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, ckpt_dir)

    result = orchestrator.train(cfg, resume=args.resume, log=print)
    print(
        f"finished: {result.rollouts_done} rollouts, "
        f"{result.env_steps_total} env steps, checkpoints in {result.checkpoint_dir}"
    )
    if result.final_success is not None:
        print(f"last eval success_rate: {result.final_success!r}")
    if cfg.figures and result.metrics_rows:
        from . import report

        fig = report.training_figure(cfg.metrics_csv, Path(cfg.metrics_csv).with_name("training.png"))
        print(f"figure: {fig}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    agent, _, ckpt_path = _load_student(cfg, args.checkpoint)
    db = _load_db_checked(cfg)
    testset = _load_testset_checked(cfg)
    embedder = embed_mod.make_embedder(cfg.embedder_spec())
    try:
        report_obj = evalkit.eval_success(
            agent.net,
            testset,
            db,
            embedder,
            mode=cfg.eval_mode,
            grid_config=cfg.grid_config(),
            sample_seed=cfg.eval_seed,
            frame_stack=cfg.frame_stack,
            workers=cfg.eval_workers,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    out = Path(args.out) if args.out else ckpt_path.with_name(f"eval_{cfg.eval_mode}.csv")
    evalkit.save_case_csv(report_obj, out)
    write_resolved(cfg, out.parent)
    print(f"success_rate {report_obj.success_rate!r} ({cfg.eval_mode}, {len(testset.cases)} cases)")
    print(f"events reached {report_obj.events_reached}/{report_obj.events_total}")
    print(f"report: {out}")
    if cfg.figures:
        from . import report

        fig = report.eval_figure(report_obj, out.with_suffix(".png"))
        print(f"figure: {fig}")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, args) -> int:
    agent, _, ckpt_path = _load_student(cfg, args.checkpoint)
    db = _load_db_checked(cfg)
    testset = _load_testset_checked(cfg)
    embedder = embed_mod.make_embedder(cfg.embedder_spec())
    stack_dim = cfg.frame_stack * 7 * 7 * 3
    if agent.net.input_dim != stack_dim + embedder.dim:
        raise ConfigError(
            f"checkpoint expects input dim {agent.net.input_dim}, "
            f"frame stack plus embedder give {stack_dim + embedder.dim}"
        )
    points, slope = evalkit.q_distance_analysis(
        agent.net,
        testset,
        db,
        embedder,
        grid_config=cfg.grid_config(),
        sample_seed=cfg.eval_seed,
        frame_stack=cfg.frame_stack,
    )
    out = Path(args.out) if args.out else ckpt_path.with_name("q_distance.csv")
    evalkit.save_analysis_csv(points, slope, out)
    write_resolved(cfg, out.parent)
    print(f"{len(points)} synonym points, trend_slope {slope!r}")
    print(f"report: {out}")
    if cfg.figures:
        from . import report

        fig = report.q_distance_figure(points, slope, out.with_suffix(".png"))
        print(f"figure: {fig}")
    return EXIT_OK


_COMMANDS = {
    "gen-synonyms": cmd_gen_synonyms,
    "gen-testset": cmd_gen_testset,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="langgrid", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        if name == "train":
            p.add_argument("--resume", action="store_true", help="continue from checkpoints")
        if name in ("eval", "analyze"):
            p.add_argument("--checkpoint", default=None, help="student checkpoint file")
            p.add_argument("--out", default=None, help="output CSV path")
        if name == "eval":
            p.add_argument(
                "--mode",
                default=None,
                choices=evalkit.EVAL_MODES,
                help="instruction sampling mode (defaults to config eval_mode)",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if getattr(args, "mode", None):
        overrides.append(f"eval_mode={args.mode}")
    try:
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](cfg, args)
    except TrainingDivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IOError, instructor.SynonymDBError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
