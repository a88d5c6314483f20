"""Flat key=value run configuration, validation, and artifact hashing.

One RunConfig drives every subcommand. Files are plain UTF-8 ``key=value``
lines; ``#`` starts a comment. Unknown keys are rejected outright, every run
writes its fully resolved configuration next to its outputs, and artifacts
carry a hash over exactly the keys that determined them so stale mixtures of
files fail fast instead of silently disagreeing.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .envgrid import EventKind, GridConfig
from .qlearn import TrainerConfig
from .embed import EMBEDDER_KINDS, EmbedderSpec

EVAL_MODES = ("train_synonyms", "holdout_synonyms", "onehot")


class ConfigError(ValueError):
    """Bad key, bad value, or an inconsistent combination."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, flattened to scalar fields."""

    # World geometry and contents.
    rooms_per_side: int = 3
    room_interior: int = 6
    n_balls: int = 5
    n_boxes: int = 5
    n_keys: int = 5
    locked_door_fraction: float = 0.25
    episode_len: int = 115
    event_kinds: str = "FACING,HOLDING,OPENED"

    # Learning hyperparameters.
    bc_ratio: float = 0.900
    frame_stack: int = 8
    grad_clip: float = 0.67
    learning_rate: float = 5.13e-5
    tau: float = 0.098
    discount: float = 0.99
    student_goal_reward: float = 3.0
    teacher_penalty_success: float = 2.0
    teacher_reward_fail: float = 6.0
    teacher_no_event_penalty: float = 8.0
    bc_coeff_init: float = 0.1
    bc_coeff_lr: float = 0.01
    bc_coeff_max: float = 10.0
    batch_size: int = 64
    updates_per_rollout: int = 4
    replay_capacity: int = 100_000
    bc_capacity: int = 50_000
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_steps: int = 50_000
    hidden_sizes: str = "256,256"

    # Goal embedding.
    embedder: str = "onehot_event"
    embed_dim: int = 64

    # Synonym database generation.
    synonyms_per_event: int = 50
    synonym_seed: int = 20240101

    # Run control.
    n_teachers: int = 1
    total_rollouts: int = 200
    master_seed: int = 0
    max_env_steps: int = 0          # 0 means no cap beyond total_rollouts
    random_teachers: bool = False
    no_bcl: bool = False
    train_on_testset: bool = False
    eval_interval: int = 0          # rollouts between success snapshots, 0 off
    checkpoint_interval: int = 0    # rollouts between mid-run saves, 0 = end only
    save_replay: bool = False

    # Test-set generation.
    testset_cases: int = 100
    testset_steps: int = 1000
    testset_seed: int = 7

    # Evaluation.
    eval_mode: str = "train_synonyms"
    eval_seed: int = 1
    eval_workers: int = 1
    figures: bool = True

    # Artifact paths.
    synonym_db: str = "out/synonyms.jsonl"
    embedding_file: str = ""
    testset: str = "out/testset.jsonl"
    checkpoint_dir: str = "out/checkpoints"
    metrics_csv: str = "out/metrics.csv"

    def grid_config(self) -> GridConfig:
        return GridConfig(
            rooms_per_side=self.rooms_per_side,
            room_interior=self.room_interior,
            n_balls=self.n_balls,
            n_boxes=self.n_boxes,
            n_keys=self.n_keys,
            locked_door_fraction=self.locked_door_fraction,
            max_steps=self.episode_len,
        )

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            bc_ratio=self.bc_ratio,
            frame_stack=self.frame_stack,
            grad_clip=self.grad_clip,
            learning_rate=self.learning_rate,
            tau=self.tau,
            discount=self.discount,
            student_goal_reward=self.student_goal_reward,
            teacher_penalty_success=self.teacher_penalty_success,
            teacher_reward_fail=self.teacher_reward_fail,
            teacher_no_event_penalty=self.teacher_no_event_penalty,
            bc_coeff_init=self.bc_coeff_init,
            bc_coeff_lr=self.bc_coeff_lr,
            bc_coeff_max=self.bc_coeff_max,
            batch_size=self.batch_size,
            updates_per_rollout=self.updates_per_rollout,
            replay_capacity=self.replay_capacity,
            bc_capacity=self.bc_capacity,
            epsilon_start=self.epsilon_start,
            epsilon_final=self.epsilon_final,
            epsilon_decay_steps=self.epsilon_decay_steps,
            hidden_sizes=tuple(int(h) for h in self.hidden_sizes.split(",")),
        )

    def embedder_spec(self) -> EmbedderSpec:
        return EmbedderSpec(
            kind=self.embedder,
            dim=self.embed_dim,
            path=self.embedding_file or None,
        )

    def allowed_event_kinds(self) -> tuple[EventKind, ...]:
        kinds = []
        for name in self.event_kinds.split(","):
            name = name.strip()
            if not name:
                continue
            try:
                kinds.append(EventKind[name])
            except KeyError as exc:
                raise ConfigError(f"unknown event kind {name!r}") from exc
        if not kinds:
            raise ConfigError("event_kinds must name at least one kind")
        return tuple(kinds)

    def validate(self) -> None:
        try:
            self.grid_config().validate()
            self.trainer_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.allowed_event_kinds()
        if self.embedder not in EMBEDDER_KINDS:
            raise ConfigError(f"embedder must be one of {EMBEDDER_KINDS}, got {self.embedder!r}")
        if self.embedder == "file_lookup" and not self.embedding_file:
            raise ConfigError("file_lookup embedder requires embedding_file")
        if self.embedder == "hashed_bow" and self.embed_dim < 16:
            raise ConfigError("embed_dim must be >= 16 for hashed_bow")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}, got {self.eval_mode!r}")
        if self.eval_mode == "holdout_synonyms" and self.embedder == "onehot_event":
            raise ConfigError("holdout evaluation is meaningless with a one-hot embedder")
        if self.eval_mode == "onehot" and self.embedder != "onehot_event":
            raise ConfigError("eval_mode=onehot requires embedder=onehot_event")
        if self.synonyms_per_event < 6:
            raise ConfigError("synonyms_per_event must be at least 6")
        if self.n_teachers < 1:
            raise ConfigError("n_teachers must be >= 1")
        if self.total_rollouts < 1:
            raise ConfigError("total_rollouts must be >= 1")
        if self.testset_cases < 1 or self.testset_steps < 1:
            raise ConfigError("testset_cases and testset_steps must be >= 1")
        if self.eval_workers < 1:
            raise ConfigError("eval_workers must be >= 1")
        if min(self.eval_interval, self.checkpoint_interval, self.max_env_steps) < 0:
            raise ConfigError("intervals and step caps cannot be negative")
        if self.train_on_testset and self.n_teachers != 1:
            raise ConfigError("train_on_testset ignores teachers; set n_teachers=1")


_FIELDS = {f.name: f for f in fields(RunConfig)}

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    if f.type in ("bool", bool):
        low = raw.lower()
        if low in _TRUE_WORDS:
            return True
        if low in _FALSE_WORDS:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if f.type in ("int", int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if f.type in ("float", float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return raw


def parse_assignments(pairs: list[str]) -> dict:
    """Parse ``key=value`` strings, rejecting unknown keys."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the file, then --set overrides, then validation."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc}") from exc
        assignments = []
        for line_no, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{p}:{line_no}: expected key=value, got {line!r}")
            assignments.append(line)
        values.update(parse_assignments(assignments))
    values.update(parse_assignments(list(overrides or [])))
    cfg = replace(RunConfig(), **values)
    cfg.validate()
    return cfg


def resolved_text(cfg: RunConfig) -> str:
    """Canonical key=value rendering, alphabetical, full float precision."""
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(cfg, name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{name}={text}")
    return "\n".join(lines) + "\n"


def write_resolved(cfg: RunConfig, directory: str | Path, name: str = "resolved_config.txt") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / name
    path.write_text(resolved_text(cfg), encoding="utf-8")
    return path


def _hash_keys(cfg: RunConfig, keys: tuple[str, ...]) -> str:
    payload = "\n".join(f"{k}={getattr(cfg, k)!r}" for k in keys)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# Keys that determine each artifact's content. Consumers recompute the hash
# from their own config and refuse artifacts that disagree.
DB_HASH_KEYS = ("synonyms_per_event", "synonym_seed")
TESTSET_HASH_KEYS = (
    "rooms_per_side",
    "room_interior",
    "n_balls",
    "n_boxes",
    "n_keys",
    "locked_door_fraction",
    "event_kinds",
    "testset_cases",
    "testset_steps",
    "testset_seed",
)

# Keys that may change between an interrupted run and its resumption without
# changing what rollouts 1..k computed: run length, snapshot cadence, output
# toggles and artifact locations. Everything else must match exactly.
RESUME_EXEMPT_KEYS = (
    "total_rollouts",
    "max_env_steps",
    "eval_interval",
    "checkpoint_interval",
    "save_replay",
    "figures",
    "eval_mode",
    "eval_seed",
    "eval_workers",
    "synonym_db",
    "testset",
    "checkpoint_dir",
    "metrics_csv",
)


def db_hash(cfg: RunConfig) -> str:
    return _hash_keys(cfg, DB_HASH_KEYS)


def testset_hash(cfg: RunConfig) -> str:
    return _hash_keys(cfg, TESTSET_HASH_KEYS)


def train_hash(cfg: RunConfig) -> str:
    keys = tuple(sorted(f.name for f in fields(RunConfig) if f.name not in RESUME_EXEMPT_KEYS))
    return _hash_keys(cfg, keys)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(resolved_text(cfg).encode("utf-8")).hexdigest()[:16]
