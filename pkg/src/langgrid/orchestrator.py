"""The teacher/student training loop.

Each rollout plays out in three phases. A teacher explores an episode and
every event it triggers, in order, becomes a goal. The student then replays
the exact same world from the same seed with that goal list as a queue,
seeing one instruction embedding at a time and earning a fixed reward per
goal completed. Finally rewards flow back to the teacher: it loses points for
goals the student matched, gains points for goals the student missed, takes a
flat penalty for an eventless episode, and collects a decaying novelty bonus
per trigger. Teacher steps leading up to each failed goal become imitation
data for the student.

All randomness inside rollout r is drawn from generators seeded by
(master_seed, r), so a run can be stopped and resumed at any rollout boundary
and reproduce itself exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import embed as embed_mod
from . import instructor
from .config import RunConfig, config_hash, db_hash, testset_hash, train_hash
from .envgrid import Event, EventKind, GridConfig, GridState, new_env, observe, step
from .instructor import Instruction, SynonymDB
from .qlearn import (
    Agent,
    BCBuffer,
    FrameStack,
    ReplayBuffer,
    TrainingDivergenceError,
    bc_loss,
    combine_grads,
    d3qn_loss,
    grad_step,
    load_checkpoint,
    save_checkpoint,
    soft_update,
    update_bc_coeff,
)

# Novelty bonus paid to the teacher per event trigger: base * decay^count,
# where count is the number of times any teacher triggered that event before.
BONUS_BASE = 3.0
BONUS_DECAY = 0.97

RUN_STATE_NAME = "run_state.json"

METRICS_COLUMNS = (
    "rollout",
    "teacher_id",
    "n_events",
    "n_reached",
    "teacher_reward_sum",
    "student_reward_sum",
    "rl_loss",
    "bc_loss",
    "bc_coeff",
    "epsilon_student",
)

EVAL_COLUMNS_HEADER = "rollout,success_rate,events_reached,events_total"


def exploration_bonus(trigger_count: int) -> float:
    return BONUS_BASE * BONUS_DECAY**trigger_count


@dataclass
class RolloutRecord:
    """Everything the teacher phase produced that later phases consume."""

    teacher_id: int
    env_seed: int
    states: list[GridState]            # length T+1, state before each step plus final
    stacks: np.ndarray                 # (T+1, stack_dim) int8, input before each step
    actions: np.ndarray                # (T,) int64
    step_events: list[list[Event]]     # raw events per step
    goal_events: list[Event]           # kind-filtered, trigger order, repeats kept
    trigger_steps: list[int]           # parallel to goal_events


@dataclass
class StudentOutcome:
    """What happened when the student chased a record's goal queue."""

    reached: list[bool]
    steps_used: int
    instructions: list[Instruction | None]
    step_events: list[list[Event]] = field(default_factory=list)
    completion_steps: list[int | None] = field(default_factory=list)

    @property
    def n_reached(self) -> int:
        return sum(self.reached)


@dataclass
class StudentTransition:
    obs: np.ndarray
    goal: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool


def run_teacher_rollout(
    grid_config: GridConfig,
    actor,
    env_seed: int,
    rng: np.random.Generator,
    frame_stack: int,
    allowed_kinds: tuple[EventKind, ...] = tuple(EventKind),
) -> RolloutRecord:
    """Play one teacher episode and collect its goal list.

    The actor only needs an ``act(input_vec, rng) -> int`` method; scripted
    stand-ins are enough for protocol tests.
    """
    state = new_env(grid_config, env_seed)
    stack = FrameStack(frame_stack, (7, 7, 3))
    stack.push(observe(state))

    states = [state]
    stacks = [stack.flat()]
    actions: list[int] = []
    step_events: list[list[Event]] = []
    goal_events: list[Event] = []
    trigger_steps: list[int] = []

    for t in range(grid_config.max_steps):
        action = int(actor.act(stacks[-1].astype(np.float64), rng))
        state, events = step(state, action)
        stack.push(observe(state))
        states.append(state)
        stacks.append(stack.flat())
        actions.append(action)
        step_events.append(events)
        for ev in events:
            if ev.kind in allowed_kinds:
                goal_events.append(ev)
                trigger_steps.append(t)

    return RolloutRecord(
        teacher_id=getattr(actor, "teacher_id", -1),
        env_seed=env_seed,
        states=states,
        stacks=np.stack(stacks),
        actions=np.array(actions, dtype=np.int64),
        step_events=step_events,
        goal_events=goal_events,
        trigger_steps=trigger_steps,
    )


def run_student_rollout(
    record: RolloutRecord,
    grid_config: GridConfig,
    actor,
    db: SynonymDB,
    embedder,
    rng: np.random.Generator,
    instruction_rng: np.random.Generator,
    goal_reward: float,
    frame_stack: int,
    include_holdout: bool = False,
) -> tuple[StudentOutcome, list[StudentTransition]]:
    """Replay the teacher's world against its goal queue.

    The student sees one goal at a time; the queue only advances on success,
    so a stuck goal blocks everything behind it. The frame stack runs through
    goal switches untouched. An empty goal list short-circuits to a vacuous
    success with no transitions.
    """
    if not record.goal_events:
        return StudentOutcome(reached=[], steps_used=0, instructions=[]), []

    state = new_env(grid_config, record.env_seed)
    stack = FrameStack(frame_stack, (7, 7, 3))
    stack.push(observe(state))

    queue = list(record.goal_events)
    reached = [False] * len(queue)
    completion: list[int | None] = [None] * len(queue)
    instructions: list[Instruction | None] = [None] * len(queue)
    idx = 0
    instructions[0] = instructor.sample_instruction(db, queue[0], instruction_rng, include_holdout)
    goal_vec = embedder.encode(instructions[0].text, queue[0])

    transitions: list[StudentTransition] = []
    trace: list[list[Event]] = []
    steps_used = 0

    for t in range(grid_config.max_steps):
        obs_flat = stack.flat()
        action = int(actor.act(np.concatenate([obs_flat.astype(np.float64), goal_vec]), rng))
        state, events = step(state, action)
        stack.push(observe(state))
        trace.append(events)
        steps_used = t + 1

        hit = instructor.reached(state, trace, queue[idx])
        transitions.append(
            StudentTransition(
                obs=obs_flat,
                goal=goal_vec,
                action=action,
                reward=goal_reward if hit else 0.0,
                next_obs=stack.flat(),
                done=hit or t == grid_config.max_steps - 1,
            )
        )
        if hit:
            reached[idx] = True
            completion[idx] = t
            idx += 1
            if idx == len(queue):
                break
            instructions[idx] = instructor.sample_instruction(
                db, queue[idx], instruction_rng, include_holdout
            )
            goal_vec = embedder.encode(instructions[idx].text, queue[idx])

    return (
        StudentOutcome(
            reached=reached,
            steps_used=steps_used,
            instructions=instructions,
            step_events=trace,
            completion_steps=completion,
        ),
        transitions,
    )


def distribute_rewards(
    record: RolloutRecord,
    outcome: StudentOutcome,
    frequencies: dict[Event, int],
    *,
    penalty_success: float,
    reward_fail: float,
    no_event_penalty: float,
) -> np.ndarray:
    """Per-step teacher rewards, credited at each goal's trigger step.

    Every trigger also pays the novelty bonus computed from the event's
    pre-increment global trigger count; the count then advances, so a repeat
    within the same rollout already earns the decayed rate. An eventless
    episode is one flat penalty on the final step.
    """
    rewards = np.zeros(len(record.actions), dtype=np.float64)
    if not record.goal_events:
        rewards[-1] = -no_event_penalty
        return rewards
    for i, (event, t) in enumerate(zip(record.goal_events, record.trigger_steps)):
        base = -penalty_success if outcome.reached[i] else reward_fail
        count = frequencies.get(event, 0)
        rewards[t] += base + exploration_bonus(count)
        frequencies[event] = count + 1
    return rewards


def fill_bc_buffer(
    record: RolloutRecord,
    outcome: StudentOutcome,
    buffer: BCBuffer,
    db: SynonymDB,
    embedder,
    instruction_rng: np.random.Generator,
) -> int:
    """Teacher segments for goals the student missed become demonstrations.

    The segment for goal i runs from just after the previous goal's trigger
    step through goal i's own trigger step, each step labeled with one freshly
    sampled train-partition instruction for goal i. Returns tuples inserted.
    """
    inserted = 0
    for i, event in enumerate(record.goal_events):
        if outcome.reached[i]:
            continue
        seg_start = record.trigger_steps[i - 1] + 1 if i > 0 else 0
        seg_end = record.trigger_steps[i]
        inst = instructor.sample_instruction(db, event, instruction_rng, include_holdout=False)
        goal_vec = embedder.encode(inst.text, event)
        for t in range(seg_start, seg_end + 1):
            buffer.push(record.stacks[t], goal_vec, int(record.actions[t]))
            inserted += 1
    return inserted


class RandomActor:
    """Uniform action choice; what 'untrained teacher' means in baselines."""

    def __init__(self, n_actions: int, teacher_id: int = -1) -> None:
        self.n_actions = n_actions
        self.teacher_id = teacher_id

    def act(self, input_vec: np.ndarray, rng: np.random.Generator) -> int:
        del input_vec
        rng.random()  # keep the draw pattern identical to epsilon-greedy actors
        return int(rng.integers(self.n_actions))


class _AgentActor:
    """Binds an Agent to a teacher id for rollout bookkeeping."""

    def __init__(self, agent: Agent, teacher_id: int = -1) -> None:
        self.agent = agent
        self.teacher_id = teacher_id

    def act(self, input_vec: np.ndarray, rng: np.random.Generator) -> int:
        return self.agent.act(input_vec, rng)


@dataclass
class TrainResult:
    metrics_rows: list[dict]
    eval_rows: list[dict]
    rollouts_done: int
    env_steps_total: int
    checkpoint_dir: Path
    final_success: float | None = None


def _rollout_rngs(master_seed: int, rollout: int) -> dict[str, np.random.Generator]:
    """Independent generators for each random decision inside one rollout."""
    root = np.random.SeedSequence(entropy=master_seed, spawn_key=(rollout,))
    names = ("env", "teacher", "student", "instruction", "bc", "update_t", "update_s")
    children = root.spawn(len(names))
    return {name: np.random.default_rng(seq) for name, seq in zip(names, children)}


def _update_agent_rl(agent: Agent, replay: ReplayBuffer, rng: np.random.Generator) -> float | None:
    """One pure TD update; returns the loss or None if replay is still short."""
    if replay.size < agent.cfg.batch_size:
        return None
    batch = replay.sample(rng, agent.cfg.batch_size)
    loss, grads = d3qn_loss(batch, agent.net, agent.target, agent.cfg.discount)
    if not np.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite TD loss {loss}")
    grad_step(agent.net, grads, agent.adam, agent.cfg)
    soft_update(agent.net, agent.target, agent.cfg.tau)
    agent.grad_steps += 1
    return loss


def _update_student(
    student: Agent,
    replay: ReplayBuffer,
    bc_buf: BCBuffer,
    bc_coeff: float,
    use_bc: bool,
    rng: np.random.Generator,
) -> tuple[float | None, float | None, float]:
    """One student update mixing TD and imitation terms.

    The imitation coefficient moves only on steps that actually computed an
    imitation loss; with no demonstrations yet there is nothing to balance.
    Returns (rl_loss, bc_loss, new_coeff).
    """
    if replay.size < student.cfg.batch_size:
        return None, None, bc_coeff
    batch = replay.sample(rng, student.cfg.batch_size)
    rl, rl_grads = d3qn_loss(batch, student.net, student.target, student.cfg.discount)
    bc_val = None
    bc_grads = None
    if use_bc and bc_buf.size > 0:
        bc_inputs, bc_actions = bc_buf.sample(rng, student.cfg.batch_size)
        bc_val, bc_grads = bc_loss(bc_inputs, bc_actions, student.net)
    if not np.isfinite(rl) or (bc_val is not None and not np.isfinite(bc_val)):
        raise TrainingDivergenceError(f"non-finite loss rl={rl} bc={bc_val}")
    grad_step(
        student.net,
        combine_grads(rl_grads, bc_grads, bc_coeff),
        student.adam,
        student.cfg,
    )
    soft_update(student.net, student.target, student.cfg.tau)
    student.grad_steps += 1
    if bc_val is not None:
        bc_coeff = update_bc_coeff(
            bc_coeff, rl, bc_val, student.cfg.bc_ratio, student.cfg.bc_coeff_lr,
            student.cfg.bc_coeff_max,
        )
    return rl, bc_val, bc_coeff


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _truncate_rows(path: Path, header: str, keep_up_to: int) -> bool:
    """Drop CSV rows past a rollout; returns whether the file existed."""
    if not path.exists():
        return False
    lines = path.read_text(encoding="utf-8").splitlines()
    kept = [lines[0] if lines else header]
    for line in lines[1:]:
        head = line.split(",", 1)[0]
        if head.isdigit() and int(head) <= keep_up_to:
            kept.append(line)
    path.write_text("\n".join(kept) + "\n", encoding="utf-8")
    return True


class _MetricsWriter:
    """Streams deterministic CSV rows; wall-clock goes to a sidecar file.

    On resume the existing files are kept, trimmed back to the checkpoint's
    rollout, and appended to, so an interrupted run converges to the same
    bytes an uninterrupted one would have produced.
    """

    def __init__(self, metrics_path: Path, resume_rollout: int | None = None) -> None:
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        self.metrics_path = metrics_path
        self.timings_path = metrics_path.with_name("timings.csv")
        self.eval_path = metrics_path.with_name("eval_snapshots.csv")
        self.resume_rollout = resume_rollout
        self._metrics_fh = None
        self._timings_fh = None
        self._eval_fh = None

    def _open(self, path: Path, header: str):
        if self.resume_rollout is not None and _truncate_rows(path, header, self.resume_rollout):
            return open(path, "a", encoding="utf-8", newline="")
        fh = open(path, "w", encoding="utf-8", newline="")
        fh.write(header + "\n")
        return fh

    def __enter__(self) -> "_MetricsWriter":
        self._metrics_fh = self._open(self.metrics_path, ",".join(METRICS_COLUMNS))
        self._timings_fh = self._open(self.timings_path, "rollout,wall_ms")
        if self.resume_rollout is not None and self.eval_path.exists():
            self._eval_fh = self._open(self.eval_path, EVAL_COLUMNS_HEADER)
        return self

    def __exit__(self, *exc) -> None:
        for fh in (self._metrics_fh, self._timings_fh, self._eval_fh):
            if fh:
                fh.close()

    def row(self, values: dict, wall_ms: float) -> None:
        self._metrics_fh.write(",".join(_fmt(values[c]) for c in METRICS_COLUMNS) + "\n")
        self._metrics_fh.flush()
        self._timings_fh.write(f"{values['rollout']},{wall_ms:.3f}\n")
        self._timings_fh.flush()

    def eval_row(self, values: dict) -> None:
        if self._eval_fh is None:
            self._eval_fh = open(self.eval_path, "w", encoding="utf-8", newline="")
            self._eval_fh.write(EVAL_COLUMNS_HEADER + "\n")
        self._eval_fh.write(
            f"{values['rollout']},{_fmt(values['success_rate'])},"
            f"{values['events_reached']},{values['events_total']}\n"
        )
        self._eval_fh.flush()


def _save_run_state(
    directory: Path,
    *,
    cfg_hash: str,
    resume_hash: str,
    rollout: int,
    frequencies: dict[Event, int],
    bc_coeff: float,
    env_steps_total: int,
    master_seed: int,
) -> None:
    doc = {
        "config_hash": cfg_hash,
        "train_hash": resume_hash,
        "rollout": rollout,
        "master_seed": master_seed,
        "bc_coeff": bc_coeff,
        "env_steps_total": env_steps_total,
        "event_frequencies": {e.encode(): n for e, n in sorted(frequencies.items(), key=lambda kv: kv[0].encode())},
    }
    (directory / RUN_STATE_NAME).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _load_run_state(directory: Path) -> dict:
    doc = json.loads((directory / RUN_STATE_NAME).read_text(encoding="utf-8"))
    doc["event_frequencies"] = {
        Event.parse(k): v for k, v in doc["event_frequencies"].items()
    }
    return doc


def _save_replay_arrays(path: Path, replay: ReplayBuffer, bc_buf: BCBuffer | None) -> None:
    arrays = {
        "replay_obs": replay.obs,
        "replay_goals": replay.goals,
        "replay_actions": replay.actions,
        "replay_rewards": replay.rewards,
        "replay_next_obs": replay.next_obs,
        "replay_dones": replay.dones,
        "replay_count": np.array([replay.count]),
    }
    if bc_buf is not None:
        arrays.update(
            bc_obs=bc_buf.obs,
            bc_goals=bc_buf.goals,
            bc_actions=bc_buf.actions,
            bc_count=np.array([bc_buf.count]),
        )
    np.savez_compressed(path, **arrays)


def _load_replay_arrays(path: Path, replay: ReplayBuffer, bc_buf: BCBuffer | None) -> None:
    data = np.load(path)
    replay.obs[:] = data["replay_obs"]
    replay.goals[:] = data["replay_goals"]
    replay.actions[:] = data["replay_actions"]
    replay.rewards[:] = data["replay_rewards"]
    replay.next_obs[:] = data["replay_next_obs"]
    replay.dones[:] = data["replay_dones"]
    replay.count = int(data["replay_count"][0])
    if bc_buf is not None and "bc_obs" in data:
        bc_buf.obs[:] = data["bc_obs"]
        bc_buf.goals[:] = data["bc_goals"]
        bc_buf.actions[:] = data["bc_actions"]
        bc_buf.count = int(data["bc_count"][0])


def train(
    cfg: RunConfig,
    *,
    db: SynonymDB | None = None,
    callbacks: list | None = None,
    resume: bool = False,
    log=None,
) -> TrainResult:
    """Run the full loop and leave metrics plus checkpoints on disk.

    ``callbacks`` receive each metrics row as a dict. ``log`` is an optional
    ``print``-like sink for progress lines.
    """
    from . import evalkit  # deferred: evalkit imports this module's records

    cfg.validate()
    grid_config = cfg.grid_config()
    trainer_cfg = cfg.trainer_config()
    allowed_kinds = cfg.allowed_event_kinds()
    embedder = embed_mod.make_embedder(cfg.embedder_spec())
    cfg_hash = config_hash(cfg)
    resume_hash = train_hash(cfg)

    if db is None:
        db, meta = instructor.load_db(cfg.synonym_db)
        expected = db_hash(cfg)
        found = meta.get("config_hash")
        if found is not None and found != expected:
            raise IOError(
                f"synonym DB {cfg.synonym_db} was generated under config hash {found}, "
                f"this run expects {expected}"
            )

    testset = None
    if cfg.eval_interval or cfg.train_on_testset:
        testset = evalkit.load_testset(cfg.testset)
        expected = testset_hash(cfg)
        found = testset.meta.get("config_hash")
        if found is not None and found != expected:
            raise IOError(
                f"testset {cfg.testset} was generated under config hash {found}, "
                f"this run expects {expected}"
            )

    stack_dim = cfg.frame_stack * 7 * 7 * 3
    student_dim = stack_dim + embedder.dim
    seed_root = np.random.SeedSequence(entropy=cfg.master_seed, spawn_key=(0,))
    init_seeds = seed_root.generate_state(cfg.n_teachers + 1)
    teachers = [
        Agent.fresh(stack_dim, trainer_cfg, int(init_seeds[i])) for i in range(cfg.n_teachers)
    ]
    student = Agent.fresh(student_dim, trainer_cfg, int(init_seeds[-1]))

    teacher_replays = [
        ReplayBuffer(trainer_cfg.replay_capacity, stack_dim, 0) for _ in range(cfg.n_teachers)
    ]
    student_replay = ReplayBuffer(trainer_cfg.replay_capacity, stack_dim, embedder.dim)
    bc_buf = BCBuffer(trainer_cfg.bc_capacity, stack_dim, embedder.dim)

    frequencies: dict[Event, int] = {}
    bc_coeff = 0.0 if cfg.no_bcl else trainer_cfg.bc_coeff_init
    start_rollout = 0
    env_steps_total = 0

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    if resume:
        state_doc = _load_run_state(ckpt_dir)
        if state_doc.get("train_hash") != resume_hash:
            raise IOError(
                f"checkpoint dir {ckpt_dir} belongs to a run with training hash "
                f"{state_doc.get('train_hash')}, this config gives {resume_hash}"
            )
        start_rollout = state_doc["rollout"]
        frequencies = state_doc["event_frequencies"]
        bc_coeff = state_doc["bc_coeff"]
        env_steps_total = state_doc["env_steps_total"]
        for i in range(cfg.n_teachers):
            teachers[i], _ = load_checkpoint(ckpt_dir / f"teacher_{i}.npz", trainer_cfg)
        student, _ = load_checkpoint(ckpt_dir / "student.npz", trainer_cfg)
        replay_path = ckpt_dir / "replay.npz"
        if replay_path.exists():
            _load_replay_arrays(replay_path, student_replay, bc_buf)
            for i in range(cfg.n_teachers):
                _load_replay_arrays(ckpt_dir / f"replay_teacher_{i}.npz", teacher_replays[i], None)
        elif log:
            log("resume: no saved replay, continuing with empty buffers")

    def save_all(rollout: int) -> None:
        echo = {"config_hash": cfg_hash}
        for i, teacher in enumerate(teachers):
            save_checkpoint(ckpt_dir / f"teacher_{i}.npz", teacher, config_echo=echo)
        save_checkpoint(
            ckpt_dir / "student.npz",
            student,
            extra_scalars={"bc_coeff": bc_coeff},
            config_echo=echo,
        )
        if cfg.save_replay:
            _save_replay_arrays(ckpt_dir / "replay.npz", student_replay, bc_buf)
            for i, replay in enumerate(teacher_replays):
                _save_replay_arrays(ckpt_dir / f"replay_teacher_{i}.npz", replay, None)
        _save_run_state(
            ckpt_dir,
            cfg_hash=cfg_hash,
            resume_hash=resume_hash,
            rollout=rollout,
            frequencies=frequencies,
            bc_coeff=bc_coeff,
            env_steps_total=env_steps_total,
            master_seed=cfg.master_seed,
        )

    metrics_rows: list[dict] = []
    eval_rows: list[dict] = []
    final_success: float | None = None
    callbacks = callbacks or []
    t_start = time.monotonic()

    with _MetricsWriter(
        Path(cfg.metrics_csv), resume_rollout=start_rollout if resume else None
    ) as writer:
        rollout = start_rollout
        try:
            while rollout < cfg.total_rollouts:
                rollout += 1
                row_t0 = time.perf_counter()
                rngs = _rollout_rngs(cfg.master_seed, rollout)

                teacher_idx = rollout % cfg.n_teachers
                teacher = teachers[teacher_idx]

                if cfg.train_on_testset:
                    case = testset.cases[(rollout - 1) % len(testset.cases)]
                    record = RolloutRecord(
                        teacher_id=-1,
                        env_seed=case.env_seed,
                        states=[],
                        stacks=np.zeros((0, stack_dim), dtype=np.int8),
                        actions=np.zeros(0, dtype=np.int64),
                        step_events=[],
                        goal_events=list(case.events),
                        trigger_steps=list(range(len(case.events))),
                    )
                else:
                    actor = (
                        RandomActor(teacher.net.n_actions, teacher_idx)
                        if cfg.random_teachers
                        else _AgentActor(teacher, teacher_idx)
                    )
                    env_seed = int(rngs["env"].integers(2**63))
                    record = run_teacher_rollout(
                        grid_config,
                        actor,
                        env_seed,
                        rngs["teacher"],
                        cfg.frame_stack,
                        allowed_kinds,
                    )
                    if cfg.random_teachers:
                        teacher.env_steps += len(record.actions)

                outcome, transitions = run_student_rollout(
                    record,
                    grid_config,
                    _AgentActor(student),
                    db,
                    embedder,
                    rngs["student"],
                    rngs["instruction"],
                    trainer_cfg.student_goal_reward,
                    cfg.frame_stack,
                )
                for tr in transitions:
                    student_replay.push(tr.obs, tr.goal, tr.action, tr.reward, tr.next_obs, tr.done)

                teacher_reward_sum = 0.0
                if not cfg.train_on_testset:
                    rewards = distribute_rewards(
                        record,
                        outcome,
                        frequencies,
                        penalty_success=trainer_cfg.teacher_penalty_success,
                        reward_fail=trainer_cfg.teacher_reward_fail,
                        no_event_penalty=trainer_cfg.teacher_no_event_penalty,
                    )
                    teacher_reward_sum = float(rewards.sum())
                    replay = teacher_replays[teacher_idx]
                    last = len(record.actions) - 1
                    for t in range(len(record.actions)):
                        replay.push(
                            record.stacks[t],
                            np.zeros(0),
                            int(record.actions[t]),
                            float(rewards[t]),
                            record.stacks[t + 1],
                            t == last,
                        )
                    if not cfg.no_bcl:
                        fill_bc_buffer(record, outcome, bc_buf, db, embedder, rngs["bc"])

                rl_losses: list[float] = []
                bc_losses: list[float] = []
                for _ in range(trainer_cfg.updates_per_rollout):
                    if not cfg.train_on_testset and not cfg.random_teachers:
                        _update_agent_rl(teacher, teacher_replays[teacher_idx], rngs["update_t"])
                    rl, bc, bc_coeff = _update_student(
                        student,
                        student_replay,
                        bc_buf,
                        bc_coeff,
                        use_bc=not cfg.no_bcl and not cfg.train_on_testset,
                        rng=rngs["update_s"],
                    )
                    if rl is not None:
                        rl_losses.append(rl)
                    if bc is not None:
                        bc_losses.append(bc)

                env_steps_total += len(record.actions) + outcome.steps_used

                row = {
                    "rollout": rollout,
                    "teacher_id": record.teacher_id,
                    "n_events": len(record.goal_events),
                    "n_reached": outcome.n_reached,
                    "teacher_reward_sum": teacher_reward_sum,
                    "student_reward_sum": trainer_cfg.student_goal_reward * outcome.n_reached,
                    "rl_loss": float(np.mean(rl_losses)) if rl_losses else 0.0,
                    "bc_loss": float(np.mean(bc_losses)) if bc_losses else 0.0,
                    "bc_coeff": bc_coeff,
                    "epsilon_student": student.epsilon,
                }
                wall_ms = (time.perf_counter() - row_t0) * 1000.0
                writer.row(row, wall_ms)
                metrics_rows.append(row)
                for cb in callbacks:
                    cb(row)

                if cfg.eval_interval and rollout % cfg.eval_interval == 0:
                    report = evalkit.eval_success(
                        student.net,
                        testset,
                        db,
                        embedder,
                        mode=cfg.eval_mode,
                        grid_config=grid_config,
                        sample_seed=cfg.eval_seed,
                        frame_stack=cfg.frame_stack,
                    )
                    final_success = report.success_rate
                    ev_row = {
                        "rollout": rollout,
                        "success_rate": report.success_rate,
                        "events_reached": report.events_reached,
                        "events_total": report.events_total,
                    }
                    writer.eval_row(ev_row)
                    eval_rows.append(ev_row)
                    if log:
                        elapsed = time.monotonic() - t_start
                        log(
                            f"rollout {rollout}/{cfg.total_rollouts} "
                            f"success {report.success_rate:.2f} "
                            f"env_steps {env_steps_total} "
                            f"eps {row['epsilon_student']:.3f} [{elapsed:.0f}s]"
                        )

                if cfg.checkpoint_interval and rollout % cfg.checkpoint_interval == 0:
                    save_all(rollout)

                if cfg.max_env_steps and env_steps_total >= cfg.max_env_steps:
                    break
        except TrainingDivergenceError:
            save_all(rollout)
            raise

        save_all(rollout)

    return TrainResult(
        metrics_rows=metrics_rows,
        eval_rows=eval_rows,
        rollouts_done=rollout,
        env_steps_total=env_steps_total,
        checkpoint_dir=ckpt_dir,
        final_success=final_success,
    )
