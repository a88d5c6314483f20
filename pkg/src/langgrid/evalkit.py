"""Test-set generation, success scoring, and value-vs-wording analysis.

A test set is a bank of worlds plus the ordered event sequence a random agent
produced in each one. Scoring replays a world with the greedy student and the
case's events as its goal queue; a case passes only if every event completes
in order within the episode budget. The analysis pass reuses the same replays
to ask how the student's value estimates move as an instruction's wording
drifts away from the root phrasing in embedding space.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import instructor
from .envgrid import Event, EventKind, GridConfig, new_env, step
from .instructor import SynonymDB
from .orchestrator import RolloutRecord, run_student_rollout
from .qlearn import QNet

TESTSET_FORMAT = "langgrid-testset"
TESTSET_VERSION = 1

EVAL_MODES = ("train_synonyms", "holdout_synonyms", "onehot")


class TestSetError(IOError):
    """A test-set file is missing, malformed, or fails verification."""


@dataclass(frozen=True)
class TestCase:
    env_seed: int
    action_seed: int
    events: tuple[Event, ...]


@dataclass
class TestSet:
    cases: list[TestCase]
    meta: dict


@dataclass
class CaseResult:
    case_index: int
    success: bool
    events_reached: int
    events_total: int
    steps_used: int


@dataclass
class EvalReport:
    mode: str
    case_results: list[CaseResult]

    @property
    def success_rate(self) -> float:
        if not self.case_results:
            return 0.0
        return sum(r.success for r in self.case_results) / len(self.case_results)

    @property
    def events_reached(self) -> int:
        return sum(r.events_reached for r in self.case_results)

    @property
    def events_total(self) -> int:
        return sum(r.events_total for r in self.case_results)


@dataclass(frozen=True)
class QDistancePoint:
    event: Event
    synonym_index: int
    distance: float
    mean_max_q: float
    occurrences: int


def _random_episode_events(
    grid_config: GridConfig,
    env_seed: int,
    action_seed: int,
    n_steps: int,
    allowed_kinds: tuple[EventKind, ...],
) -> tuple[Event, ...]:
    """Uniform-random actions from a fixed seed; ordered kind-filtered events."""
    gen_config = dataclasses.replace(grid_config, max_steps=n_steps)
    state = new_env(gen_config, env_seed)
    rng = np.random.default_rng(action_seed)
    out: list[Event] = []
    for _ in range(n_steps):
        state, events = step(state, int(rng.integers(7)))
        out.extend(ev for ev in events if ev.kind in allowed_kinds)
    return tuple(out)


def gen_testset(
    grid_config: GridConfig,
    n_cases: int,
    n_steps: int,
    seed: int,
    allowed_kinds: tuple[EventKind, ...] = tuple(EventKind),
    config_hash: str | None = None,
) -> TestSet:
    """Roll random-agent episodes until n_cases of them have at least one
    event; eventless attempts are discarded and the next derived seed pair is
    tried, so the file is a pure function of the arguments."""
    cases: list[TestCase] = []
    attempt = 0
    while len(cases) < n_cases:
        seq = np.random.SeedSequence(entropy=seed, spawn_key=(attempt,))
        env_seed, action_seed = (int(s) for s in seq.generate_state(2, dtype=np.uint64))
        attempt += 1
        events = _random_episode_events(grid_config, env_seed, action_seed, n_steps, allowed_kinds)
        if events:
            cases.append(TestCase(env_seed=env_seed, action_seed=action_seed, events=events))
    meta = {
        "format": TESTSET_FORMAT,
        "version": TESTSET_VERSION,
        "steps": n_steps,
        "cases": n_cases,
        "master_seed": seed,
        "event_kinds": ",".join(k.name for k in allowed_kinds),
    }
    if config_hash is not None:
        meta["config_hash"] = config_hash
    return TestSet(cases=cases, meta=meta)


def verify_testset(testset: TestSet, grid_config: GridConfig) -> None:
    """Replay every case from its seeds; raises on any event-list mismatch."""
    kinds = tuple(EventKind[n] for n in testset.meta["event_kinds"].split(","))
    for i, case in enumerate(testset.cases):
        replayed = _random_episode_events(
            grid_config, case.env_seed, case.action_seed, testset.meta["steps"], kinds
        )
        if replayed != case.events:
            raise TestSetError(f"case {i} does not replay to its recorded events")


def save_testset(testset: TestSet, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(testset.meta, sort_keys=True)]
    for case in testset.cases:
        lines.append(
            json.dumps(
                {
                    "env_seed": case.env_seed,
                    "action_seed": case.action_seed,
                    "events": [ev.encode() for ev in case.events],
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_testset(path: str | Path) -> TestSet:
    path = Path(path)
    if not path.exists():
        raise TestSetError(f"no test-set file at {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise TestSetError(f"{path} is empty")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TestSetError(f"{path} line 1: bad metadata: {exc}") from exc
    if meta.get("format") != TESTSET_FORMAT or meta.get("version") != TESTSET_VERSION:
        raise TestSetError(f"{path} is not a version-{TESTSET_VERSION} test-set file")
    cases = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            cases.append(
                TestCase(
                    env_seed=int(doc["env_seed"]),
                    action_seed=int(doc["action_seed"]),
                    events=tuple(Event.parse(e) for e in doc["events"]),
                )
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise TestSetError(f"{path} line {lineno}: {exc}") from exc
    if not cases:
        raise TestSetError(f"{path} holds no cases")
    for i, case in enumerate(cases):
        if not case.events:
            raise TestSetError(f"{path}: case {i} has no events")
    return TestSet(cases=cases, meta=meta)


class _GreedyActor:
    """Argmax policy over a q_values callable; ties go to the lowest action."""

    def __init__(self, q_values) -> None:
        self.q_values = q_values

    def act(self, input_vec: np.ndarray, rng: np.random.Generator) -> int:
        del rng
        return int(np.argmax(self.q_values(input_vec)))


def _net_q(net: QNet):
    def q_values(input_vec: np.ndarray) -> np.ndarray:
        return net.forward(input_vec[None, :])[0]

    return q_values


def _case_record(case: TestCase) -> RolloutRecord:
    return RolloutRecord(
        teacher_id=-1,
        env_seed=case.env_seed,
        states=[],
        stacks=np.zeros((0, 0), dtype=np.int8),
        actions=np.zeros(0, dtype=np.int64),
        step_events=[],
        goal_events=list(case.events),
        trigger_steps=list(range(len(case.events))),
    )


def _case_rng(sample_seed: int, case_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=sample_seed, spawn_key=(case_index,))
    )


def _play_case(
    q_values,
    case: TestCase,
    case_index: int,
    db: SynonymDB,
    embedder,
    mode: str,
    grid_config: GridConfig,
    sample_seed: int,
    frame_stack: int,
):
    """One greedy rollout against a case's goal queue; deterministic per index."""
    outcome, transitions = run_student_rollout(
        _case_record(case),
        grid_config,
        _GreedyActor(q_values),
        db,
        embedder,
        np.random.default_rng(0),  # greedy actor never draws from it
        _case_rng(sample_seed, case_index),
        goal_reward=1.0,
        frame_stack=frame_stack,
        include_holdout=mode == "holdout_synonyms",
    )
    return outcome, transitions


def _eval_case_worker(args) -> CaseResult:
    (net, case, case_index, db, embedder, mode, grid_config, sample_seed, frame_stack) = args
    outcome, _ = _play_case(
        _net_q(net), case, case_index, db, embedder, mode, grid_config, sample_seed, frame_stack
    )
    return CaseResult(
        case_index=case_index,
        success=all(outcome.reached),
        events_reached=outcome.n_reached,
        events_total=len(case.events),
        steps_used=outcome.steps_used,
    )


def eval_success(
    net: QNet,
    testset: TestSet,
    db: SynonymDB,
    embedder,
    *,
    mode: str,
    grid_config: GridConfig,
    sample_seed: int,
    frame_stack: int,
    workers: int = 1,
) -> EvalReport:
    """Score the whole test set with the greedy student.

    Cases are independent, so worker count cannot change the report; results
    are collected in case order either way.
    """
    if mode not in EVAL_MODES:
        raise ValueError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    expected = frame_stack * 7 * 7 * 3 + embedder.dim
    if net.input_dim != expected:
        raise ValueError(
            f"checkpoint expects input dim {net.input_dim}, "
            f"frame stack plus embedder give {expected}"
        )
    jobs = [
        (net, case, i, db, embedder, mode, grid_config, sample_seed, frame_stack)
        for i, case in enumerate(testset.cases)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_case_worker, jobs))
    else:
        results = [_eval_case_worker(job) for job in jobs]
    return EvalReport(mode=mode, case_results=results)


def collect_goal_states(
    q_values,
    testset: TestSet,
    db: SynonymDB,
    embedder,
    *,
    grid_config: GridConfig,
    sample_seed: int,
    frame_stack: int,
) -> list[tuple[Event, np.ndarray]]:
    """Greedy replays of every case, keeping (event, observation stack) for
    each completed goal. The stack is the one the student saw when it chose
    the action that completed the event."""
    occurrences: list[tuple[Event, np.ndarray]] = []
    for i, case in enumerate(testset.cases):
        outcome, transitions = _play_case(
            q_values, case, i, db, embedder, "train_synonyms",
            grid_config, sample_seed, frame_stack,
        )
        for goal_i, t in enumerate(outcome.completion_steps):
            if t is not None:
                occurrences.append((case.events[goal_i], transitions[t].obs))
    return occurrences


def score_occurrences(
    q_values,
    occurrences: list[tuple[Event, np.ndarray]],
    db: SynonymDB,
    embedder,
) -> tuple[list[QDistancePoint], float]:
    """Per-synonym value summary over collected goal completions.

    For each event that completed at least once, every synonym (train and
    holdout) is swapped into the stored stacks and the max action value is
    averaged over occurrences. Distance is measured from the root phrasing's
    embedding. The trend is a within-event least-squares slope: distances and
    values are centered per event before fitting, so events whose overall
    value level differs for reasons unrelated to phrasing (trigger frequency,
    reward timing) do not masquerade as a phrasing trend. It is nan when fewer
    than two distinct centered distances exist.
    """
    by_event: dict[Event, list[np.ndarray]] = {}
    for event, stack in occurrences:
        by_event.setdefault(event, []).append(stack)

    points: list[QDistancePoint] = []
    # vocabulary order (kind, then color, then object kind), not emission order
    for event in sorted(by_event, key=lambda e: (int(e.kind), e.color, int(e.obj_kind))):
        stacks = by_event[event]
        syn_set = db[event]
        root_vec = embedder.encode(syn_set.root, event)
        for syn_i, text in enumerate(syn_set.all_synonyms):
            vec = embedder.encode(text, event)
            total = 0.0
            for stack in stacks:
                q = q_values(np.concatenate([stack.astype(np.float64), vec]))
                total += float(np.max(q))
            points.append(
                QDistancePoint(
                    event=event,
                    synonym_index=syn_i,
                    distance=float(np.linalg.norm(vec - root_vec)),
                    mean_max_q=total / len(stacks),
                    occurrences=len(stacks),
                )
            )

    xs = np.array([p.distance for p in points])
    ys = np.array([p.mean_max_q for p in points])
    for event in by_event:
        m = np.array([p.event == event for p in points])
        xs[m] -= xs[m].mean()
        ys[m] -= ys[m].mean()
    if len(points) < 2 or np.unique(xs).size < 2:
        return points, float("nan")
    slope = float(np.polyfit(xs, ys, 1)[0])
    return points, slope


def q_distance_analysis(
    net_or_q,
    testset: TestSet,
    db: SynonymDB,
    embedder,
    *,
    grid_config: GridConfig,
    sample_seed: int,
    frame_stack: int,
) -> tuple[list[QDistancePoint], float]:
    """Full pipeline: greedy replays find goal completions, then every
    synonym's value is charted against its embedding distance from the root.
    Accepts either a QNet or a bare q_values callable."""
    q_values = _net_q(net_or_q) if isinstance(net_or_q, QNet) else net_or_q
    occurrences = collect_goal_states(
        q_values, testset, db, embedder,
        grid_config=grid_config, sample_seed=sample_seed, frame_stack=frame_stack,
    )
    return score_occurrences(q_values, occurrences, db, embedder)


def save_case_csv(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["case_index,success,events_reached,events_total,steps_used"]
    for r in report.case_results:
        lines.append(
            f"{r.case_index},{int(r.success)},{r.events_reached},{r.events_total},{r.steps_used}"
        )
    lines.append(f"# success_rate,{report.success_rate!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_analysis_csv(points: list[QDistancePoint], slope: float, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["event,synonym_index,distance,mean_max_q,occurrences"]
    for p in points:
        lines.append(
            f"{p.event.encode()},{p.synonym_index},{p.distance!r},{p.mean_max_q!r},{p.occurrences}"
        )
    lines.append(f"# trend_slope,{slope!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
