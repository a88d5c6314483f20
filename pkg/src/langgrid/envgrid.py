"""Multi-room gridworld with egocentric partial observation and event detection.

The world is a square lattice of rooms separated by walls, with one door in
every shared wall. Balls, boxes and keys are scattered over the floor; some
doors are locked and open only for a carried key of the same color. The agent
turns, moves, picks up, drops and toggles; everything else is a silent no-op.

Stepping is pure: ``step(state, action)`` returns a fresh state and the list
of events whose predicate went from false to true across the transition.
Events are the only thing downstream code ever reacts to, so their emission
rule (rising edge, fixed intra-step order) lives here and nowhere else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

STATE_FORMAT_VERSION = 1

COLOR_NAMES = ("red", "green", "blue", "grey", "purple", "yellow")
N_COLORS = len(COLOR_NAMES)


class GridConfigError(ValueError):
    """Configuration that cannot be realized (capacity, bad counts)."""


class CellKind(IntEnum):
    # Numeric order of BALL..DOOR doubles as the canonical object-kind order.
    UNSEEN = 0
    FLOOR = 1
    WALL = 2
    BALL = 3
    BOX = 4
    KEY = 5
    DOOR = 6


# Kinds that can occupy a floor cell and appear in events.
OBJ_KINDS = (CellKind.BALL, CellKind.BOX, CellKind.KEY, CellKind.DOOR)
PORTABLE_KINDS = (CellKind.BALL, CellKind.BOX, CellKind.KEY)

OBJ_KIND_NAMES = {
    CellKind.BALL: "ball",
    CellKind.BOX: "box",
    CellKind.KEY: "key",
    CellKind.DOOR: "door",
}
OBJ_KIND_BY_NAME = {v: k for k, v in OBJ_KIND_NAMES.items()}


class DoorState(IntEnum):
    NONE = 0
    OPEN = 1
    CLOSED = 2
    LOCKED = 3


class Direction(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3


# (row delta, col delta); row 0 is the top of the grid.
DIR_VEC = {
    Direction.NORTH: (-1, 0),
    Direction.EAST: (0, 1),
    Direction.SOUTH: (1, 0),
    Direction.WEST: (0, -1),
}


class Action(IntEnum):
    TURN_LEFT = 0
    TURN_RIGHT = 1
    MOVE_FORWARD = 2
    PICKUP = 3
    DROP = 4
    TOGGLE = 5
    DONE = 6


N_ACTIONS = len(Action)

VIEW_SIZE = 7
# Agent cell inside its own egocentric window, facing toward row 0.
VIEW_AGENT_POS = (6, 3)


class EventKind(IntEnum):
    FACING = 0
    HOLDING = 1
    OPENED = 2


# Emission order inside a single step differs from vocabulary order.
_EMIT_PRIORITY = {EventKind.OPENED: 0, EventKind.HOLDING: 1, EventKind.FACING: 2}


@dataclass(frozen=True)
class Event:
    """A predicate over world state, identified by kind, color and object kind."""

    kind: EventKind
    color: int
    obj_kind: CellKind

    def encode(self) -> str:
        return f"{self.kind.name}:{COLOR_NAMES[self.color]}:{OBJ_KIND_NAMES[self.obj_kind]}"

    @classmethod
    def parse(cls, text: str) -> "Event":
        try:
            kind_s, color_s, obj_s = text.split(":")
            return cls(EventKind[kind_s], COLOR_NAMES.index(color_s), OBJ_KIND_BY_NAME[obj_s])
        except (ValueError, KeyError) as exc:
            raise ValueError(f"bad event string {text!r}") from exc

    def sort_key(self) -> tuple[int, int, int]:
        return (_EMIT_PRIORITY[self.kind], self.color, int(self.obj_kind))


@dataclass(frozen=True)
class GridConfig:
    """Static world parameters. Everything else about a world comes from a seed."""

    rooms_per_side: int = 3
    room_interior: int = 6
    n_balls: int = 5
    n_boxes: int = 5
    n_keys: int = 5
    locked_door_fraction: float = 0.25
    max_steps: int = 115
    colors: tuple[str, ...] = COLOR_NAMES

    @property
    def size(self) -> int:
        return self.rooms_per_side * (self.room_interior + 1) + 1

    def validate(self) -> None:
        if self.rooms_per_side < 1 or self.room_interior < 1:
            raise GridConfigError("rooms_per_side and room_interior must be >= 1")
        if min(self.n_balls, self.n_boxes, self.n_keys) < 0:
            raise GridConfigError("object counts must be >= 0")
        if not 0.0 <= self.locked_door_fraction <= 1.0:
            raise GridConfigError("locked_door_fraction must lie in [0, 1]")
        if self.max_steps < 1:
            raise GridConfigError("max_steps must be >= 1")
        if len(self.colors) != N_COLORS or len(set(self.colors)) != N_COLORS:
            raise GridConfigError(f"colors must be {N_COLORS} distinct names")


@dataclass(frozen=True)
class ObjectSpec:
    kind: CellKind
    color: int
    position: tuple[int, int]
    door_state: DoorState = DoorState.NONE


@dataclass
class GridState:
    """Full world state. Cell contents live in three parallel int8 arrays."""

    config: GridConfig
    kinds: np.ndarray
    colors: np.ndarray
    states: np.ndarray
    agent_pos: tuple[int, int]
    agent_dir: Direction
    carried: tuple[CellKind, int] | None
    door_cells: tuple[tuple[int, int], ...]
    step_count: int
    rng_seed: int

    def copy(self) -> "GridState":
        return GridState(
            config=self.config,
            kinds=self.kinds.copy(),
            colors=self.colors.copy(),
            states=self.states.copy(),
            agent_pos=self.agent_pos,
            agent_dir=self.agent_dir,
            carried=self.carried,
            door_cells=self.door_cells,
            step_count=self.step_count,
            rng_seed=self.rng_seed,
        )

    @property
    def doors(self) -> list[ObjectSpec]:
        return [
            ObjectSpec(
                CellKind.DOOR,
                int(self.colors[r, c]),
                (r, c),
                DoorState(int(self.states[r, c])),
            )
            for r, c in self.door_cells
        ]

    def faced_cell(self) -> tuple[int, int]:
        dr, dc = DIR_VEC[self.agent_dir]
        return (self.agent_pos[0] + dr, self.agent_pos[1] + dc)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridState):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.colors, other.colors)
            and np.array_equal(self.states, other.states)
            and self.agent_pos == other.agent_pos
            and self.agent_dir == other.agent_dir
            and self.carried == other.carried
            and self.door_cells == other.door_cells
            and self.step_count == other.step_count
            and self.rng_seed == other.rng_seed
        )

    def to_json(self) -> str:
        """Canonical JSON: fixed field order, integer payload, stable across runs.

        The single float config field rides as a decimal string so every number
        in the document is an int.
        """
        cfg = self.config
        doc = {
            "version": STATE_FORMAT_VERSION,
            "config": {
                "rooms_per_side": cfg.rooms_per_side,
                "room_interior": cfg.room_interior,
                "n_balls": cfg.n_balls,
                "n_boxes": cfg.n_boxes,
                "n_keys": cfg.n_keys,
                "locked_door_fraction": repr(cfg.locked_door_fraction),
                "max_steps": cfg.max_steps,
                "colors": list(cfg.colors),
            },
            "kinds": self.kinds.tolist(),
            "colors": self.colors.tolist(),
            "states": self.states.tolist(),
            "agent_pos": list(self.agent_pos),
            "agent_dir": int(self.agent_dir),
            "carried": None if self.carried is None else [int(self.carried[0]), self.carried[1]],
            "door_cells": [list(p) for p in self.door_cells],
            "step_count": self.step_count,
            "rng_seed": self.rng_seed,
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GridState":
        doc = json.loads(text)
        if doc.get("version") != STATE_FORMAT_VERSION:
            raise ValueError(f"unsupported state version {doc.get('version')!r}")
        c = doc["config"]
        cfg = GridConfig(
            rooms_per_side=c["rooms_per_side"],
            room_interior=c["room_interior"],
            n_balls=c["n_balls"],
            n_boxes=c["n_boxes"],
            n_keys=c["n_keys"],
            locked_door_fraction=float(c["locked_door_fraction"]),
            max_steps=c["max_steps"],
            colors=tuple(c["colors"]),
        )
        carried = doc["carried"]
        return cls(
            config=cfg,
            kinds=np.array(doc["kinds"], dtype=np.int8),
            colors=np.array(doc["colors"], dtype=np.int8),
            states=np.array(doc["states"], dtype=np.int8),
            agent_pos=tuple(doc["agent_pos"]),
            agent_dir=Direction(doc["agent_dir"]),
            carried=None if carried is None else (CellKind(carried[0]), carried[1]),
            door_cells=tuple(tuple(p) for p in doc["door_cells"]),
            step_count=doc["step_count"],
            rng_seed=doc["rng_seed"],
        )


def new_env(config: GridConfig, seed: int) -> GridState:
    """Build a world from (config, seed) alone. Same pair, same world, always.

    Placement order is fixed: walls, doors (position, color, locked subset),
    then balls, boxes, keys, then the agent. Each draw comes from one shared
    generator so any config change upstream of a draw reshuffles the rest.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    size = config.size
    span = config.room_interior + 1

    kinds = np.full((size, size), CellKind.FLOOR, dtype=np.int8)
    colors = np.zeros((size, size), dtype=np.int8)
    states = np.zeros((size, size), dtype=np.int8)

    for k in range(config.rooms_per_side + 1):
        kinds[k * span, :] = CellKind.WALL
        kinds[:, k * span] = CellKind.WALL

    # One door per shared wall: horizontal-neighbor pairs first, then vertical,
    # both room-major, so the rng call order is pinned down.
    door_cells: list[tuple[int, int]] = []
    for room_r in range(config.rooms_per_side):
        for room_c in range(config.rooms_per_side - 1):
            wall_c = (room_c + 1) * span
            row = room_r * span + 1 + int(rng.integers(config.room_interior))
            door_cells.append((row, wall_c))
    for room_r in range(config.rooms_per_side - 1):
        for room_c in range(config.rooms_per_side):
            wall_r = (room_r + 1) * span
            col = room_c * span + 1 + int(rng.integers(config.room_interior))
            door_cells.append((wall_r, col))

    for r, c in door_cells:
        kinds[r, c] = CellKind.DOOR
        colors[r, c] = int(rng.integers(N_COLORS))
        states[r, c] = DoorState.CLOSED
    n_locked = round(config.locked_door_fraction * len(door_cells))
    if n_locked:
        for i in rng.choice(len(door_cells), size=n_locked, replace=False):
            states[door_cells[int(i)]] = DoorState.LOCKED

    free = [
        (r, c)
        for r in range(size)
        for c in range(size)
        if kinds[r, c] == CellKind.FLOOR
    ]

    def take_free() -> tuple[int, int]:
        if not free:
            raise GridConfigError("not enough floor cells for requested objects")
        return free.pop(int(rng.integers(len(free))))

    for kind, count in (
        (CellKind.BALL, config.n_balls),
        (CellKind.BOX, config.n_boxes),
        (CellKind.KEY, config.n_keys),
    ):
        for _ in range(count):
            r, c = take_free()
            kinds[r, c] = kind
            colors[r, c] = int(rng.integers(N_COLORS))

    agent_pos = take_free()
    agent_dir = Direction(int(rng.integers(4)))

    return GridState(
        config=config,
        kinds=kinds,
        colors=colors,
        states=states,
        agent_pos=agent_pos,
        agent_dir=agent_dir,
        carried=None,
        door_cells=tuple(door_cells),
        step_count=0,
        rng_seed=seed,
    )


def _cell_obj(state: GridState, pos: tuple[int, int]) -> tuple[CellKind, int] | None:
    """Object kind and color at pos, or None for floor/wall/out-of-grid."""
    r, c = pos
    if not (0 <= r < state.config.size and 0 <= c < state.config.size):
        return None
    kind = CellKind(int(state.kinds[r, c]))
    if kind in OBJ_KINDS:
        return (kind, int(state.colors[r, c]))
    return None


def _passable(state: GridState, pos: tuple[int, int]) -> bool:
    r, c = pos
    if not (0 <= r < state.config.size and 0 <= c < state.config.size):
        return False
    kind = int(state.kinds[r, c])
    if kind == CellKind.FLOOR:
        return True
    if kind == CellKind.DOOR:
        return int(state.states[r, c]) == DoorState.OPEN
    return False


def step(state: GridState, action: Action) -> tuple[GridState, list["Event"]]:
    """Apply one action. Illegal actions leave the world unchanged but still
    advance the step counter. Returns the new state and its rising-edge events."""
    if state.step_count >= state.config.max_steps:
        raise ValueError(
            f"episode over: step {state.step_count} >= max_steps {state.config.max_steps}"
        )
    nxt = state.copy()
    action = Action(action)

    if action == Action.TURN_LEFT:
        nxt.agent_dir = Direction((state.agent_dir - 1) % 4)
    elif action == Action.TURN_RIGHT:
        nxt.agent_dir = Direction((state.agent_dir + 1) % 4)
    elif action == Action.MOVE_FORWARD:
        target = state.faced_cell()
        if _passable(state, target):
            nxt.agent_pos = target
    elif action == Action.PICKUP:
        fr, fc = state.faced_cell()
        if (
            state.carried is None
            and 0 <= fr < state.config.size
            and 0 <= fc < state.config.size
            and state.kinds[fr, fc] in PORTABLE_KINDS
        ):
            nxt.carried = (CellKind(int(state.kinds[fr, fc])), int(state.colors[fr, fc]))
            nxt.kinds[fr, fc] = CellKind.FLOOR
            nxt.colors[fr, fc] = 0
    elif action == Action.DROP:
        fr, fc = state.faced_cell()
        if (
            state.carried is not None
            and 0 <= fr < state.config.size
            and 0 <= fc < state.config.size
            and state.kinds[fr, fc] == CellKind.FLOOR
        ):
            nxt.kinds[fr, fc] = state.carried[0]
            nxt.colors[fr, fc] = state.carried[1]
            nxt.carried = None
    elif action == Action.TOGGLE:
        fr, fc = state.faced_cell()
        if (
            0 <= fr < state.config.size
            and 0 <= fc < state.config.size
            and state.kinds[fr, fc] == CellKind.DOOR
        ):
            door_state = int(state.states[fr, fc])
            if door_state == DoorState.OPEN:
                nxt.states[fr, fc] = DoorState.CLOSED
            elif door_state == DoorState.CLOSED:
                nxt.states[fr, fc] = DoorState.OPEN
            elif door_state == DoorState.LOCKED:
                # A matching key opens the door and stays in hand.
                if state.carried == (CellKind.KEY, int(state.colors[fr, fc])):
                    nxt.states[fr, fc] = DoorState.OPEN
    # Action.DONE changes nothing.

    nxt.step_count = state.step_count + 1
    return nxt, detect_events(state, nxt)


def detect_events(prev: GridState, nxt: GridState) -> list[Event]:
    """Events whose predicate is true in nxt but was false in prev.

    Emission order inside a step is OPENED, HOLDING, FACING, then color and
    object-kind order. Predicates are identity-level, not instance-level: moving
    between two same-colored balls raises no new FACING edge.
    """
    events: list[Event] = []

    for r, c in nxt.door_cells:
        if int(nxt.states[r, c]) == DoorState.OPEN and int(prev.states[r, c]) in (
            DoorState.CLOSED,
            DoorState.LOCKED,
        ):
            ev = Event(EventKind.OPENED, int(nxt.colors[r, c]), CellKind.DOOR)
            if ev not in events:
                events.append(ev)

    if nxt.carried is not None and nxt.carried != prev.carried:
        events.append(Event(EventKind.HOLDING, nxt.carried[1], nxt.carried[0]))

    faced_now = _cell_obj(nxt, nxt.faced_cell())
    if faced_now is not None and faced_now != _cell_obj(prev, prev.faced_cell()):
        events.append(Event(EventKind.FACING, faced_now[1], faced_now[0]))

    events.sort(key=Event.sort_key)
    return events


# Cells a see-through cell reveals: sideways, ahead, and the two forward
# diagonals, all in the egocentric frame where the agent looks toward row 0.
_REVEAL = ((0, -1), (0, 1), (-1, 0), (-1, -1), (-1, 1))


def observe(state: GridState) -> np.ndarray:
    """Egocentric 7x7x3 view: object kind, color, door state per cell.

    The agent sits at (6, 3) facing row-decreasing. Sight spreads from the
    agent cell through floor and open doors; walls and shut doors block it,
    and everything unreached is masked to the UNSEEN sentinel. The agent's own
    cell shows the carried object if there is one.
    """
    dr, dc = DIR_VEC[state.agent_dir]
    # Right-hand unit vector in world coordinates.
    right = {
        Direction.NORTH: (0, 1),
        Direction.EAST: (1, 0),
        Direction.SOUTH: (0, -1),
        Direction.WEST: (-1, 0),
    }[state.agent_dir]

    ar, ac = state.agent_pos
    size = state.config.size
    kind = np.zeros((VIEW_SIZE, VIEW_SIZE), dtype=np.int8)
    color = np.zeros((VIEW_SIZE, VIEW_SIZE), dtype=np.int8)
    dstate = np.zeros((VIEW_SIZE, VIEW_SIZE), dtype=np.int8)
    see_through = np.zeros((VIEW_SIZE, VIEW_SIZE), dtype=bool)

    for er in range(VIEW_SIZE):
        forward = VIEW_AGENT_POS[0] - er
        for ec in range(VIEW_SIZE):
            lateral = ec - VIEW_AGENT_POS[1]
            wr = ar + forward * dr + lateral * right[0]
            wc = ac + forward * dc + lateral * right[1]
            if not (0 <= wr < size and 0 <= wc < size):
                kind[er, ec] = CellKind.WALL
                continue
            k = int(state.kinds[wr, wc])
            kind[er, ec] = k
            color[er, ec] = int(state.colors[wr, wc])
            dstate[er, ec] = int(state.states[wr, wc])
            if k == CellKind.WALL:
                see_through[er, ec] = False
            elif k == CellKind.DOOR:
                see_through[er, ec] = int(state.states[wr, wc]) == DoorState.OPEN
            else:
                see_through[er, ec] = True

    visible = np.zeros((VIEW_SIZE, VIEW_SIZE), dtype=bool)
    visible[VIEW_AGENT_POS] = True
    queue = [VIEW_AGENT_POS]
    while queue:
        er, ec = queue.pop()
        for pr, pc in _REVEAL:
            nr, nc = er + pr, ec + pc
            if 0 <= nr < VIEW_SIZE and 0 <= nc < VIEW_SIZE and not visible[nr, nc]:
                visible[nr, nc] = True
                if see_through[nr, nc]:
                    queue.append((nr, nc))

    obs = np.zeros((VIEW_SIZE, VIEW_SIZE, 3), dtype=np.int8)
    obs[..., 0][visible] = kind[visible]
    obs[..., 1][visible] = color[visible]
    obs[..., 2][visible] = dstate[visible]
    obs[~visible, 0] = CellKind.UNSEEN

    if state.carried is not None:
        obs[VIEW_AGENT_POS[0], VIEW_AGENT_POS[1]] = (
            int(state.carried[0]),
            state.carried[1],
            0,
        )
    return obs


def object_census(state: GridState) -> dict[tuple[CellKind, int], int]:
    """Count of every (kind, color) across grid cells plus the carried slot."""
    mask = (state.kinds != CellKind.FLOOR) & (state.kinds != CellKind.WALL)
    census: dict[tuple[CellKind, int], int] = {}
    for k, c in zip(state.kinds[mask], state.colors[mask]):
        key = (CellKind(int(k)), int(c))
        census[key] = census.get(key, 0) + 1
    if state.carried is not None:
        census[state.carried] = census.get(state.carried, 0) + 1
    return census
