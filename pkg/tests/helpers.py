"""Shared oracles and builders used across the test modules.

Everything here re-derives expected behavior from first principles, separately
from the implementation under test: predicates are scanned exhaustively, sight
is computed as a fixpoint, and rewards are re-accounted by hand.
"""

from __future__ import annotations

import numpy as np

from langgrid import envgrid as eg
from langgrid.envgrid import (
    Action,
    CellKind,
    DoorState,
    Event,
    EventKind,
    GridConfig,
    GridState,
)

ALL_EVENTS = None  # filled lazily to avoid importing embed at module load


def facing_predicate(state: GridState, color: int, obj_kind: CellKind) -> bool:
    r, c = state.faced_cell()
    if not (0 <= r < state.config.size and 0 <= c < state.config.size):
        return False
    return (
        int(state.kinds[r, c]) == obj_kind
        and int(state.colors[r, c]) == color
    )


def holding_predicate(state: GridState, color: int, obj_kind: CellKind) -> bool:
    return state.carried == (obj_kind, color)


def opened_predicate(state: GridState, color: int) -> bool:
    for r, c in state.door_cells:
        if int(state.colors[r, c]) == color and int(state.states[r, c]) == DoorState.OPEN:
            return True
    return False


def scan_events(prev: GridState, nxt: GridState) -> list[Event]:
    """Predicate-scan oracle: evaluate every vocabulary predicate on both
    states and keep the rising edges, ordered OPENED, HOLDING, FACING then
    color then object kind. OPENED edges are per-door transitions."""
    out: list[Event] = []
    for color in range(eg.N_COLORS):
        opened_now = False
        for r, c in nxt.door_cells:
            if (
                int(nxt.colors[r, c]) == color
                and int(nxt.states[r, c]) == DoorState.OPEN
                and int(prev.states[r, c]) in (DoorState.CLOSED, DoorState.LOCKED)
            ):
                opened_now = True
        if opened_now:
            out.append(Event(EventKind.OPENED, color, CellKind.DOOR))
    for color in range(eg.N_COLORS):
        for kind in eg.PORTABLE_KINDS:
            if holding_predicate(nxt, color, kind) and not holding_predicate(prev, color, kind):
                out.append(Event(EventKind.HOLDING, color, kind))
    for color in range(eg.N_COLORS):
        for kind in eg.OBJ_KINDS:
            if facing_predicate(nxt, color, kind) and not facing_predicate(prev, color, kind):
                out.append(Event(EventKind.FACING, color, kind))
    return out


def fixpoint_visibility(state: GridState) -> np.ndarray:
    """Sight oracle: iterate the reveal rule to a fixpoint instead of BFS.

    A visible see-through cell reveals its lateral and three forward
    neighbors in the egocentric frame; walls and shut doors are opaque.
    """
    right = {
        eg.Direction.NORTH: (0, 1),
        eg.Direction.EAST: (1, 0),
        eg.Direction.SOUTH: (0, -1),
        eg.Direction.WEST: (-1, 0),
    }[state.agent_dir]
    dr, dc = eg.DIR_VEC[state.agent_dir]
    ar, ac = state.agent_pos
    size = state.config.size
    n = eg.VIEW_SIZE

    def world(er: int, ec: int) -> tuple[int, int]:
        f = eg.VIEW_AGENT_POS[0] - er
        l = ec - eg.VIEW_AGENT_POS[1]
        return (ar + f * dr + l * right[0], ac + f * dc + l * right[1])

    def see_through(er: int, ec: int) -> bool:
        wr, wc = world(er, ec)
        if not (0 <= wr < size and 0 <= wc < size):
            return False
        k = int(state.kinds[wr, wc])
        if k == CellKind.WALL:
            return False
        if k == CellKind.DOOR:
            return int(state.states[wr, wc]) == DoorState.OPEN
        return True

    visible = np.zeros((n, n), dtype=bool)
    visible[eg.VIEW_AGENT_POS] = True
    changed = True
    while changed:
        changed = False
        for er in range(n):
            for ec in range(n):
                if not visible[er, ec]:
                    continue
                if (er, ec) != eg.VIEW_AGENT_POS and not see_through(er, ec):
                    continue
                for pr, pc in ((0, -1), (0, 1), (-1, 0), (-1, -1), (-1, 1)):
                    nr, nc = er + pr, ec + pc
                    if 0 <= nr < n and 0 <= nc < n and not visible[nr, nc]:
                        visible[nr, nc] = True
                        changed = True
    return visible


def build_room(
    *,
    interior: int = 6,
    objects: dict[tuple[int, int], tuple[CellKind, int]] | None = None,
    doors: dict[tuple[int, int], tuple[int, DoorState]] | None = None,
    agent_pos: tuple[int, int] = (3, 3),
    agent_dir: eg.Direction = eg.Direction.NORTH,
    carried: tuple[CellKind, int] | None = None,
    rooms_per_side: int = 1,
    max_steps: int = 115,
) -> GridState:
    """Hand-build a world for scripted scenarios. Positions are absolute grid
    coordinates; the caller is responsible for keeping them off the wall lines
    unless placing doors there."""
    cfg = GridConfig(
        rooms_per_side=rooms_per_side,
        room_interior=interior,
        n_balls=0,
        n_boxes=0,
        n_keys=0,
        max_steps=max_steps,
    )
    size = cfg.size
    span = interior + 1
    kinds = np.full((size, size), CellKind.FLOOR, dtype=np.int8)
    colors = np.zeros((size, size), dtype=np.int8)
    states = np.zeros((size, size), dtype=np.int8)
    for k in range(rooms_per_side + 1):
        kinds[k * span, :] = CellKind.WALL
        kinds[:, k * span] = CellKind.WALL
    door_cells = []
    for pos, (color, dstate) in (doors or {}).items():
        kinds[pos] = CellKind.DOOR
        colors[pos] = color
        states[pos] = dstate
        door_cells.append(pos)
    for pos, (kind, color) in (objects or {}).items():
        kinds[pos] = kind
        colors[pos] = color
    return GridState(
        config=cfg,
        kinds=kinds,
        colors=colors,
        states=states,
        agent_pos=agent_pos,
        agent_dir=agent_dir,
        carried=carried,
        door_cells=tuple(door_cells),
        step_count=0,
        rng_seed=0,
    )


def random_walk(state: GridState, n_steps: int, rng: np.random.Generator):
    """Yield (prev, action, nxt, events) for a random action sequence."""
    for _ in range(n_steps):
        if state.step_count >= state.config.max_steps:
            return
        action = Action(int(rng.integers(eg.N_ACTIONS)))
        nxt, events = eg.step(state, action)
        yield state, action, nxt, events
        state = nxt
