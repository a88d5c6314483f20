"""Event descriptions, instruction grammar, and synonym databases.

Each world event has a fixed description sentence and a canonical instruction
root. A deterministic template grammar expands each root into a pool of
synonymous phrasings (verb phrase x color word x noun), from which a fixed-size
sample per event is drawn and split into train and holdout partitions. The
word lists are disjoint across kinds and colors, which is what guarantees that
no instruction string can ever belong to two events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envgrid import COLOR_NAMES, CellKind, Event, EventKind, GridState, OBJ_KIND_NAMES

HOLDOUT_SIZE = 5
DB_FORMAT_VERSION = 1


class SynonymDBError(ValueError):
    """Malformed or inconsistent synonym database content."""


class GrammarCapacityError(ValueError):
    """Requested more distinct phrasings than the grammar can produce."""


# Verb phrases per event kind. Sets are disjoint across kinds; index 0 builds
# the canonical root.
_VERBS = {
    EventKind.FACING: (
        "go to",
        "walk to",
        "approach",
        "navigate to",
        "head to",
        "move to",
        "reach",
        "proceed to",
        "travel to",
        "step to",
        "walk over to",
        "make your way to",
    ),
    EventKind.HOLDING: (
        "pick up",
        "lift up",
        "grab",
        "take",
        "collect",
        "fetch",
        "carry",
        "hold",
        "acquire",
        "scoop up",
        "gather up",
        "snatch",
    ),
    EventKind.OPENED: (
        "open",
        "unlock",
        "pull open",
        "push open",
        "swing open",
        "unlatch",
        "unbar",
        "unseal",
        "crack open",
        "throw open",
        "prop open",
    ),
}

# Color words, disjoint across colors; index 0 is the canonical name.
_COLOR_WORDS = {
    "red": ("red", "crimson", "scarlet", "ruby", "cherry"),
    "green": ("green", "emerald", "jade", "lime", "olive"),
    "blue": ("blue", "azure", "cobalt", "sapphire", "navy"),
    "grey": ("grey", "gray", "ashen", "slate", "silver"),
    "purple": ("purple", "violet", "lavender", "mauve", "plum"),
    "yellow": ("yellow", "golden", "amber", "mustard", "lemon"),
}

# Nouns per object kind, disjoint across kinds; index 0 is canonical.
_NOUNS = {
    CellKind.BALL: ("ball", "sphere", "orb", "globe"),
    CellKind.BOX: ("box", "crate", "chest", "container"),
    CellKind.KEY: ("key", "passkey", "latchkey"),
    CellKind.DOOR: ("door", "doorway", "gate", "entrance"),
}

_DESCRIBE_TEMPLATES = {
    EventKind.FACING: "you are standing in front of the {color} {kind}",
    EventKind.HOLDING: "you have picked up the {color} {kind}",
    EventKind.OPENED: "you have opened the {color} door",
}


def describe(event: Event) -> str:
    """The environment-side sentence stating that the event just happened."""
    return _DESCRIBE_TEMPLATES[event.kind].format(
        color=COLOR_NAMES[event.color], kind=OBJ_KIND_NAMES[event.obj_kind]
    )


def to_instruction(event: Event) -> str:
    """Canonical imperative root for the event."""
    return _phrase(event, 0, 0, 0)


def _phrase(event: Event, verb_i: int, color_i: int, noun_i: int) -> str:
    verb = _VERBS[event.kind][verb_i]
    color = _COLOR_WORDS[COLOR_NAMES[event.color]][color_i]
    noun = _NOUNS[event.obj_kind][noun_i]
    return f"{verb} the {color} {noun}"


def phrase_pool(event: Event) -> list[str]:
    """All distinct phrasings the grammar can produce for an event, in a fixed
    verb-major order. Index 0 is the canonical root."""
    verbs = _VERBS[event.kind]
    colors = _COLOR_WORDS[COLOR_NAMES[event.color]]
    nouns = _NOUNS[event.obj_kind]
    return [
        f"{v} the {c} {n}"
        for v in verbs
        for c in colors
        for n in nouns
    ]


@dataclass(frozen=True)
class SynonymSet:
    """Sampled phrasings for one event, split into train and holdout."""

    event: Event
    root: str
    train: tuple[str, ...]
    holdout: tuple[str, ...]

    @property
    def all_synonyms(self) -> tuple[str, ...]:
        return self.train + self.holdout

    def validate(self) -> None:
        if self.root not in self.train:
            raise SynonymDBError(f"root missing from train partition for {self.event.encode()}")
        if len(self.holdout) != HOLDOUT_SIZE:
            raise SynonymDBError(f"holdout size != {HOLDOUT_SIZE} for {self.event.encode()}")
        pool = set(self.train) | set(self.holdout)
        if len(pool) != len(self.train) + len(self.holdout):
            raise SynonymDBError(f"duplicate or shared synonyms for {self.event.encode()}")


@dataclass(frozen=True)
class Instruction:
    """One concrete phrasing handed to the student."""

    text: str
    event: Event
    synonym_index: int


def gen_synonyms(event: Event, m: int, seed: int) -> SynonymSet:
    """Sample m distinct phrasings for an event.

    The root is always kept and always lands in train; the last HOLDOUT_SIZE
    items of the sampled order form the holdout split.
    """
    if m < HOLDOUT_SIZE + 1:
        raise GrammarCapacityError(f"m={m} leaves no room for root plus holdout")
    pool = phrase_pool(event)
    if m > len(pool):
        raise GrammarCapacityError(
            f"m={m} exceeds grammar capacity {len(pool)} for {event.encode()}"
        )
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool) - 1, size=m - 1, replace=False)
    ordered = [pool[0]] + [pool[int(i) + 1] for i in picks]
    return SynonymSet(
        event=event,
        root=pool[0],
        train=tuple(ordered[:-HOLDOUT_SIZE]),
        holdout=tuple(ordered[-HOLDOUT_SIZE:]),
    )


@dataclass(frozen=True)
class SynonymDB:
    """Synonym sets covering the whole event vocabulary."""

    sets: dict[Event, SynonymSet]
    generation_seed: int
    synonyms_per_event: int

    def __getitem__(self, event: Event) -> SynonymSet:
        return self.sets[event]

    def validate(self) -> None:
        from .embed import vocab

        missing = [e for e in vocab() if e not in self.sets]
        if missing:
            raise SynonymDBError(f"vocabulary not covered: {missing[0].encode()} ...")
        seen: dict[str, Event] = {}
        for syn_set in self.sets.values():
            syn_set.validate()
            if len(syn_set.all_synonyms) != self.synonyms_per_event:
                raise SynonymDBError(
                    f"{syn_set.event.encode()} has {len(syn_set.all_synonyms)} synonyms, "
                    f"expected {self.synonyms_per_event}"
                )
            for text in syn_set.all_synonyms:
                if text in seen:
                    raise SynonymDBError(
                        f"instruction {text!r} belongs to both {seen[text].encode()} "
                        f"and {syn_set.event.encode()}"
                    )
                seen[text] = syn_set.event


def gen_synonym_db(m: int, seed: int) -> SynonymDB:
    """Build synonym sets for every vocabulary event, one derived seed each."""
    from .embed import vocab

    seed_rng = np.random.default_rng(seed)
    sets = {}
    for event in vocab():
        event_seed = int(seed_rng.integers(2**63))
        sets[event] = gen_synonyms(event, m, event_seed)
    db = SynonymDB(sets=sets, generation_seed=seed, synonyms_per_event=m)
    db.validate()
    return db


def sample_instruction(
    db: SynonymDB, event: Event, rng: np.random.Generator, include_holdout: bool = False
) -> Instruction:
    """Draw one phrasing uniformly from the requested partition.

    synonym_index refers to the event's full train+holdout ordering, so it
    stays meaningful across partitions.
    """
    syn_set = db[event]
    if include_holdout:
        offset = len(syn_set.train)
        i = offset + int(rng.integers(len(syn_set.holdout)))
    else:
        i = int(rng.integers(len(syn_set.train)))
    return Instruction(text=syn_set.all_synonyms[i], event=event, synonym_index=i)


def reached(state: GridState, episode_trace: list[list[Event]], goal: Event) -> bool:
    """Goal adjudication: the goal counts if and only if its event fired on the
    step just taken, i.e. appears in the last entry of the per-step trace."""
    del state  # the trace already reflects the transition into this state
    return bool(episode_trace) and goal in episode_trace[-1]


def save_db(db: SynonymDB, path: str | Path, config_hash: str | None = None) -> None:
    """Write one JSON object per event, vocabulary order, plus a meta sidecar
    carrying generation parameters and the producing config hash."""
    from .embed import vocab

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for event in vocab():
            syn_set = db[event]
            fh.write(
                json.dumps(
                    {
                        "event": event.encode(),
                        "root": syn_set.root,
                        "train": list(syn_set.train),
                        "holdout": list(syn_set.holdout),
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )
    meta = {
        "format": "synonym-db",
        "version": DB_FORMAT_VERSION,
        "generation_seed": db.generation_seed,
        "synonyms_per_event": db.synonyms_per_event,
        "config_hash": config_hash,
    }
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def meta_path(db_path: str | Path) -> Path:
    return Path(str(db_path) + ".meta.json")


def load_db(path: str | Path) -> tuple[SynonymDB, dict]:
    """Load and fully validate a synonym DB. Returns (db, meta); meta is {}
    when no sidecar exists."""
    path = Path(path)
    sets: dict[Event, SynonymSet] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    event = Event.parse(doc["event"])
                    syn_set = SynonymSet(
                        event=event,
                        root=doc["root"],
                        train=tuple(doc["train"]),
                        holdout=tuple(doc["holdout"]),
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise SynonymDBError(f"{path}:{line_no}: {exc}") from exc
                if event in sets:
                    raise SynonymDBError(f"{path}:{line_no}: duplicate event {doc['event']}")
                sets[event] = syn_set
    except OSError as exc:
        raise SynonymDBError(f"cannot read synonym DB {path}: {exc}") from exc

    meta: dict = {}
    mp = meta_path(path)
    if mp.exists():
        try:
            meta = json.loads(mp.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SynonymDBError(f"bad meta sidecar {mp}: {exc}") from exc

    sizes = {len(s.all_synonyms) for s in sets.values()}
    if len(sizes) != 1:
        raise SynonymDBError(f"{path}: inconsistent synonym counts {sorted(sizes)}")
    db = SynonymDB(
        sets=sets,
        generation_seed=int(meta.get("generation_seed", -1)),
        synonyms_per_event=sizes.pop(),
    )
    db.validate()
    return db, meta
