"""Instruction grammar, synonym sampling, DB round-trips, goal adjudication."""

from __future__ import annotations

import numpy as np
import pytest

from langgrid import embed, instructor as ins
from langgrid.envgrid import Action, CellKind, Event, EventKind
from langgrid import envgrid as eg

from helpers import build_room

FACING_RED_BALL = Event(EventKind.FACING, 0, CellKind.BALL)
HOLDING_RED_BALL = Event(EventKind.HOLDING, 0, CellKind.BALL)
OPENED_GREEN_DOOR = Event(EventKind.OPENED, 1, CellKind.DOOR)


def test_describe_templates() -> None:
    assert ins.describe(FACING_RED_BALL) == "you are standing in front of the red ball"
    assert ins.describe(HOLDING_RED_BALL) == "you have picked up the red ball"
    assert ins.describe(OPENED_GREEN_DOOR) == "you have opened the green door"


def test_describe_injective() -> None:
    texts = {ins.describe(e) for e in embed.vocab()}
    assert len(texts) == len(embed.vocab())


def test_instruction_roots() -> None:
    assert ins.to_instruction(FACING_RED_BALL) == "go to the red ball"
    assert ins.to_instruction(HOLDING_RED_BALL) == "pick up the red ball"
    assert ins.to_instruction(OPENED_GREEN_DOOR) == "open the green door"


def test_grammar_minimum_variety() -> None:
    for kind, verbs in ins._VERBS.items():
        assert len(verbs) >= 10, kind
    for color, words in ins._COLOR_WORDS.items():
        assert len(words) >= 4, color
    for kind, nouns in ins._NOUNS.items():
        assert len(nouns) >= 3, kind


def test_grammar_word_sets_disjoint() -> None:
    # Disjointness is what makes every produced string decodable back to a
    # unique event, hence cross-event uniqueness of the whole DB.
    verb_sets = [set(v) for v in ins._VERBS.values()]
    for i in range(len(verb_sets)):
        for j in range(i + 1, len(verb_sets)):
            assert not verb_sets[i] & verb_sets[j]
    color_sets = [set(v) for v in ins._COLOR_WORDS.values()]
    for i in range(len(color_sets)):
        for j in range(i + 1, len(color_sets)):
            assert not color_sets[i] & color_sets[j]
    noun_sets = [set(v) for v in ins._NOUNS.values()]
    for i in range(len(noun_sets)):
        for j in range(i + 1, len(noun_sets)):
            assert not noun_sets[i] & noun_sets[j]


def test_grammar_produces_lift_up_the_crimson_ball() -> None:
    assert "lift up the crimson ball" in ins.phrase_pool(HOLDING_RED_BALL)


def test_gen_synonyms_partitions() -> None:
    syn = ins.gen_synonyms(FACING_RED_BALL, 50, seed=3)
    assert len(syn.train) == 45
    assert len(syn.holdout) == 5
    assert syn.root == "go to the red ball"
    assert syn.root in syn.train
    assert not set(syn.train) & set(syn.holdout)
    assert len(set(syn.all_synonyms)) == 50
    for text in syn.all_synonyms:
        assert text in ins.phrase_pool(FACING_RED_BALL)


def test_gen_synonyms_deterministic() -> None:
    a = ins.gen_synonyms(HOLDING_RED_BALL, 50, seed=17)
    b = ins.gen_synonyms(HOLDING_RED_BALL, 50, seed=17)
    c = ins.gen_synonyms(HOLDING_RED_BALL, 50, seed=18)
    assert a == b
    assert a != c


def test_gen_synonyms_capacity_errors() -> None:
    with pytest.raises(ins.GrammarCapacityError):
        ins.gen_synonyms(FACING_RED_BALL, 10**6, seed=0)
    with pytest.raises(ins.GrammarCapacityError):
        ins.gen_synonyms(FACING_RED_BALL, 5, seed=0)


def test_db_covers_vocab_and_unique_across_events() -> None:
    db = ins.gen_synonym_db(50, seed=9)
    assert set(db.sets) == set(embed.vocab())
    all_texts: list[str] = []
    for event in embed.vocab():
        all_texts.extend(db[event].all_synonyms)
    assert len(all_texts) == 48 * 50
    assert len(set(all_texts)) == len(all_texts)
    db.validate()


def test_db_roundtrip(tmp_path) -> None:
    db = ins.gen_synonym_db(50, seed=4)
    path = tmp_path / "synonyms.jsonl"
    ins.save_db(db, path, config_hash="abc123")
    assert len(path.read_text().splitlines()) == 48
    loaded, meta = ins.load_db(path)
    assert meta["config_hash"] == "abc123"
    assert loaded.synonyms_per_event == 50
    for event in embed.vocab():
        assert loaded[event] == db[event]


def test_load_db_rejects_malformed(tmp_path) -> None:
    path = tmp_path / "bad.jsonl"
    path.write_text('{"event":"FACING:red:ball","root":"go to the red ball"}\n')
    with pytest.raises(ins.SynonymDBError):
        ins.load_db(path)
    path.write_text("not json at all\n")
    with pytest.raises(ins.SynonymDBError):
        ins.load_db(path)
    with pytest.raises(ins.SynonymDBError):
        ins.load_db(tmp_path / "missing.jsonl")


def test_load_db_rejects_cross_event_duplicates(tmp_path) -> None:
    db = ins.gen_synonym_db(50, seed=4)
    path = tmp_path / "dup.jsonl"
    ins.save_db(db, path)
    lines = path.read_text().splitlines()
    import json

    doc0 = json.loads(lines[0])
    doc1 = json.loads(lines[1])
    doc1["train"] = [doc0["train"][0]] + doc1["train"][1:]
    lines[1] = json.dumps(doc1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ins.SynonymDBError):
        ins.load_db(path)


def test_sample_instruction_partitions() -> None:
    db = ins.gen_synonym_db(50, seed=2)
    syn = db[FACING_RED_BALL]
    rng = np.random.default_rng(0)
    for _ in range(200):
        inst = ins.sample_instruction(db, FACING_RED_BALL, rng, include_holdout=False)
        assert inst.text in syn.train
        assert inst.event == FACING_RED_BALL
        assert syn.all_synonyms[inst.synonym_index] == inst.text
    for _ in range(200):
        inst = ins.sample_instruction(db, FACING_RED_BALL, rng, include_holdout=True)
        assert inst.text in syn.holdout
        assert inst.synonym_index >= len(syn.train)


def test_sample_instruction_roughly_uniform() -> None:
    db = ins.gen_synonym_db(50, seed=2)
    syn = db[OPENED_GREEN_DOOR]
    rng = np.random.default_rng(123)
    n = 9000
    counts: dict[str, int] = {}
    for _ in range(n):
        counts_text = ins.sample_instruction(db, OPENED_GREEN_DOOR, rng).text
        counts[counts_text] = counts.get(counts_text, 0) + 1
    expected = n / len(syn.train)
    sigma = (n * (1 / len(syn.train)) * (1 - 1 / len(syn.train))) ** 0.5
    for text in syn.train:
        assert abs(counts.get(text, 0) - expected) < 5 * sigma


def test_reached_rising_edge_semantics() -> None:
    # The adjudicator only credits events fired on the step just taken.
    s = build_room(objects={(3, 2): (CellKind.BALL, 0)})
    goal = FACING_RED_BALL
    trace: list[list[Event]] = []
    t, events = eg.step(s, Action.TURN_LEFT)
    trace.append(events)
    assert ins.reached(t, trace, goal)
    u, events2 = eg.step(t, Action.DONE)
    trace.append(events2)
    # Still facing the ball, but the edge is gone.
    assert not ins.reached(u, trace, goal)
    assert not ins.reached(u, [], goal)
