"""Event vocabulary and the three embedding providers."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langgrid import embed
from langgrid.envgrid import CellKind, Event, EventKind


def test_vocab_size_and_blocks() -> None:
    events = embed.vocab()
    assert len(events) == 48
    kinds = [e.kind for e in events]
    assert kinds.count(EventKind.FACING) == 24
    assert kinds.count(EventKind.HOLDING) == 18
    assert kinds.count(EventKind.OPENED) == 6
    assert events[0] == Event(EventKind.FACING, 0, CellKind.BALL)
    assert events[0].encode() == "FACING:red:ball"
    # Kind-major, then color, then object kind.
    assert events[1].encode() == "FACING:red:box"
    assert events[4].encode() == "FACING:green:ball"
    assert events[24].encode() == "HOLDING:red:ball"
    assert events[42].encode() == "OPENED:red:door"


def test_vocab_deterministic_and_unique() -> None:
    assert embed.vocab() == embed.vocab()
    assert len(set(embed.vocab())) == 48


def test_onehot_basis() -> None:
    for i, event in enumerate(embed.vocab()):
        vec = embed.onehot(event)
        assert vec.shape == (48,)
        assert vec[i] == 1.0
        assert vec.sum() == 1.0
    a = embed.onehot(embed.vocab()[3])
    b = embed.onehot(embed.vocab()[11])
    assert embed.distance(a, a) == 0.0
    assert embed.distance(a, b) == pytest.approx(np.sqrt(2.0))


def test_fnv1a64_reference_values() -> None:
    # Independently computed: hash of empty input is the offset basis, and
    # one-byte inputs follow a single xor-multiply round.
    assert embed.fnv1a64(b"") == 0xCBF29CE484222325
    assert embed.fnv1a64(b"a") == ((0xCBF29CE484222325 ^ 0x61) * 0x100000001B3) % 2**64


def test_embed_text_normalized_and_deterministic() -> None:
    v1 = embed.embed_text("go to the red ball", 32)
    v2 = embed.embed_text("go to the red ball", 32)
    assert np.array_equal(v1, v2)
    assert np.linalg.norm(v1) == pytest.approx(1.0)
    assert v1.dtype == np.float64


def test_embed_text_case_and_split() -> None:
    a = embed.embed_text("Go To The RED Ball", 32)
    b = embed.embed_text("go-to,the;red  ball!", 32)
    assert np.array_equal(a, b)


def test_embed_text_is_a_bag() -> None:
    a = embed.embed_text("red ball go", 64)
    b = embed.embed_text("go red ball", 64)
    assert np.array_equal(a, b)


def test_embed_text_errors() -> None:
    with pytest.raises(embed.EmbeddingError):
        embed.embed_text("...", 32)
    with pytest.raises(embed.EmbeddingError):
        embed.embed_text("fine text", 8)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.sampled_from("red green blue ball box key go walk open the".split()), min_size=1, max_size=8),
    st.integers(min_value=16, max_value=128),
)
def test_embed_text_unit_norm_property(tokens, dim) -> None:
    vec = embed.embed_text(" ".join(tokens), dim)
    assert np.linalg.norm(vec) == pytest.approx(1.0)
    assert (vec >= 0).all()


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4),
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4),
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4),
)
def test_distance_is_a_metric(a, b, c) -> None:
    a, b, c = np.array(a), np.array(b), np.array(c)
    assert embed.distance(a, b) >= 0
    assert embed.distance(a, b) == pytest.approx(embed.distance(b, a))
    assert embed.distance(a, c) <= embed.distance(a, b) + embed.distance(b, c) + 1e-9


def _write_table(path, dim, rows):
    lines = [f"dim\t{dim}"]
    for text, values in rows:
        lines.append(f"{text}\t{','.join(str(v) for v in values)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_embedding_file(tmp_path) -> None:
    path = tmp_path / "vectors.tsv"
    _write_table(path, 3, [("go to the red ball", [1.0, 2.0, 3.0]), ("other", [0.0, 0.5, 1.5])])
    table = embed.load_embedding_file(path)
    assert table.dim == 3
    assert np.array_equal(table.lookup("go to the red ball"), [1.0, 2.0, 3.0])
    with pytest.raises(embed.EmbeddingError):
        table.lookup("never seen")


def test_load_embedding_file_errors(tmp_path) -> None:
    path = tmp_path / "vectors.tsv"
    path.write_text("wrong header\n")
    with pytest.raises(embed.EmbeddingError):
        embed.load_embedding_file(path)
    _write_table(path, 3, [("text", [1.0, 2.0])])
    with pytest.raises(embed.EmbeddingError):
        embed.load_embedding_file(path)
    path.write_text("dim\t3\ntext\tnot,a,number\n")
    with pytest.raises(embed.EmbeddingError):
        embed.load_embedding_file(path)
    with pytest.raises(embed.EmbeddingError):
        embed.load_embedding_file(tmp_path / "nope.tsv")


def test_embedder_factory_and_interface(tmp_path) -> None:
    ev = embed.vocab()[0]
    one = embed.make_embedder(embed.EmbedderSpec(kind="onehot_event"))
    assert one.dim == 48
    assert np.array_equal(one.encode("ignored text", ev), embed.onehot(ev))

    bow = embed.make_embedder(embed.EmbedderSpec(kind="hashed_bow", dim=32))
    assert bow.dim == 32
    assert np.array_equal(bow.encode("go to the red ball", ev), embed.embed_text("go to the red ball", 32))

    path = tmp_path / "v.tsv"
    _write_table(path, 2, [("hello", [1.0, 0.0])])
    filey = embed.make_embedder(embed.EmbedderSpec(kind="file_lookup", path=str(path)))
    assert filey.dim == 2
    assert np.array_equal(filey.encode("hello", ev), [1.0, 0.0])
    with pytest.raises(embed.EmbeddingError):
        filey.encode("absent", ev)

    with pytest.raises(embed.EmbeddingError):
        embed.make_embedder(embed.EmbedderSpec(kind="bert"))
    with pytest.raises(embed.EmbeddingError):
        embed.make_embedder(embed.EmbedderSpec(kind="file_lookup", path=None))
