from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from assetpipe.chunker import ChunkerConfig, _units, chunk, split_sentences, tokenize


def check_invariants(text: str, config: ChunkerConfig) -> list:
    """Assert the chunker contract on ``text`` and return the chunks."""
    toks = tokenize(text)
    chunks = chunk(text, config)
    if not toks:
        assert chunks == []
        return chunks
    covered = set()
    for c in chunks:
        assert 1 <= c.token_count <= config.max_tokens
        assert c.text.split() == toks[c.start_token:c.end_token]
        covered.update(range(c.start_token, c.end_token))
    assert covered == set(range(len(toks)))
    _, units = _units(text, config.max_tokens)
    unit_end = {s: e for s, e in units}
    for prev, nxt in zip(chunks, chunks[1:]):
        assert prev.start_token < nxt.start_token <= prev.end_token
        target = prev.end_token - config.overlap_tokens
        if nxt.start_token > target:
            # allowed only when no unit start in (prev.start, target] leaves
            # room for the unit that follows the previous chunk
            following = unit_end[prev.end_token]
            assert not [s for s in unit_end if prev.start_token < s <= target and following - s <= config.max_tokens]
    return chunks


def random_document(rng: random.Random, max_sentence: int = 60, sentences: int = 80) -> str:
    out = []
    for _ in range(rng.randint(1, sentences)):
        n = rng.choice([1, 2, 5, rng.randint(1, max_sentence), rng.randint(1, 3 * max_sentence)])
        words = [rng.choice(["mine", "copper", "gold", "plant", "Grasberg", "field", "the", "of"]) for _ in range(n)]
        out.append(" ".join(words) + rng.choice([".", "!", "?", "."]))
    return " ".join(out)


def test_spec_example_uniform_sentences():
    text = " ".join(["a."] * 2048)
    chunks = chunk(text)
    assert [c.start_token for c in chunks] == [0, 1004, 2008]
    assert [c.token_count for c in chunks] == [1024, 1024, 40]


def test_single_sentence_hard_split():
    text = " ".join(["w"] * 2500) + "."
    chunks = chunk(text)
    assert [(c.start_token, c.token_count) for c in chunks] == [(0, 1024), (1024, 1024), (2048, 452)]


def test_small_config_overlap_and_fallback():
    text = "one two. three four. five six seven. eight."
    chunks = chunk(text, ChunkerConfig(max_tokens=5, overlap_tokens=2))
    assert [c.text for c in chunks] == ["one two. three four.", "three four. five six seven.", "five six seven. eight."]
    # the overlap sentence cannot share a window with the next sentence, so it is dropped
    text = "one two three. four five. six seven eight nine. ten."
    chunks = chunk(text, ChunkerConfig(max_tokens=5, overlap_tokens=2))
    assert [c.text for c in chunks] == ["one two three. four five.", "six seven eight nine. ten."]


def test_empty_and_markup_input():
    assert chunk("") == []
    chunks = chunk("<p>Hello there.</p><p>Second one.</p>")
    assert chunks[0].text == "Hello there.\nSecond one."


@pytest.mark.parametrize("kw", [{"max_tokens": 0}, {"max_tokens": 10, "overlap_tokens": 10}, {"overlap_tokens": -1}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ChunkerConfig(**kw)


@pytest.mark.parametrize("text, n", [
    ("Dr. Smith visited the mine. It was closed.", 2),
    ("The U.S. Department approved it. Then it opened.", 2),
    ("John A. Smith runs it. Done.", 2),
    ("Ends without punctuation", 1),
])
def test_split_sentences_abbreviations(text, n):
    spans = split_sentences(text)
    assert len(spans) == n
    assert "".join(text[s:e] for s, e in spans) == text


def test_chunk_ids():
    c = chunk("a. b.", filing_id="F")[0]
    assert c.id == "F:0000"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(3, 40), st.integers(0, 10))
def test_invariants_small_windows(seed, max_tokens, overlap):
    overlap = min(overlap, max_tokens - 1)
    doc = random_document(random.Random(seed), max_sentence=15, sentences=30)
    check_invariants(doc, ChunkerConfig(max_tokens, overlap))
