import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ref_split
from tacorl.corpus import (
    UNK,
    Sample,
    TokenSequence,
    Vocabulary,
    chunk,
    detokenize,
    dump_dataset,
    heuristic_labels,
    load_dataset,
    split_words,
    tokenize,
)
from tacorl.errors import EmptyInput, ParseError, SchemaError, VocabError


def _seq(n):
    toks = tuple(f"t{i}" for i in range(n))
    return TokenSequence(toks, tuple(range(n)))


class TestTokenize:
    def test_sentence_with_period(self):
        v = Vocabulary.build(["The cat sat."])
        s = tokenize("The cat sat.", v)
        assert list(s.tokens) == ["The", "cat", "sat", "."]
        assert s.n == 4

    def test_repeated_token_same_id(self):
        v = Vocabulary.build(["a"])
        s = tokenize("a a a", v)
        assert s.n == 3
        assert len(set(s.ids)) == 1

    def test_empty_raises(self):
        v = Vocabulary()
        for text in ("", "   ", "\n\t"):
            with pytest.raises(EmptyInput):
                tokenize(text, v)

    def test_unknown_maps_to_unk(self):
        v = Vocabulary.build(["known"])
        s = tokenize("known stranger", v)
        assert s.ids[1] == v.unk_id == 0

    def test_punctuation_peeled_per_character(self):
        assert split_words('("hi")!') == ["(", '"', "hi", '"', ")", "!"]
        assert split_words("don't 3.14 ...") == ["don't", "3.14", ".", ".", "."]

    def test_long_document_matches_reference_split(self):
        rng = np.random.default_rng(7)
        words = ["alpha", "beta,", "(gamma)", "delta.", "eps!", "'zeta'", "e.g.", "x-ray", "--", "ok?"]
        text = " ".join(rng.choice(words, size=1200))
        v = Vocabulary.build([text])
        assert tokenize(text, v).n == len(ref_split(text))
        assert list(tokenize(text, v).tokens) == ref_split(text)

    def test_deterministic(self, vocab):
        text = "the dog sat on a mat !"
        assert tokenize(text, vocab) == tokenize(text, vocab)

    @given(st.text(alphabet="ab .,!?'()\n", min_size=0, max_size=60))
    def test_split_matches_reference(self, text):
        assert split_words(text) == ref_split(text)


class TestVocabulary:
    def test_dense_ids(self):
        v = Vocabulary.build(["b a c a", "d b"])
        assert sorted(v.stoi.values()) == list(range(len(v)))
        assert v.itos[0] == UNK and v.unk_id < len(v)

    def test_bijective(self):
        v = Vocabulary.build(["x y z"])
        for tok, idx in v.stoi.items():
            assert v.token(idx) == tok

    def test_lowercase_keys(self):
        v = Vocabulary.build(["The the THE"])
        assert len(v) == 2
        assert v.lookup("tHe") == v.lookup("the")

    def test_out_of_range_id(self):
        with pytest.raises(VocabError):
            Vocabulary().token(5)

    def test_json_round_trip(self, tmp_path):
        v = Vocabulary.build(["one two three"])
        v.save(tmp_path / "v.json")
        w = Vocabulary.load(tmp_path / "v.json")
        assert w.itos == v.itos

    def test_bad_json_rejected(self):
        with pytest.raises(SchemaError):
            Vocabulary.from_json(json.dumps({"tokens": ["a", "b"]}))


class TestTokenSequence:
    def test_lengths_must_agree(self):
        with pytest.raises(SchemaError):
            TokenSequence(("a", "b"), (1,))

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            TokenSequence((), ())


class TestChunk:
    def test_exact_multiple(self):
        assert [c.n for c in chunk(_seq(1024), 512)] == [512, 512]

    def test_under_limit(self):
        assert [c.n for c in chunk(_seq(5), 512)] == [5]

    def test_remainder(self):
        assert [c.n for c in chunk(_seq(1030), 512)] == [512, 512, 6]

    def test_bad_max_len(self):
        with pytest.raises(ValueError):
            chunk(_seq(3), 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 10_000), st.integers(1, 700))
    def test_partition_property(self, n, max_len):
        s = _seq(n)
        parts = chunk(s, max_len)
        assert sum((list(p.tokens) for p in parts), []) == list(s.tokens)
        assert all(p.n == max_len for p in parts[:-1])
        assert 1 <= parts[-1].n <= max_len


class TestDetokenize:
    def test_join(self):
        assert detokenize(TokenSequence(("The", "cat"), (1, 2))) == "The cat"

    def test_single(self):
        assert detokenize(TokenSequence(("x",), (0,))) == "x"

    def test_round_trip_spaces(self):
        v = Vocabulary.build(["a b c"])
        assert detokenize(tokenize("a b c", v)) == "a b c"


class TestHeuristicLabels:
    def test_stopwords_and_punct_dropped(self):
        v = Vocabulary.build(["The cat sat on the mat ."])
        s = tokenize("The cat sat on the mat .", v)
        assert heuristic_labels(s) == [0, 1, 1, 0, 0, 1, 0]


def _write(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows), encoding="utf-8")


class TestLoadDataset:
    def test_three_lines_in_order(self, tmp_path):
        rows = [{"id": f"s{i}", "context": f"text {i}", "task": "summarization"} for i in range(3)]
        _write(tmp_path / "d.jsonl", rows)
        data = load_dataset(tmp_path / "d.jsonl")
        assert [s.id for s in data] == ["s0", "s1", "s2"]

    def test_missing_context_line_2(self, tmp_path):
        rows = [
            {"id": "a", "context": "x", "task": "summarization"},
            {"id": "b", "task": "summarization"},
            {"id": "c", "context": "y", "task": "summarization"},
        ]
        _write(tmp_path / "d.jsonl", rows)
        with pytest.raises(SchemaError) as err:
            load_dataset(tmp_path / "d.jsonl")
        assert err.value.line == 2

    def test_qa_without_question(self, tmp_path):
        _write(tmp_path / "d.jsonl", [{"id": "a", "context": "x", "task": "qa"}])
        with pytest.raises(SchemaError):
            load_dataset(tmp_path / "d.jsonl")

    def test_malformed_json_carries_line(self, tmp_path):
        _write(tmp_path / "d.jsonl", [{"id": "a", "context": "x", "task": "qa", "question": "q"}, "{oops"])
        with pytest.raises(ParseError) as err:
            load_dataset(tmp_path / "d.jsonl")
        assert err.value.line == 2

    def test_duplicate_id(self, tmp_path):
        row = {"id": "a", "context": "x", "task": "summarization"}
        _write(tmp_path / "d.jsonl", [row, row])
        with pytest.raises(SchemaError):
            load_dataset(tmp_path / "d.jsonl")

    def test_unknown_task(self, tmp_path):
        _write(tmp_path / "d.jsonl", [{"id": "a", "context": "x", "task": "translation"}])
        with pytest.raises(SchemaError):
            load_dataset(tmp_path / "d.jsonl")

    def test_dump_round_trip(self, tmp_path):
        samples = [
            Sample("a", "ctx one", "qa", question="what?", reference="one"),
            Sample("b", "ctx two", "summarization"),
        ]
        dump_dataset(samples, tmp_path / "d.jsonl")
        assert load_dataset(tmp_path / "d.jsonl") == samples
