import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twowing.autodiff import Tensor
from twowing.corpus import (LABELS, NEI, UNK, Vocab, build_vocab, claim_to_json, embed,
                            load_dataset, load_embeddings, load_wiki, tokenize)
from twowing.errors import ArgumentError, ParseError, ValidationError

words = st.text(alphabet="abcXYZ-.,;!? ", max_size=40)


class TestTokenize:
    def test_claim_sentence(self):
        assert tokenize("Telemundo is an English-language television network.") == [
            "Telemundo", "is", "an", "English-language", "television", "network", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_whitespace_collapse(self):
        assert tokenize("a  b") == ["a", "b"]

    def test_multiple_trailing_marks(self):
        assert tokenize("really?!") == ["really", "?", "!"]

    @given(words)
    def test_idempotent_on_joined_output(self, text):
        once = tokenize(text)
        assert tokenize(" ".join(once)) == once

    @given(words)
    def test_deterministic(self, text):
        assert tokenize(text) == tokenize(text)


class TestVocab:
    def test_counts_then_surface(self):
        vocab = build_vocab([["a", "a", "b"]])
        assert vocab.stoi == {UNK: 0, "a": 1, "b": 2}

    def test_duplicate_streams(self):
        once = build_vocab([["x", "y", "y"]])
        twice = build_vocab([["x", "y", "y"], ["x", "y", "y"]])
        assert once.itos == twice.itos

    def test_empty_corpus(self):
        assert build_vocab([]).itos == [UNK]

    def test_max_size(self):
        assert build_vocab([list("aaabbc")], max_size=3).itos == [UNK, "a", "b"]

    def test_unknown_maps_to_zero(self):
        assert Vocab(["a"]).ids(["a", "zz"]) == [1, 0]

    @given(st.lists(st.lists(st.sampled_from("abcdef"), max_size=6), max_size=6), st.randoms())
    def test_stream_order_irrelevant(self, streams, random):
        shuffled = list(streams)
        random.shuffle(shuffled)
        assert build_vocab(streams).itos == build_vocab(shuffled).itos


class TestEmbed:
    def setup_method(self):
        self.vocab = Vocab(["cat", "dog"])
        self.table = Tensor(np.arange(12, dtype=float).reshape(3, 4))

    def test_known_token(self):
        np.testing.assert_array_equal(embed(self.table, self.vocab, ["dog"]).data[:, 0],
                                      self.table.data[2])

    def test_oov_uses_row_zero(self):
        np.testing.assert_array_equal(embed(self.table, self.vocab, ["emu"]).data[:, 0],
                                      self.table.data[0])

    @given(st.lists(st.sampled_from(["cat", "dog", "emu"]), min_size=1, max_size=7))
    def test_shape(self, tokens):
        assert embed(self.table, self.vocab, tokens).shape == (4, len(tokens))

    def test_empty(self):
        with pytest.raises(ArgumentError):
            embed(self.table, self.vocab, [])


def _write(path, lines):
    path.write_text("".join(line + "\n" for line in lines))
    return path


class TestDataset:
    def test_supported_record(self, tmp_path):
        rec = {"id": 1, "claim": "c", "label": "SUPPORTED", "evidence": [["Telemundo", 0]]}
        (claim,) = load_dataset(_write(tmp_path / "d.jsonl", [json.dumps(rec)]))
        assert claim.evidence == {("Telemundo", 0)}
        assert LABELS[claim.label_index] == "SUPPORTED"

    def test_nei_record(self, tmp_path):
        rec = {"id": 2, "claim": "c", "label": "NEI", "evidence": []}
        (claim,) = load_dataset(_write(tmp_path / "d.jsonl", [json.dumps(rec)]))
        assert claim.evidence == set()
        assert claim.label_index == NEI

    def test_unknown_label(self, tmp_path):
        rec = {"id": 3, "claim": "c", "label": "MAYBE", "evidence": []}
        with pytest.raises(ValidationError):
            load_dataset(_write(tmp_path / "d.jsonl", [json.dumps(rec)]))

    def test_malformed_line_reports_line_number(self, tmp_path):
        good = json.dumps({"id": 1, "claim": "c", "label": "NEI", "evidence": []})
        path = _write(tmp_path / "d.jsonl", [good, "{not json"])
        with pytest.raises(ParseError, match=r"d\.jsonl:2:"):
            load_dataset(path)

    def test_round_trip(self, tmp_path):
        rec = {"id": 7, "claim": "x y", "label": "REFUTED", "evidence": [["B", 1], ["A", 0]]}
        (claim,) = load_dataset(_write(tmp_path / "d.jsonl", [json.dumps(rec)]))
        assert claim_to_json(claim) == {**rec, "evidence": [["A", 0], ["B", 1]]}

    def test_wiki(self, tmp_path):
        path = _write(tmp_path / "w.jsonl", [json.dumps({"title": "T", "sentences": ["a ."]})])
        (page,) = load_wiki(path)
        assert (page.title, page.sentences) == ("T", ["a ."])

    def test_wiki_missing_sentences(self, tmp_path):
        with pytest.raises(ParseError):
            load_wiki(_write(tmp_path / "w.jsonl", [json.dumps({"title": "T"})]))


class TestLoadEmbeddings:
    def test_full_coverage(self, tmp_path):
        vocab = Vocab(["a", "b"])
        path = _write(tmp_path / "e.txt", ["<unk> 0 0", "a 1 2", "b 3 4"])
        table = load_embeddings(path, vocab, 2, np.random.default_rng(0))
        np.testing.assert_array_equal(table, [[0, 0], [1, 2], [3, 4]])

    def test_header_skipped(self, tmp_path):
        path = _write(tmp_path / "e.txt", ["1 2", "a 5 6"])
        table = load_embeddings(path, Vocab(["a"]), 2, np.random.default_rng(0))
        np.testing.assert_array_equal(table[1], [5, 6])

    def test_empty_file_is_seeded(self, tmp_path):
        path = _write(tmp_path / "e.txt", [])
        vocab = Vocab(["a", "b"])
        first = load_embeddings(path, vocab, 3, np.random.default_rng(5))
        second = load_embeddings(path, vocab, 3, np.random.default_rng(5))
        np.testing.assert_array_equal(first, second)
        assert np.all(np.abs(first) <= 0.01)

    def test_duplicate_first_wins(self, tmp_path, caplog):
        path = _write(tmp_path / "e.txt", ["a 1 1", "a 2 2"])
        with caplog.at_level(logging.WARNING):
            table = load_embeddings(path, Vocab(["a"]), 2, np.random.default_rng(0))
        np.testing.assert_array_equal(table[1], [1, 1])
        assert "duplicate" in caplog.text

    def test_wrong_length(self, tmp_path):
        path = _write(tmp_path / "e.txt", ["a 1 2 3"])
        with pytest.raises(ParseError, match=":1:"):
            load_embeddings(path, Vocab(["a"]), 2, np.random.default_rng(0))
