"""Tokenization, vocabulary, embedding tables and dataset readers."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from twowing.autodiff import Tensor, embedding
from twowing.errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

# Internal label order: index 0 = REFUTED, 1 = SUPPORTED, 2 = NEI.
LABELS = ("REFUTED", "SUPPORTED", "NEI")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
NEI = LABEL_INDEX["NEI"]

UNK = "<unk>"
SENTENCE_PUNCT = ".,;!?"


def tokenize(text: str) -> list[str]:
    """Split on whitespace, peeling trailing ``. , ; ! ?`` off as separate tokens.

    Case is preserved and hyphenated words stay whole.

    >>> tokenize("Telemundo is an English-language television network.")
    ['Telemundo', 'is', 'an', 'English-language', 'television', 'network', '.']
    """
    tokens = []
    for chunk in text.split():
        word = chunk.rstrip(SENTENCE_PUNCT)
        if word:
            tokens.append(word)
        tokens.extend(chunk[len(word):])
    return tokens


def is_punct(token: str) -> bool:
    return len(token) == 1 and token in SENTENCE_PUNCT


class Vocab:
    """Token <-> id map with id 0 reserved for unknown tokens."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos = [UNK]
        self.stoi = {UNK: 0}
        for w in words:
            if w not in self.stoi:
                self.stoi[w] = len(self.itos)
                self.itos.append(w)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    def id(self, word: str) -> int:
        return self.stoi.get(word, 0)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, 0) for t in tokens]


def build_vocab(streams: Iterable[Iterable[str]], max_size: Optional[int] = None) -> Vocab:
    """Build a vocabulary from token streams.

    Tokens are ordered by frequency (descending) and then by surface form, so
    the result only depends on the aggregate counts.
    """
    counts: Counter = Counter()
    for stream in streams:
        counts.update(stream)
    counts.pop(UNK, None)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        ordered = ordered[: max(0, max_size - 1)]
    return Vocab(w for w, _ in ordered)


def embed(table: Tensor, vocab: Vocab, tokens: list[str]) -> Tensor:
    """Feature map ``d x l`` whose column ``j`` is the embedding of token ``j``."""
    return embedding(table, vocab.ids(tokens))


def random_embeddings(vocab_size: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-0.01, 0.01, size=(vocab_size, dim))


def load_embeddings(path, vocab: Vocab, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Initialise a ``len(vocab) x dim`` table from a word-vector text file.

    Words absent from the file keep a uniform(-0.01, 0.01) row drawn from
    ``rng``. A leading ``"<count> <dim>"`` header line is skipped. Later
    duplicates of a word are ignored with a warning.
    """
    table = random_embeddings(len(vocab), dim, rng)
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ParseError(
                    f"expected {dim} values for {word!r}, found {len(values)}", path, lineno
                )
            if word in seen:
                logger.warning("%s:%d: duplicate vector for %r ignored", path, lineno, word)
                continue
            seen.add(word)
            if word in vocab:
                try:
                    table[vocab.id(word)] = [float(v) for v in values]
                except ValueError as exc:
                    raise ParseError(str(exc), path, lineno) from None
    return table


@dataclass
class ClaimRecord:
    id: int
    claim: str
    label: str
    evidence: set = field(default_factory=set)

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]


@dataclass
class WikiPage:
    title: str
    sentences: list


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed record ({exc.msg})", path, lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("record is not an object", path, lineno)
            yield lineno, obj


def parse_claim(obj: dict, path=None, lineno=None) -> ClaimRecord:
    try:
        cid = obj["id"]
        claim = obj["claim"]
        label = obj["label"]
        evidence = obj.get("evidence", [])
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", path, lineno) from None
    if not isinstance(cid, int) or not isinstance(claim, str):
        raise ParseError("'id' must be an int and 'claim' a string", path, lineno)
    if label not in LABEL_INDEX:
        raise ValidationError(f"unknown label {label!r}", path, lineno)
    gold = set()
    for item in evidence:
        if not (isinstance(item, (list, tuple)) and len(item) == 2
                and isinstance(item[0], str) and isinstance(item[1], int)):
            raise ParseError(f"bad evidence entry {item!r}", path, lineno)
        gold.add((item[0], item[1]))
    if label == "NEI" and gold:
        raise ValidationError("NEI claims carry no evidence", path, lineno)
    return ClaimRecord(cid, claim, label, gold)


def load_dataset(path) -> list[ClaimRecord]:
    """Read a claims file: one JSON object per line with id/claim/label/evidence."""
    return [parse_claim(obj, path, lineno) for lineno, obj in _read_jsonl(path)]


def load_wiki(path) -> list[WikiPage]:
    pages = []
    for lineno, obj in _read_jsonl(path):
        title, sentences = obj.get("title"), obj.get("sentences")
        if not isinstance(title, str) or not isinstance(sentences, list) \
                or not all(isinstance(s, str) for s in sentences):
            raise ParseError("wiki record needs 'title' and a list of 'sentences'", path, lineno)
        pages.append(WikiPage(title, sentences))
    return pages


def claim_to_json(rec: ClaimRecord) -> dict:
    return {
        "id": rec.id,
        "claim": rec.claim,
        "label": rec.label,
        "evidence": [list(e) for e in sorted(rec.evidence)],
    }


def write_jsonl(path, records: Iterable[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
