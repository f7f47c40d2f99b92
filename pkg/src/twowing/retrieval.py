"""Wiki page retrieval by title/claim word overlap.

Titles are scored against the claim (and its capitalised entity mentions) by
word recall; titles that are not an exact cover additionally get the recall of
the claim's words in the page body. An inverted index from title words to
titles restricts scoring to titles that share at least one claim word.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from twowing.corpus import ClaimRecord, WikiPage, is_punct, tokenize
from twowing.errors import BuildError, ParseError, VersionError

logger = logging.getLogger(__name__)

INDEX_VERSION = 1


def detect_entity_mentions(claim: str) -> list[str]:
    """Maximal runs of tokens starting with an uppercase letter.

    >>> detect_entity_mentions("Home for the Holidays stars a famous American actor.")
    ['Home', 'Holidays', 'American']
    """
    mentions, run = [], []
    for tok in tokenize(claim):
        if tok[0].isupper():
            run.append(tok)
        elif run:
            mentions.append(" ".join(run))
            run = []
    if run:
        mentions.append(" ".join(run))
    return mentions


def text_vocab(text: str) -> set[str]:
    return {t for t in tokenize(text) if not is_punct(t)}


def title_words(title: str) -> list[str]:
    """Words of a wiki title: underscores separate words, parentheses are dropped."""
    cleaned = title.replace("_", " ").replace("(", " ").replace(")", " ")
    words = []
    for t in tokenize(cleaned):
        if not is_punct(t) and t not in words:
            words.append(t)
    return words


def title_slots(title: str) -> list[frozenset]:
    """One set of accepted surface forms per distinct title word.

    The first word also matches its lowercased form.
    """
    words = title_words(title)
    slots = []
    for pos, w in enumerate(words):
        forms = {w, w.lower()} if pos == 0 else {w}
        slots.append(frozenset(forms))
    return slots


def _covered(slots: Sequence[frozenset], vocab: set) -> int:
    return sum(1 for forms in slots if not forms.isdisjoint(vocab))


def score_title(claim_vocab: set, mention_vocab: set, slots: Sequence[frozenset],
                page_vocab: set):
    """Score one title, or return ``None`` if it shares no word with the claim.

    ``title_score`` is the larger of the recall of the title words in the claim
    and in the entity mentions. A perfect title match scores 1.0 outright;
    otherwise the recall of the claim's words in the page body is added.
    """
    if not slots:
        return None
    in_claim = _covered(slots, claim_vocab)
    if in_claim == 0:
        return None
    in_mentions = _covered(slots, mention_vocab)
    title_score = max(in_claim, in_mentions) / len(slots)
    if title_score == 1.0:
        return title_score
    page_score = len(claim_vocab & page_vocab) / len(claim_vocab)
    return title_score + page_score


@dataclass(frozen=True)
class RankedTitle:
    title: str
    score: float


@dataclass
class _TitleEntry:
    slots: list
    page_vocab: frozenset


class InvertedIndex:
    """Map from title words to titles, plus each title's page-body vocabulary.

    Immutable once built.
    """

    def __init__(self, entries: dict, postings: dict):
        self._entries = entries
        self._postings = postings

    @classmethod
    def build(cls, pages: Iterable[WikiPage]) -> "InvertedIndex":
        entries = {}
        postings: dict = {}
        for page in pages:
            if page.title in entries:
                raise BuildError(f"duplicate wiki title {page.title!r}")
            slots = title_slots(page.title)
            if not slots:
                logger.warning("title %r has no words; skipped", page.title)
                continue
            vocab = set()
            for sent in page.sentences:
                vocab |= text_vocab(sent)
            entries[page.title] = _TitleEntry(slots, frozenset(vocab))
            for forms in slots:
                for form in forms:
                    postings.setdefault(form, set()).add(page.title)
        return cls(entries, {w: frozenset(ts) for w, ts in postings.items()})

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, title: str) -> bool:
        return title in self._entries

    @property
    def titles(self) -> list[str]:
        return sorted(self._entries)

    def titles_for(self, word: str) -> frozenset:
        return self._postings.get(word, frozenset())

    @property
    def vocabulary_size(self) -> int:
        return len(self._postings)

    def candidates(self, claim_vocab: set) -> set[str]:
        found = set()
        for w in claim_vocab:
            found |= self._postings.get(w, frozenset())
        return found

    def retrieve(self, claim: str, k: int = 5) -> list[RankedTitle]:
        return retrieve_topk(claim, self, k)

    # serialization -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "version": INDEX_VERSION,
            "pages": [
                {"title": t, "page_vocab": sorted(self._entries[t].page_vocab)}
                for t in sorted(self._entries)
            ],
            "postings": {w: sorted(ts) for w, ts in sorted(self._postings.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InvertedIndex":
        if obj.get("version") != INDEX_VERSION:
            raise VersionError(f"unsupported index version {obj.get('version')!r}")
        entries = {
            p["title"]: _TitleEntry(title_slots(p["title"]), frozenset(p["page_vocab"]))
            for p in obj["pages"]
        }
        postings = {w: frozenset(ts) for w, ts in obj["postings"].items()}
        return cls(entries, postings)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed index ({exc.msg})", path, exc.lineno) from None
        return cls.from_json(obj)


def retrieve_topk(claim: str, index: InvertedIndex, k: int = 5) -> list[RankedTitle]:
    """Top-``k`` titles by score (descending), ties broken by ascending title."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    claim_vocab = text_vocab(claim)
    mention_vocab = set()
    for m in detect_entity_mentions(claim):
        mention_vocab.update(m.split())
    scored = []
    for title in index.candidates(claim_vocab):
        entry = index._entries[title]
        score = score_title(claim_vocab, mention_vocab, entry.slots, entry.page_vocab)
        if score is not None:
            scored.append(RankedTitle(title, score))
    scored.sort(key=lambda r: (-r.score, r.title))
    return scored[:k]


def coverage_rate(claims: Sequence[ClaimRecord], retrieved: dict) -> float:
    """Fraction of SUPPORTED/REFUTED claims whose gold pages were all retrieved.

    Args:
        claims: gold claim records.
        retrieved: claim id -> list of retrieved titles.
    """
    relevant = [c for c in claims if c.label != "NEI"]
    if not relevant:
        return 0.0
    hit = 0
    for c in relevant:
        gold_pages = {title for title, _ in c.evidence}
        if gold_pages <= set(retrieved.get(c.id, ())):
            hit += 1
    return hit / len(relevant)


def retrieval_records(claim_id: int, ranked: Sequence[RankedTitle]) -> list[dict]:
    return [
        {"claim_id": claim_id, "rank": rank, "title": r.title, "score": r.score}
        for rank, r in enumerate(ranked, 1)
    ]


def load_retrieved(path) -> dict:
    """Read a ranked-title file into ``claim id -> titles in rank order``."""
    by_claim: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                by_claim.setdefault(rec["claim_id"], []).append((rec["rank"], rec["title"]))
            except (json.JSONDecodeError, KeyError, TypeError):
                raise ParseError("malformed retrieval record", path, lineno) from None
    return {cid: [t for _, t in sorted(items)] for cid, items in by_claim.items()}
