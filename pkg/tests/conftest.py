import re

import numpy as np
import pytest

from twowing.corpus import WikiPage, build_vocab
from twowing.model import Example, ModelConfig, ModelParams
from twowing.retrieval import InvertedIndex, retrieve_topk
from twowing.synthetic import make_corpus
from twowing.trainer import build_examples, vocab_streams


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_pages():
    return [
        WikiPage("Telemundo", [
            "Telemundo is an American Spanish-language terrestrial television network .",
            "The channel is aimed at Hispanic and Latino American audiences .",
        ]),
        WikiPage("Toronto", ["Toronto is the largest city in Canada ."]),
        WikiPage("Canada", ["Canada is a country in North America ."]),
    ]


def random_example(rng, vocab_size=12, m=3, max_len=5, claim_len=None, label=None):
    claim_len = claim_len or int(rng.integers(1, max_len + 1))
    cands = [list(rng.integers(0, vocab_size, int(rng.integers(1, max_len + 1))))
             for _ in range(m)]
    q = (rng.random(m) < 0.5).astype(float)
    if label is None:
        label = int(rng.integers(0, 3))
    return Example(0, list(rng.integers(0, vocab_size, claim_len)), cands, q=q, label=label)


def random_model(rng, vocab_size=12, d=8, **cfg):
    config = ModelConfig(vocab_size=vocab_size, hidden=d, **cfg)
    params = ModelParams(config, rng, embeddings=rng.normal(0.0, 0.5, (vocab_size, d)))
    params.v.data = rng.normal(0.0, 0.5, params.v.shape)
    return params


def synthetic_examples(n_claims=50, seed=0, top_k=5, max_candidates=64):
    """Examples, vocabulary and raw records for the seeded toy corpus."""
    pages, claims = make_corpus(n_claims, seed=seed)
    index = InvertedIndex.build(pages)
    retrieved = {c.id: [r.title for r in retrieve_topk(c.claim, index, top_k)] for c in claims}
    vocab = build_vocab(vocab_streams(claims, pages))
    examples = build_examples(claims, pages, retrieved, vocab, top_k, max_candidates)
    return examples, vocab, pages, claims


# --------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion
# --------------------------------------------------------------------------

_criteria = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not match:
        return
    key = (int(match.group(1)), match.group(2))
    if report.when == "call" or report.outcome != "passed":
        if _criteria.get(key) != "FAIL":
            _criteria[key] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), status in sorted(_criteria.items()):
        terminalreporter.write_line(f"[{status}] criterion {num}: {name.replace('_', ' ')}")
