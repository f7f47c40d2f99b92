"""Acceptance criteria, one test each.

The terminal summary (see conftest.py) prints one PASS/FAIL line per criterion.
"""

import time

import numpy as np

from twowing import autodiff as ad
from twowing.autodiff import AdaGrad, Tensor
from twowing.corpus import WikiPage
from twowing.encoders import ConvParams, vanilla_encode
from twowing.model import (binarize, claim_rep_coarse, claim_rep_single_fine,
                           claim_rep_two_channel, clue_context, forward)
from twowing.retrieval import InvertedIndex, detect_entity_mentions, retrieve_topk
from twowing.scorer import (ClaimJudgment, acc_ceiling, evaluate, evidence_prf, no_score_ev,
                            score_ev)
from twowing.trainer import Checkpoint, TrainConfig, evaluate_examples, init_params, train

from conftest import synthetic_examples
from gradcheck import LOSSES, gradient_errors, well_separated_instance
from oracles import REL_TOL, brute_force_topk

VARIANTS = [(ev, cv) for ev in ("coarse", "fine") for cv in ("coarse", "single", "two")]
LABEL_NAMES = ("SUPPORTED", "REFUTED", "NEI")


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    for ev, cv in VARIANTS:
        for _ in range(20):
            params, ex = well_separated_instance(rng, d=8, evidence_rep=ev, claim_rep=cv)
            assert len(ex.candidates) == 3 and all(len(c) <= 5 for c in ex.candidates)
            for (loss, name), err in gradient_errors(params, ex).items():
                key = (ev, cv, loss, name)
                worst[key] = max(worst.get(key, 0.0), err)
    elapsed = time.perf_counter() - start
    failures = {k: v for k, v in worst.items() if v >= REL_TOL}
    assert not failures, failures
    assert {k[2] for k in worst} == set(LOSSES)
    assert elapsed < 120, f"gradient suite took {elapsed:.1f}s"


def test_criterion_2_acc_ceiling_table():
    for rate, expected in ((0.8963, 0.9308), (0.5530, 0.7020), (0.2531, 0.5021)):
        assert abs(acc_ceiling(rate, 3333, 3333, 3333) - expected) <= 1e-4


def test_criterion_3_scorer_fixtures():
    four = [
        ClaimJudgment("SUPPORTED", "SUPPORTED", {("A", 0), ("A", 1)}, {("A", 0), ("B", 3)}),
        ClaimJudgment("REFUTED", "REFUTED", {("C", 0)}, {("C", 0)}),
        ClaimJudgment("NEI", "NEI", set(), set()),
        ClaimJudgment("SUPPORTED", "REFUTED", {("D", 2)}, {("D", 2), ("E", 1)}),
    ]
    assert no_score_ev(four) == 0.75
    assert score_ev(four) == 0.5
    assert evidence_prf(four)[:2] == (0.6, 0.75)
    assert evaluate(four).f1 == 0.6667

    coverage = [ClaimJudgment("SUPPORTED", "SUPPORTED", {("A", 0)}, {("A", 0)}),
                ClaimJudgment("REFUTED", "REFUTED", {("B", 0), ("B", 1)}, {("B", 0)})]
    assert (no_score_ev(coverage), score_ev(coverage)) == (1.0, 0.5)

    half = [ClaimJudgment("SUPPORTED", "SUPPORTED", {("A", 0), ("A", 1)}, {("A", 0), ("B", 3)})]
    assert evidence_prf(half) == (0.5, 0.5, 0.5)


def _random_corpus(rng, n_pages, n_claims):
    lexicon = ["Alpha", "Beta", "Gamma", "Delta", "Omega", "alpha", "beta", "river", "film",
               "song", "the", "of", "American", "Home", "Holidays", "city", "band", "1995"]

    def words(lo, hi):
        return [lexicon[i] for i in rng.integers(0, len(lexicon), int(rng.integers(lo, hi)))]

    pages, seen = [], set()
    while len(pages) < n_pages:
        title = "_".join(words(1, 4))
        if rng.random() < 0.2:
            title += "_(" + "_".join(words(1, 3)) + ")"
        if title not in seen:
            seen.add(title)
            pages.append(WikiPage(title, [" ".join(words(2, 9)) + " ."
                                          for _ in range(int(rng.integers(0, 4)))]))
    claims = [" ".join(words(1, 10)) + "." for _ in range(n_claims)]
    return pages, claims


def test_criterion_4_retrieval_oracle():
    start = time.perf_counter()
    assert detect_entity_mentions("Home for the Holidays stars a famous American actor.") == [
        "Home", "Holidays", "American"]
    rng = np.random.default_rng(77)
    for trial in range(12):
        n_pages = 200 if trial % 2 == 0 else int(rng.integers(1, 200))
        pages, claims = _random_corpus(rng, n_pages, 50)
        index = InvertedIndex.build(pages)
        for claim in claims:
            for k in (1, 5, n_pages):
                got = [(r.title, r.score) for r in retrieve_topk(claim, index, k)]
                assert got == brute_force_topk(claim, pages, k), (trial, claim, k)
    elapsed = time.perf_counter() - start
    assert elapsed < 30, f"retrieval oracle took {elapsed:.1f}s"


def test_criterion_5_overfit():
    start = time.perf_counter()
    examples, vocab, _, claims = synthetic_examples(50, seed=0)
    assert len(claims) == 50
    cfg = TrainConfig(mode="share-cnn", evidence_rep="fine", claim_rep="two", hidden=32,
                      batch=5, epochs=200, seed=0)
    ckpt = train(cfg, examples, vocab)
    history = ckpt.history
    assert len(history) <= 200
    reached = [h.epoch for h in history if h.dev_no_score_ev >= 0.95 and h.dev_f1 >= 0.90]
    assert reached, max((h.dev_no_score_ev, h.dev_f1) for h in history)
    final = evaluate_examples(ckpt.params, examples)
    assert final.no_score_ev >= 0.95 and final.f1 >= 0.90
    losses = np.array([h.l for h in history])
    moving = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(moving) <= 0), np.diff(moving).max()
    elapsed = time.perf_counter() - start
    assert elapsed < 300, f"overfit run took {elapsed:.1f}s"


def test_criterion_6_mode_contracts():
    examples, vocab, _, _ = synthetic_examples(12, seed=4)

    # pipeline: the claim phase leaves every evidence-wing tensor bitwise unchanged
    frozen = {}

    def freeze(phase, params):
        if phase == "evidence":
            frozen.update({id(t): t.data.copy() for t in params.evidence_wing()})

    cfg = TrainConfig(mode="pipeline", hidden=6, batch=4, epochs=3, seed=1)
    ckpt = train(cfg, examples, vocab, on_phase_end=freeze)
    params = ckpt.params
    assert frozen and [h.phase for h in ckpt.history].count("claim") == 3
    for t in params.evidence_wing():
        assert np.array_equal(t.data, frozen[id(t)])
    assert {id(t) for t in params.evidence_wing()}.isdisjoint(id(t) for t in params.claim_wing())

    # share-cnn: one embedding table and CNN; an l_ev-only step moves claim-wing encodings
    cfg = TrainConfig(mode="share-cnn", evidence_rep="coarse", claim_rep="coarse", hidden=6)
    params = init_params(cfg, vocab, np.random.default_rng(0))
    assert params.emb_cv is params.emb_ev
    assert params.cnn_cv is params.cnn_ev
    ex = next(e for e in examples if e.candidates)

    def claim_encodings():
        with ad.no_grad():
            return np.stack([vanilla_encode(ad.embedding(params.emb_cv, c), params.cnn_cv).data
                             for c in ex.candidates])

    before = claim_encodings()
    opt = AdaGrad(params.parameters(), lr=0.05)
    forward(params, ex).l_ev.backward()
    opt.step()
    assert np.max(np.abs(claim_encodings() - before)) > 0

    # diff-cnn: shared embeddings, distinct CNN parameter objects
    params = init_params(TrainConfig(mode="diff-cnn", hidden=6), vocab, np.random.default_rng(0))
    assert params.emb_cv is params.emb_ev
    assert params.cnn_cv is not params.cnn_ev
    assert params.cnn_cv.W is not params.cnn_ev.W and params.cnn_cv.b is not params.cnn_ev.b
    names = [n for n, _ in params.named_parameters()]
    assert "emb_cv" not in names and {"cnn_ev.W", "cnn_cv.W"} <= set(names)


def test_criterion_7_invariances():
    rng = np.random.default_rng(8)
    d = 3
    for _ in range(20):
        m = 4
        alpha = rng.uniform(0.05, 0.95, m)
        p = binarize(alpha)
        maps = [rng.normal(size=(d, int(rng.integers(1, 5)))) for _ in range(m)]
        X = Tensor(rng.normal(size=(d, 3)))
        reps = rng.normal(size=(m, d))
        att = ConvParams(Tensor(rng.normal(size=(d, 4 * d))), Tensor(rng.normal(size=d)))
        perm = rng.permutation(m)

        e1, _ = claim_rep_coarse(Tensor(alpha), p, [Tensor(r) for r in reps], X)
        e2, _ = claim_rep_coarse(Tensor(alpha[perm]), p[perm], [Tensor(reps[i]) for i in perm], X)
        np.testing.assert_allclose(e1.data, e2.data, atol=1e-12)
        for rep in (claim_rep_single_fine, claim_rep_two_channel):
            a = rep(Tensor(alpha), p, [Tensor(M) for M in maps], X, att)
            b = rep(Tensor(alpha[perm]), p[perm], [Tensor(maps[i]) for i in perm], X, att)
            np.testing.assert_allclose(a[0].data, b[0].data, atol=1e-12)
            np.testing.assert_allclose(a[1].data, b[1].data, atol=1e-12)

        S = Tensor(maps[0])
        pooled = clue_context(S, ad.hstack([Tensor(M) for M in maps])).data
        shuffled = clue_context(S, ad.hstack([Tensor(maps[i]) for i in perm])).data
        np.testing.assert_allclose(pooled, shuffled, atol=1e-12)

    for _ in range(1000):
        js = []
        for _ in range(int(rng.integers(1, 10))):
            gold, pred = (LABEL_NAMES[i] for i in rng.integers(0, 3, 2))
            gold_ev = set() if gold == "NEI" else {("T", int(i)) for i in rng.integers(0, 4, 2)}
            js.append(ClaimJudgment(gold, pred, gold_ev,
                                    {("T", int(i)) for i in rng.integers(0, 4, 3)}))
        assert score_ev(js) <= no_score_ev(js)

    np.testing.assert_array_equal(binarize([0.5, np.nextafter(0.5, 1), np.nextafter(0.5, 0)]),
                                  [0, 1, 0])


def test_criterion_8_determinism(tmp_path):
    examples, vocab, _, _ = synthetic_examples(15, seed=6)
    outputs = []
    for run in ("a", "b"):
        cfg = TrainConfig(hidden=6, batch=4, epochs=3, seed=11)
        ckpt = train(cfg, examples, vocab)
        ckpt.save(tmp_path / f"{run}.bin")
        report = evaluate_examples(Checkpoint.load(tmp_path / f"{run}.bin").params, examples)
        outputs.append(((tmp_path / f"{run}.bin").read_bytes(), report.to_text(), report.to_csv()))
    assert outputs[0] == outputs[1]
