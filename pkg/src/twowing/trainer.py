"""Training and prediction drivers.

Three regimes are supported:

* ``share-cnn`` / ``diff-cnn``: joint training on ``l_ev + l_cv``.
* ``pipeline``: the evidence wing is trained on ``l_ev`` alone, frozen, and
  then the claim wing is trained on ``l_cv`` over the frozen wing's selection.

Per-claim losses are averaged over the mini-batch before each AdaGrad step.
All randomness (initialisation and shuffling) comes from one seeded generator.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from twowing import autodiff as ad
from twowing.autodiff import AdaGrad
from twowing.corpus import (LABELS, ClaimRecord, Vocab, WikiPage, build_vocab,
                            load_embeddings, tokenize)
from twowing.errors import ArgumentError, VersionError
from twowing.model import (CLAIM_REPS, EVIDENCE_REPS, MODES, Example, ForwardResult,
                           ModelConfig, ModelParams, forward)
from twowing.scorer import ClaimJudgment, EvalReport, evaluate

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TWOWING-CHECKPOINT\n"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    mode: str = "share-cnn"
    evidence_rep: str = "fine"
    claim_rep: str = "two"
    lr: float = 0.02
    hidden: int = 300
    batch: int = 50
    width: int = 3
    epochs: int = 10
    seed: int = 0
    top_k: int = 5
    max_candidates: int = 64
    untie_attention: bool = False
    pipeline_gold_evidence: bool = False
    patience: Optional[int] = None
    eps: float = 1e-8

    def validate(self) -> None:
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {', '.join(MODES)}")
        if self.evidence_rep not in EVIDENCE_REPS:
            problems.append(f"evidence rep must be one of {', '.join(EVIDENCE_REPS)}")
        if self.claim_rep not in CLAIM_REPS:
            problems.append(f"claim rep must be one of {', '.join(CLAIM_REPS)}")
        if self.batch < 1:
            problems.append("batch must be >= 1")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.top_k < 1 or self.max_candidates < 1:
            problems.append("top_k and max_candidates must be >= 1")
        if self.lr < 0:
            problems.append("lr must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, hidden=self.hidden, width=self.width,
                           mode=self.mode, evidence_rep=self.evidence_rep,
                           claim_rep=self.claim_rep, untie_attention=self.untie_attention)


@dataclass
class EpochLog:
    epoch: int
    l_ev: float
    l_cv: float
    l: float
    dev_no_score_ev: float
    dev_score_ev: float
    dev_f1: float
    phase: str = "joint"

    def csv(self) -> str:
        return (f"{self.epoch},{self.l_ev:.6f},{self.l_cv:.6f},{self.l:.6f},"
                f"{self.dev_no_score_ev:.4f},{self.dev_score_ev:.4f},{self.dev_f1:.4f}")


LOG_HEADER = "epoch,l_ev,l_cv,l,dev_NoScoreEv,dev_ScoreEv,dev_F1"


# --------------------------------------------------------------------------
# data preparation
# --------------------------------------------------------------------------


def candidate_sentences(claim: ClaimRecord, pages_by_title: dict, titles: Sequence[str],
                        max_candidates: int) -> list[tuple]:
    """``(title, index, tokens)`` for every non-empty sentence of the retrieved pages.

    When more than ``max_candidates`` exist, gold sentences are kept first and the
    remaining budget is filled in retrieval order; the original order is preserved.
    """
    cands = []
    for title in titles:
        page = pages_by_title.get(title)
        if page is None:
            continue
        for idx, sent in enumerate(page.sentences):
            toks = tokenize(sent)
            if toks:
                cands.append((title, idx, toks))
    if len(cands) <= max_candidates:
        return cands
    gold = [i for i, c in enumerate(cands) if (c[0], c[1]) in claim.evidence][:max_candidates]
    keep = set(gold)
    for i in range(len(cands)):
        if len(keep) >= max_candidates:
            break
        keep.add(i)
    return [c for i, c in enumerate(cands) if i in keep]


def vocab_streams(claims: Iterable[ClaimRecord], pages: Iterable[WikiPage]) -> Iterator[list]:
    for c in claims:
        yield tokenize(c.claim)
    for p in pages:
        for s in p.sentences:
            yield tokenize(s)


def build_examples(claims: Sequence[ClaimRecord], pages: Sequence[WikiPage], retrieved: dict,
                   vocab: Vocab, top_k: int = 5, max_candidates: int = 64) -> list[Example]:
    """Turn claims plus their retrieved titles into id-level training examples."""
    pages_by_title = {p.title: p for p in pages}
    examples = []
    for c in claims:
        claim_tokens = tokenize(c.claim)
        if not claim_tokens:
            raise ArgumentError(f"claim {c.id} has no tokens")
        cands = candidate_sentences(c, pages_by_title, retrieved.get(c.id, [])[:top_k],
                                    max_candidates)
        keys = [(t, i) for t, i, _ in cands]
        q = [1.0 if k in c.evidence else 0.0 for k in keys]
        examples.append(Example(
            claim_id=c.id,
            claim=vocab.ids(claim_tokens),
            candidates=[vocab.ids(toks) for _, _, toks in cands],
            keys=keys,
            q=np.array(q),
            label=c.label_index,
            gold_evidence=set(c.evidence),
        ))
    return examples


def batch_iterate(items: Sequence, batch: int, rng: np.random.Generator) -> Iterator[list]:
    """Shuffle ``items`` with ``rng`` and yield consecutive mini-batches (last may be short)."""
    if batch < 1:
        raise ArgumentError(f"batch must be >= 1, got {batch}")
    order = rng.permutation(len(items))
    for start in range(0, len(items), batch):
        yield [items[i] for i in order[start:start + batch]]


# --------------------------------------------------------------------------
# checkpoint
# --------------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocab
    params: ModelParams
    optimizers: list = field(default_factory=list)
    epoch: int = 0
    history: list = field(default_factory=list)

    def save(self, path) -> None:
        """Write the versioned binary snapshot (see docs/checkpoint-format.md)."""
        arrays = [(name, t.data) for name, t in self.params.named_parameters()]
        for k, opt in enumerate(self.optimizers):
            index = {id(t): name for name, t in self.params.named_parameters()}
            for p, acc in zip(opt.params, opt.accum):
                arrays.append((f"adagrad{k}/{index[id(p)]}", acc))
        header = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "vocab": self.vocab.itos,
            "epoch": self.epoch,
            "history": [asdict(h) for h in self.history],
            "optimizers": [{"lr": o.lr, "eps": o.eps} for o in self.optimizers],
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        }
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<Q", len(head)))
        buf.write(head)
        for _, a in arrays:
            buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        raw = Path(path).read_bytes()
        if not raw.startswith(CHECKPOINT_MAGIC):
            raise VersionError(f"{path}: not a checkpoint file")
        pos = len(CHECKPOINT_MAGIC)
        try:
            (n,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            header = json.loads(raw[pos:pos + n].decode("utf-8"))
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError):
            raise VersionError(f"{path}: corrupt checkpoint header") from None
        pos += n
        if header.get("version") != CHECKPOINT_VERSION:
            raise VersionError(f"{path}: checkpoint version {header.get('version')!r} "
                               f"is not supported (expected {CHECKPOINT_VERSION})")
        try:
            config = TrainConfig(**header["config"])
            config.validate()
        except (TypeError, ValueError) as exc:
            raise VersionError(f"{path}: checkpoint config does not match this build: {exc}")
        vocab = Vocab(header["vocab"][1:])
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            if pos + 8 * count > len(raw):
                raise VersionError(f"{path}: checkpoint is truncated")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count,
                                                 offset=pos).reshape(shape).copy()
            pos += 8 * count
        mcfg = config.model_config(len(vocab))
        params = ModelParams(mcfg, np.random.default_rng(0))
        named = params.named_parameters()
        if {n for n, _ in named} != {n for n in arrays if "/" not in n}:
            raise VersionError(f"{path}: parameter set does not match config {config.mode}")
        for name, t in named:
            if arrays[name].shape != t.shape:
                raise VersionError(f"{path}: {name} has shape {arrays[name].shape}, "
                                   f"config expects {t.shape}")
            t.data = arrays[name]
        optimizers = []
        for k, meta in enumerate(header["optimizers"]):
            prefix = f"adagrad{k}/"
            names = [n[len(prefix):] for n in arrays if n.startswith(prefix)]
            tensors = [params.slot(n) for n in names]
            opt = AdaGrad(tensors, lr=meta["lr"], eps=meta["eps"])
            opt.accum = [arrays[prefix + n] for n in names]
            optimizers.append(opt)
        history = [EpochLog(**h) for h in header["history"]]
        return cls(config, vocab, params, optimizers, header["epoch"], history)


# --------------------------------------------------------------------------
# prediction and evaluation
# --------------------------------------------------------------------------


@dataclass
class Prediction:
    claim_id: int
    alpha: np.ndarray
    p: np.ndarray
    evidence: list
    o: np.ndarray
    label: int

    @property
    def label_name(self) -> str:
        return LABELS[self.label]

    def to_json(self, keys: Sequence) -> dict:
        return {
            "claim_id": self.claim_id,
            "predicted_label": self.label_name,
            "alpha": [[list(k), float(a)] for k, a in zip(keys, self.alpha)],
            "evidence": [list(k) for k in self.evidence],
        }


def predict(params: ModelParams, ex: Example) -> Prediction:
    with ad.no_grad():
        res = forward(params, ex)
    alpha = res.alpha.data.copy() if res.alpha is not None else np.zeros(0)
    return Prediction(
        claim_id=ex.claim_id,
        alpha=alpha,
        p=res.p.copy(),
        evidence=[ex.keys[i] for i in res.evidence],
        o=res.o.data.copy(),
        label=res.label,
    )


def judgments(examples: Sequence[Example], predictions: Sequence[Prediction]) -> list:
    return [
        ClaimJudgment(LABELS[ex.label], pred.label_name, set(ex.gold_evidence),
                      set(pred.evidence))
        for ex, pred in zip(examples, predictions)
    ]


def evaluate_examples(params: ModelParams, examples: Sequence[Example]) -> EvalReport:
    """Predict every example and score it against its gold label and evidence."""
    return evaluate(judgments(examples, [predict(params, ex) for ex in examples]))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def init_params(config: TrainConfig, vocab: Vocab, rng: np.random.Generator,
                embeddings_path=None) -> ModelParams:
    table = None
    if embeddings_path is not None:
        table = load_embeddings(embeddings_path, vocab, config.hidden, rng)
    return ModelParams(config.model_config(len(vocab)), rng, embeddings=table)


def _run_epoch(params, examples, batch, rng, opt, loss_of: Callable[[ForwardResult], ad.Tensor],
               **fwd) -> tuple[float, float, float, int]:
    sums = np.zeros(3)
    fallbacks = 0
    for mb in batch_iterate(examples, batch, rng):
        opt.zero_grad()
        params.zero_grad()
        scale = 1.0 / len(mb)
        for ex in mb:
            res = forward(params, ex, **fwd)
            fallbacks += res.fallback
            loss = loss_of(res)
            if loss.requires_grad:
                ad.mul(loss, scale).backward()
            sums += (res.l_ev.item(), res.l_cv.item(), loss.item())
        opt.step()
    n = len(examples)
    return float(sums[0] / n), float(sums[1] / n), float(sums[2] / n), fallbacks


def train(config: TrainConfig, examples: Sequence[Example], vocab: Vocab, *,
          dev: Optional[Sequence[Example]] = None, embeddings_path=None,
          log: Optional[Callable[[str], None]] = None,
          params: Optional[ModelParams] = None,
          on_phase_end: Optional[Callable[[str, ModelParams], None]] = None) -> Checkpoint:
    """Train a model and return the final checkpoint (its ``history`` holds the epoch log).

    Dev metrics are computed on ``dev`` when given, otherwise on the training set.
    ``on_phase_end(phase, params)`` is called after each phase ("joint", or
    "evidence" then "claim" in pipeline mode).
    """
    config.validate()
    if not examples:
        raise ArgumentError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(config, vocab, rng, embeddings_path)
    dev = examples if dev is None else dev
    emit = log or (lambda line: None)
    ckpt = Checkpoint(config, vocab, params)

    def run_phase(phase, tensors, loss_of, **fwd):
        opt = AdaGrad(tensors, lr=config.lr, eps=config.eps)
        ckpt.optimizers.append(opt)
        best, stale = -1.0, 0
        for epoch in range(1, config.epochs + 1):
            l_ev, l_cv, l, fallbacks = _run_epoch(params, examples, config.batch, rng, opt,
                                                  loss_of, **fwd)
            if fallbacks:
                logger.info("epoch %d: %d forward passes used the empty-evidence fallback",
                            epoch, fallbacks)
            report = evaluate_examples(params, dev)
            entry = EpochLog(epoch, l_ev, l_cv, l, report.no_score_ev, report.score_ev,
                             report.f1, phase)
            ckpt.history.append(entry)
            ckpt.epoch = epoch
            emit(entry.csv())
            if config.patience is not None:
                if report.no_score_ev > best:
                    best, stale = report.no_score_ev, 0
                else:
                    stale += 1
                    if stale >= config.patience:
                        logger.info("early stop after epoch %d", epoch)
                        break
        if on_phase_end is not None:
            on_phase_end(phase, params)

    emit(LOG_HEADER)
    if config.mode == "pipeline":
        emit("# phase 1: evidence wing (l_ev)")
        run_phase("evidence", params.evidence_wing(), lambda r: r.l_ev, claim_wing=False)
        emit("# phase 2: claim wing (l_cv), evidence wing frozen")
        run_phase("claim", params.claim_wing(), lambda r: r.l_cv, detach_evidence=True,
                  gold_evidence=config.pipeline_gold_evidence)
    else:
        run_phase("joint", params.parameters(), lambda r: r.loss)
    return ckpt
