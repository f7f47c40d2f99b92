"""Joint evidence-selection / claim-verification model.

The evidence wing scores every candidate sentence against the claim and
produces probabilities ``alpha`` plus a hard selection ``p = [alpha > 0.5]``.
The claim wing composes the selected sentences (weighted by ``alpha``) with
the claim and classifies the pair into REFUTED / SUPPORTED / NEI.

The selection ``p`` is a constant multiplier: no gradient passes through the
threshold, but gradients do flow through ``alpha`` into the evidence wing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from twowing import autodiff as ad
from twowing.autodiff import Tensor
from twowing.corpus import LABELS, NEI, random_embeddings
from twowing.encoders import ConvParams, f_int, glorot, vanilla_encode
from twowing.errors import DimensionError

logger = logging.getLogger(__name__)

MODES = ("share-cnn", "diff-cnn", "pipeline")
EVIDENCE_REPS = ("coarse", "fine")
CLAIM_REPS = ("coarse", "single", "two", "sentwise")
N_LABELS = len(LABELS)


@dataclass
class ModelConfig:
    vocab_size: int
    hidden: int = 300
    width: int = 3
    mode: str = "share-cnn"
    evidence_rep: str = "fine"
    claim_rep: str = "two"
    untie_attention: bool = False

    def validate(self) -> None:
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode {self.mode!r} not in {MODES}")
        if self.evidence_rep not in EVIDENCE_REPS:
            problems.append(f"evidence_rep {self.evidence_rep!r} not in {EVIDENCE_REPS}")
        if self.claim_rep not in CLAIM_REPS:
            problems.append(f"claim_rep {self.claim_rep!r} not in {CLAIM_REPS}")
        if self.width % 2 != 1:
            problems.append(f"filter width must be odd, got {self.width}")
        if self.hidden < 1 or self.vocab_size < 1:
            problems.append("hidden size and vocabulary size must be positive")
        if problems:
            raise ValueError("; ".join(problems))


# Parameter slots in checkpoint order. Slots that alias an earlier slot (shared
# parameters) are stored only once.
SLOTS = ("emb_ev", "emb_cv", "cnn_ev.W", "cnn_ev.b", "cnn_cv.W", "cnn_cv.b",
         "att_ev.W", "att_ev.b", "att_cv.W", "att_cv.b", "v", "cls.W", "cls.b")


class ModelParams:
    """All trainable tensors, with sharing decided by the training mode.

    * share-cnn: both wings use one embedding table and one vanilla CNN.
    * diff-cnn: one embedding table, a separate vanilla CNN per wing.
    * pipeline: the wings share nothing (independently trained modules).

    The attentive-convolution block is shared by every ``f_int`` call unless
    ``untie_attention`` is set or the mode is pipeline.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 embeddings: Optional[np.ndarray] = None):
        config.validate()
        self.config = config
        d, V, w = config.hidden, config.vocab_size, config.width
        if embeddings is None:
            embeddings = random_embeddings(V, d, rng)
        if embeddings.shape != (V, d):
            raise DimensionError(f"embedding table {embeddings.shape} != ({V}, {d})")

        self.emb_ev = Tensor(embeddings, requires_grad=True, name="emb_ev")
        self.cnn_ev = ConvParams.init(d, w, rng, "cnn_ev")
        self.att_ev = ConvParams.init(d, 4, rng, "att_ev")
        rep_dim = 3 * d + 1 if config.evidence_rep == "fine" else 2 * d + 1
        self.v = Tensor(rng.uniform(-0.1, 0.1, size=rep_dim), requires_grad=True, name="v")

        if config.mode == "pipeline":
            self.emb_cv = Tensor(embeddings, requires_grad=True, name="emb_cv")
        else:
            self.emb_cv = self.emb_ev
        if config.mode == "share-cnn":
            self.cnn_cv = self.cnn_ev
        else:
            self.cnn_cv = ConvParams.init(d, w, rng, "cnn_cv")
        if config.mode == "pipeline" or config.untie_attention:
            self.att_cv = ConvParams.init(d, 4, rng, "att_cv")
        else:
            self.att_cv = self.att_ev
        self.cls_W = Tensor(glorot(rng, N_LABELS, 2 * d), requires_grad=True, name="cls.W")
        self.cls_b = Tensor(np.zeros(N_LABELS), requires_grad=True, name="cls.b")

    def slot(self, name: str) -> Tensor:
        return {
            "emb_ev": self.emb_ev, "emb_cv": self.emb_cv,
            "cnn_ev.W": self.cnn_ev.W, "cnn_ev.b": self.cnn_ev.b,
            "cnn_cv.W": self.cnn_cv.W, "cnn_cv.b": self.cnn_cv.b,
            "att_ev.W": self.att_ev.W, "att_ev.b": self.att_ev.b,
            "att_cv.W": self.att_cv.W, "att_cv.b": self.att_cv.b,
            "v": self.v, "cls.W": self.cls_W, "cls.b": self.cls_b,
        }[name]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Distinct parameters in a fixed order, each under its first slot name."""
        out, seen = [], set()
        for name in SLOTS:
            t = self.slot(name)
            if id(t) not in seen:
                seen.add(id(t))
                out.append((name, t))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def evidence_wing(self) -> list[Tensor]:
        tensors = [self.emb_ev, *self.cnn_ev.tensors(), self.v]
        if self.config.evidence_rep == "fine":
            tensors += self.att_ev.tensors()
        return _unique(tensors)

    def claim_wing(self) -> list[Tensor]:
        tensors = [self.emb_cv, self.cls_W, self.cls_b]
        if self.config.claim_rep == "coarse":
            tensors += self.cnn_cv.tensors()
        else:
            tensors += self.att_cv.tensors()
        return _unique(tensors)

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None


def _unique(tensors):
    out, seen = [], set()
    for t in tensors:
        if id(t) not in seen:
            seen.add(id(t))
            out.append(t)
    return out


@dataclass
class Example:
    """One claim with its candidate sentences, already mapped to vocabulary ids.

    ``q`` marks gold evidence candidates and ``label`` is an index into LABELS.
    ``gold_evidence`` is the claim's full gold set, which may include sentences
    that retrieval missed; it defaults to the candidates marked in ``q``.
    """

    claim_id: int
    claim: list
    candidates: list
    keys: list = field(default_factory=list)
    q: Optional[np.ndarray] = None
    label: int = NEI
    gold_evidence: Optional[set] = None

    def __post_init__(self):
        if self.q is None:
            self.q = np.zeros(len(self.candidates))
        self.q = np.asarray(self.q, dtype=np.float64)
        if len(self.q) != len(self.candidates):
            raise DimensionError(f"|q|={len(self.q)} but m={len(self.candidates)}")
        if not self.keys:
            self.keys = [("", i) for i in range(len(self.candidates))]
        if self.gold_evidence is None:
            self.gold_evidence = {self.keys[i] for i in np.flatnonzero(self.q)}


# --------------------------------------------------------------------------
# evidence wing
# --------------------------------------------------------------------------


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"{what}: representation shapes {a.shape} and {b.shape} differ")


def evidence_rep_coarse(s: Tensor, x: Tensor) -> Tensor:
    """``[s, x, s.x]`` (length ``2d+1``)."""
    _check_same(s, x, "coarse evidence rep")
    return ad.concat([s, x, ad.dot(s, x)])


def evidence_rep_fine(s: Tensor, x: Tensor, i: Tensor) -> Tensor:
    """``[s, x, s.x, i]`` where ``i = f_int(s, x)`` (length ``3d+1``)."""
    _check_same(s, x, "fine evidence rep")
    _check_same(s, i, "fine evidence rep")
    return ad.concat([s, x, ad.dot(s, x), i])


def evidence_prob(r: Tensor, v: Tensor) -> Tensor:
    if r.shape != v.shape:
        raise DimensionError(f"evidence weight v{v.shape} does not match rep r{r.shape}")
    return ad.sigmoid(ad.dot(v, r))


def evidence_loss(alpha: Optional[Tensor], q: np.ndarray) -> Tensor:
    """Binary cross-entropy summed (not averaged) over the candidates."""
    if alpha is None or alpha.shape[0] == 0:
        return Tensor(0.0)
    q = np.asarray(q, dtype=np.float64)
    ll = ad.mul(q, ad.log(alpha)) + ad.mul(1.0 - q, ad.log(ad.sub(1.0, alpha)))
    return ad.mul(ad.tensor_sum(ll), -1.0)


def binarize(alpha) -> np.ndarray:
    """``p_i = 1`` iff ``alpha_i > 0.5`` (strictly)."""
    a = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha, dtype=np.float64)
    return (a > 0.5).astype(np.float64)


# --------------------------------------------------------------------------
# claim wing
# --------------------------------------------------------------------------


def _weights(alpha: Tensor, p: np.ndarray) -> Tensor:
    return ad.mul(alpha, np.asarray(p, dtype=np.float64))


def claim_rep_coarse(alpha: Optional[Tensor], p, s_reps: Sequence[Tensor], x: Tensor):
    """``e = sum_i alpha_i p_i s_i``; returns ``(e, x)``."""
    d = x.shape[0]
    if not s_reps:
        return Tensor(np.zeros(d)), x
    S = ad.stack(s_reps)  # m x d
    e = ad.matvec(ad.transpose(S), _weights(alpha, p))
    return e, x


def _weighted_max(alpha: Tensor, p: np.ndarray, terms: dict, d: int) -> Tensor:
    # candidates with p_i = 0 contribute exact zero vectors to the pool
    pooled = [ad.mul(ad.index(alpha, i), t) for i, t in terms.items()]
    if len(terms) < len(p) or not pooled:
        pooled.append(Tensor(np.zeros(d)))
    return ad.max_over(pooled)


def claim_rep_single_fine(alpha: Optional[Tensor], p, S_maps: Sequence[Tensor], X: Tensor,
                          att: ConvParams):
    """Weighted componentwise max-pool of ``f_int`` in both directions.

    ``e = max_i alpha_i p_i f_int(s_i, x)`` and ``x = max_i alpha_i p_i f_int(x, s_i)``.
    """
    d = X.shape[0]
    if not S_maps:
        return Tensor(np.zeros(d)), Tensor(np.zeros(d))
    p = np.asarray(p)
    chosen = [i for i in range(len(S_maps)) if p[i] == 1]
    e_terms = {i: f_int(S_maps[i], X, att) for i in chosen}
    x_terms = {i: f_int(X, S_maps[i], att) for i in chosen}
    return _weighted_max(alpha, p, e_terms, d), _weighted_max(alpha, p, x_terms, d)


def clue_context(S: Tensor, S_hat: Tensor) -> Tensor:
    """Per-word attention contexts of sentence map ``S`` over the pooled evidence map."""
    return ad.attention(S, S_hat)


def accumulate_clues(S_maps: Sequence[Tensor], p) -> tuple[list, bool]:
    """Add to every word of each selected sentence its context over all selected sentences.

    Returns the updated maps and whether the all-candidates fallback was used
    (no candidate selected).
    """
    p = np.asarray(p)
    selected = [i for i in range(len(S_maps)) if p[i] == 1]
    fallback = not selected
    pool = list(range(len(S_maps))) if fallback else selected
    S_hat = ad.hstack([S_maps[i] for i in pool])
    updated = list(S_maps)
    for i in pool:
        updated[i] = ad.add(S_maps[i], clue_context(S_maps[i], S_hat))
    return updated, fallback


def claim_rep_two_channel(alpha: Optional[Tensor], p, S_maps: Sequence[Tensor], X: Tensor,
                          att: ConvParams):
    """Single-channel fine rep computed on clue-augmented evidence maps."""
    d = X.shape[0]
    if not S_maps:
        return Tensor(np.zeros(d)), Tensor(np.zeros(d)), False
    updated, fallback = accumulate_clues(S_maps, p)
    e, x = claim_rep_single_fine(alpha, p, updated, X, att)
    return e, x, fallback


def claim_distribution(rep: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``softmax(W rep + b)`` over the label set."""
    if W.shape[1] != rep.shape[0] or b.shape != (W.shape[0],):
        raise DimensionError(f"classifier W{W.shape}, b{b.shape} vs input {rep.shape}")
    return ad.softmax(ad.add(ad.matvec(W, rep), b))


def claim_loss(o: Tensor, label: int) -> Tensor:
    """Negative log-likelihood of the gold label."""
    return ad.mul(ad.log(ad.index(o, label)), -1.0)


def joint_loss(l_ev: Tensor, l_cv: Tensor) -> Tensor:
    return ad.add(l_ev, l_cv)


def sent_wise_ensemble(distributions: Sequence) -> int:
    """Label of the elementwise sum of per-sentence distributions; NEI if none.

    Ties go to the lowest label index.
    """
    if len(distributions) == 0:
        return NEI
    total = np.sum([np.asarray(getattr(o, "data", o)) for o in distributions], axis=0)
    return int(np.argmax(total))


# --------------------------------------------------------------------------
# full forward pass
# --------------------------------------------------------------------------


@dataclass
class ForwardResult:
    alpha: Optional[Tensor]
    p: np.ndarray
    o: Optional[Tensor]
    label: int
    l_ev: Tensor
    l_cv: Tensor
    loss: Tensor
    fallback: bool = False
    sentence_distributions: list = field(default_factory=list)

    @property
    def evidence(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.p)]


def _evidence_wing(params: ModelParams, ex: Example, width: int):
    cfg = params.config
    X = ad.embedding(params.emb_ev, ex.claim)
    S = [ad.embedding(params.emb_ev, c) for c in ex.candidates]
    x = vanilla_encode(X, params.cnn_ev, width)
    s = [vanilla_encode(Si, params.cnn_ev, width) for Si in S]
    if not S:
        return X, S, x, s, None
    if cfg.evidence_rep == "fine":
        reps = [evidence_rep_fine(si, x, f_int(Si, X, params.att_ev)) for si, Si in zip(s, S)]
    else:
        reps = [evidence_rep_coarse(si, x) for si in s]
    if params.v.shape[0] != reps[0].shape[0]:
        raise DimensionError(f"evidence weight v{params.v.shape} vs rep {reps[0].shape}")
    alpha = ad.sigmoid(ad.matvec(ad.stack(reps), params.v))
    return X, S, x, s, alpha


def forward(params: ModelParams, ex: Example, *, detach_evidence: bool = False,
            gold_evidence: bool = False, claim_wing: bool = True) -> ForwardResult:
    """Run both wings on one example and compute ``l_ev``, ``l_cv`` and their sum.

    Args:
        detach_evidence: compute the evidence wing without a graph (its
            parameters receive no gradient). Used for the second pipeline phase.
        gold_evidence: feed the gold selection (``p = q``, ``alpha = 1``) to the
            claim wing instead of the predicted one.
        claim_wing: skip the claim wing entirely (``l_cv = 0``, ``o = None``).
    """
    cfg = params.config
    width = cfg.width
    if detach_evidence:
        with ad.no_grad():
            X, S, x, s, alpha = _evidence_wing(params, ex, width)
    else:
        X, S, x, s, alpha = _evidence_wing(params, ex, width)
    l_ev = evidence_loss(alpha, ex.q)
    p = binarize(alpha) if alpha is not None else np.zeros(0)

    if not claim_wing:
        return ForwardResult(alpha, p, None, NEI, l_ev, Tensor(0.0), l_ev)

    if gold_evidence:
        p_cv = ex.q.copy()
        alpha_cv = Tensor(np.ones(len(ex.candidates)))
    else:
        p_cv, alpha_cv = p, alpha

    if params.emb_cv is params.emb_ev and not detach_evidence:
        Xc, Sc = X, S
    else:
        Xc = ad.embedding(params.emb_cv, ex.claim)
        Sc = [ad.embedding(params.emb_cv, c) for c in ex.candidates]

    fallback = False
    if cfg.claim_rep == "coarse":
        if params.cnn_cv is params.cnn_ev and Xc is X:
            xc, sc = x, s
        else:
            xc = vanilla_encode(Xc, params.cnn_cv, width)
            sc = [vanilla_encode(Si, params.cnn_cv, width) for Si in Sc]
        e, xr = claim_rep_coarse(alpha_cv, p_cv, sc, xc)
    elif cfg.claim_rep == "single":
        e, xr = claim_rep_single_fine(alpha_cv, p_cv, Sc, Xc, params.att_cv)
    elif cfg.claim_rep == "two":
        e, xr, fallback = claim_rep_two_channel(alpha_cv, p_cv, Sc, Xc, params.att_cv)
    else:
        return _sentwise(params, ex, Sc, Xc, alpha, p, p_cv, l_ev)

    o = claim_distribution(ad.concat([e, xr]), params.cls_W, params.cls_b)
    l_cv = claim_loss(o, ex.label)
    label = int(np.argmax(o.data))
    return ForwardResult(alpha, p, o, label, l_ev, l_cv, joint_loss(l_ev, l_cv), fallback)


def _sentwise(params, ex, Sc, Xc, alpha, p, p_cv, l_ev) -> ForwardResult:
    # one entailment distribution per selected sentence; summed for the label
    selected = [i for i in range(len(Sc)) if p_cv[i] == 1]
    fallback = not selected and bool(Sc)
    pool = selected if selected else list(range(len(Sc)))
    dists = []
    for i in pool:
        rep = ad.concat([f_int(Sc[i], Xc, params.att_cv), f_int(Xc, Sc[i], params.att_cv)])
        dists.append(claim_distribution(rep, params.cls_W, params.cls_b))
    if dists:
        nll = [claim_loss(o, ex.label) for o in dists]
        l_cv = ad.mul(ad.tensor_sum(ad.concat(nll)), 1.0 / len(nll))
    else:
        empty = ad.concat([Tensor(np.zeros(params.config.hidden))] * 2)
        l_cv = claim_loss(claim_distribution(empty, params.cls_W, params.cls_b), ex.label)
    chosen = [dists[pool.index(i)] for i in selected]
    label = sent_wise_ensemble(chosen)
    if chosen:
        o = _mean_rows(chosen)
    else:
        o = Tensor(np.eye(N_LABELS)[NEI])
    return ForwardResult(alpha, p, o, label, l_ev, l_cv, joint_loss(l_ev, l_cv), fallback,
                         [d.data for d in chosen])


def _mean_rows(vectors: Sequence[Tensor]) -> Tensor:
    total = vectors[0]
    for v in vectors[1:]:
        total = ad.add(total, v)
    return ad.mul(total, 1.0 / len(vectors))
