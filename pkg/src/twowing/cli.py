"""Command-line entry point: ``twowing <command> ...``.

Commands
  build-index   wiki file -> serialized title index
  retrieve      index + claims -> ranked titles per claim, coverage rate
  train         claims + wiki + ranked titles -> checkpoint, epoch log
  eval          checkpoint + claims + wiki + ranked titles -> predictions, report
  score         gold claims + predictions -> metrics
  acc-ceiling   coverage rate + label counts -> accuracy upper bound
  make-synthetic  write the seeded toy corpus used by the tests

Every command that writes files also writes a JSON run manifest next to them.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from twowing import __version__
from twowing.corpus import build_vocab, claim_to_json, load_dataset, load_wiki, write_jsonl
from twowing.errors import TwoWingError
from twowing.model import CLAIM_REPS, EVIDENCE_REPS, MODES
from twowing.retrieval import (InvertedIndex, coverage_rate, load_retrieved, retrieval_records,
                               retrieve_topk)
from twowing.scorer import acc_ceiling, evaluate, score_files
from twowing.trainer import (Checkpoint, TrainConfig, build_examples, judgments, predict, train,
                             vocab_streams)

logger = logging.getLogger("twowing")


def write_manifest(path, command: str, args: argparse.Namespace, started: float,
                   extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "arguments": {k: (str(v) if isinstance(v, Path) else v)
                      for k, v in sorted(vars(args).items()) if k != "func"},
        "versions": {
            "twowing": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "wall_time_s": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_for(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def cmd_build_index(args) -> int:
    started = time.time()
    pages = load_wiki(args.wiki)
    index = InvertedIndex.build(pages)
    index.save(args.out)
    stats = {"pages": len(index), "vocabulary": index.vocabulary_size}
    print(f"indexed {stats['pages']} pages, {stats['vocabulary']} title words -> {args.out}")
    write_manifest(_manifest_for(args.out), "build-index", args, started, {"stats": stats})
    return 0


def cmd_retrieve(args) -> int:
    started = time.time()
    index = InvertedIndex.load(args.index)
    claims = load_dataset(args.claims)
    records, retrieved = [], {}
    for c in claims:
        ranked = retrieve_topk(c.claim, index, args.k)
        retrieved[c.id] = [r.title for r in ranked]
        records.extend(retrieval_records(c.id, ranked))
    write_jsonl(args.out, records)
    rate = coverage_rate(claims, retrieved)
    print(f"retrieved top-{args.k} for {len(claims)} claims -> {args.out}")
    print(f"coverage rate (SUPPORTED/REFUTED claims with all gold pages): {100 * rate:.2f}%")
    write_manifest(_manifest_for(args.out), "retrieve", args, started, {"rate": rate})
    return 0


def _config_from(args) -> TrainConfig:
    return TrainConfig(
        mode=args.mode, evidence_rep=args.rep_ev, claim_rep=args.rep_cv, lr=args.lr,
        hidden=args.hidden, batch=args.batch, epochs=args.epochs, seed=args.seed,
        top_k=args.top_k, max_candidates=args.max_candidates,
        untie_attention=args.untie_attention,
        pipeline_gold_evidence=args.pipeline_gold_evidence, patience=args.patience,
    )


def cmd_train(args) -> int:
    started = time.time()
    config = _config_from(args)
    config.validate()
    claims = load_dataset(args.claims)
    pages = load_wiki(args.wiki)
    retrieved = load_retrieved(args.retrieved)
    dev_claims = load_dataset(args.dev_claims) if args.dev_claims else []
    vocab = build_vocab(vocab_streams(list(claims) + list(dev_claims), pages))
    examples = build_examples(claims, pages, retrieved, vocab, config.top_k,
                              config.max_candidates)
    dev = None
    if dev_claims:
        dev = build_examples(dev_claims, pages, retrieved, vocab, config.top_k,
                             config.max_candidates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []

    def log(line):
        lines.append(line)
        if not args.quiet:
            print(line, flush=True)

    ckpt = train(config, examples, vocab, dev=dev, embeddings_path=args.embeddings, log=log)
    ckpt.save(out / "checkpoint.bin")
    (out / "train_log.csv").write_text("\n".join(lines) + "\n")
    write_manifest(out / "manifest.json", "train", args, started,
                   {"config": asdict(config), "vocab_size": len(vocab),
                    "dev_metrics_on": "dev" if dev else "train"})
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    ckpt = Checkpoint.load(args.checkpoint)
    claims = load_dataset(args.claims)
    if not claims:
        raise TwoWingError(f"{args.claims}: no claims to evaluate")
    pages = load_wiki(args.wiki)
    retrieved = load_retrieved(args.retrieved)
    cfg = ckpt.config
    examples = build_examples(claims, pages, retrieved, ckpt.vocab, cfg.top_k,
                              cfg.max_candidates)
    preds = [predict(ckpt.params, ex) for ex in examples]
    report = evaluate(judgments(examples, preds))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "predictions.jsonl", (p.to_json(ex.keys) for p, ex in zip(preds, examples)))
    (out / "report.txt").write_text(report.to_text())
    (out / "report.csv").write_text(report.to_csv())
    print(report.to_text(), end="")
    write_manifest(out / "manifest.json", "eval", args, started, {"report": report.as_dict()})
    return 0


def cmd_score(args) -> int:
    report = score_files(args.gold, args.pred)
    print(report.to_text(), end="")
    return 0


def cmd_acc_ceiling(args) -> int:
    ns, nr, nn = args.counts
    value = acc_ceiling(args.rate / 100.0, ns, nr, nn)
    print(f"{100 * value:.4f}")
    return 0


def cmd_make_synthetic(args) -> int:
    from twowing.synthetic import make_corpus

    started = time.time()
    pages, claims = make_corpus(args.claims, seed=args.seed)
    out = Path(args.out)
    write_jsonl(out / "wiki.jsonl", ({"title": p.title, "sentences": p.sentences} for p in pages))
    write_jsonl(out / "claims.jsonl", (claim_to_json(c) for c in claims))
    print(f"wrote {len(pages)} pages and {len(claims)} claims to {out}")
    write_manifest(out / "manifest.json", "make-synthetic", args, started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twowing", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="index wiki titles")
    p.add_argument("--wiki", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("retrieve", help="rank wiki pages for each claim")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--claims", type=Path, required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--claims", type=Path, required=True)
    p.add_argument("--wiki", type=Path, required=True)
    p.add_argument("--retrieved", type=Path, required=True)
    p.add_argument("--dev-claims", type=Path)
    p.add_argument("--mode", choices=MODES, default="share-cnn")
    p.add_argument("--rep-ev", choices=EVIDENCE_REPS, default="fine")
    p.add_argument("--rep-cv", choices=CLAIM_REPS, default="two")
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--hidden", type=int, default=300)
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--max-candidates", type=int, default=64)
    p.add_argument("--patience", type=int)
    p.add_argument("--untie-attention", action="store_true")
    p.add_argument("--pipeline-gold-evidence", action="store_true",
                   help="pipeline mode: train the claim wing on gold instead of predicted evidence")
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="predict and score with a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--claims", type=Path, required=True)
    p.add_argument("--wiki", type=Path, required=True)
    p.add_argument("--retrieved", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score a predictions file against gold claims")
    p.add_argument("--gold", type=Path, required=True)
    p.add_argument("--pred", type=Path, required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("acc-ceiling", help="accuracy upper bound from a retrieval rate")
    p.add_argument("--rate", type=float, required=True, help="coverage rate in percent")
    p.add_argument("--counts", type=int, nargs=3, required=True,
                   metavar=("N_SUPPORTED", "N_REFUTED", "N_NEI"))
    p.set_defaults(func=cmd_acc_ceiling)

    p = sub.add_parser("make-synthetic", help="write the seeded toy corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--claims", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
    except (TwoWingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
