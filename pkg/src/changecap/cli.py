"""Command line entry point: ``changecap <subcommand>`` or ``python -m changecap``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig
from .errors import (ChangeCapError, ConfigError, ContractError, DataError, DimensionError,
                     NumericError)
from .features import SyntheticConfig, assign_splits, gen_synthetic, load_feature_file, \
    load_manifest, write_manifest
from .vocab import Vocabulary, build_vocab

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _cmd_gen_synthetic(args):
    cfg = SyntheticConfig(args.h, args.w, args.channels, captions_per_record=args.captions)
    records = gen_synthetic(args.seed, args.count, cfg)
    assign_splits(records, tuple(float(x) for x in args.splits.split(",")))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.json", records)
    print(out / "manifest.json")


def _cmd_build_vocab(args):
    records = load_manifest(args.manifest)
    caps = [c for r in records if r.split == "train" for c in r.captions]
    vocab = build_vocab(caps, args.min_freq)
    vocab.save(args.out)
    print(f"{len(vocab)} tokens -> {args.out}")


def _cmd_train(args):
    from .train import train

    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    records = load_manifest(args.manifest)
    tr = [r for r in records if r.split == "train"]
    va = [r for r in records if r.split == "val"]
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    result = train(tr, va, config, vocab)
    result.checkpoint.save(args.out_ckpt)
    print(json.dumps({"best_epoch": result.checkpoint.epoch,
                      "best_val_bleu4": result.checkpoint.best_bleu4,
                      "final_loss": result.losses[-1]}))


def _cmd_evaluate(args):
    from .train import Checkpoint, evaluate

    ckpt = Checkpoint.load(args.ckpt)
    records = [r for r in load_manifest(args.manifest) if r.split == args.split]
    report = evaluate(ckpt, records, per_image=args.per_image)
    text = report.to_json()
    if args.json_out:
        Path(args.json_out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _cmd_caption(args):
    from .train import Checkpoint, caption

    ckpt = Checkpoint.load(args.ckpt)
    pair = load_feature_file(args.features)
    if args.attn:
        sentence, dump = caption(ckpt, pair, with_attention=True)
        Path(args.attn).write_text(json.dumps(dump, indent=1) + "\n", encoding="utf-8")
    else:
        sentence = caption(ckpt, pair)
    print(sentence)


def _cmd_gradcheck(args):
    from .checks import run_gradchecks

    results = run_gradchecks(args.module)
    worst = 0.0
    for name, err in results.items():
        ok = err <= args.tol
        worst = max(worst, err)
        print(f"{'PASS' if ok else 'FAIL'} {name:24s} max rel err {err:.3e}")
    if worst > args.tol:
        raise NumericError(f"gradient check failed: {worst:.3e} > {args.tol:.1e}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="changecap", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a synthetic feature/caption dataset")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--count", type=int, default=64)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--h", type=int, default=4)
    g.add_argument("--w", type=int, default=4)
    g.add_argument("--channels", type=int, default=16)
    g.add_argument("--captions", type=int, default=5, help="captions per record (1-5)")
    g.add_argument("--splits", default="0.7,0.15,0.15", help="train,val,test fractions")
    g.set_defaults(func=_cmd_gen_synthetic)

    b = sub.add_parser("build-vocab", help="build a vocabulary from the train split")
    b.add_argument("--manifest", required=True)
    b.add_argument("--min-freq", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=_cmd_build_vocab)

    t = sub.add_parser("train", help="train and save the best checkpoint")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config", help="JSON file of TrainConfig fields")
    t.add_argument("--vocab", help="vocabulary file (default: built from train split)")
    t.add_argument("--out-ckpt", required=True)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("evaluate", help="score greedy captions on a split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--json-out")
    e.add_argument("--per-image", action="store_true")
    e.set_defaults(func=_cmd_evaluate)

    c = sub.add_parser("caption", help="caption one feature file")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--features", required=True)
    c.add_argument("--attn", help="write per-word cross-attention grids as JSON")
    c.set_defaults(func=_cmd_caption)

    k = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    k.add_argument("--module", default="all", choices=("ops", "encoder", "decoder", "model", "all"))
    k.add_argument("--tol", type=float, default=1e-4)
    k.set_defaults(func=_cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DimensionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ChangeCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
