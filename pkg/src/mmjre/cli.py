"""Command-line entry point: ``mmjre {ingest,run,train-head,sweep,export,synth}``.

Configuration is layered: built-in defaults, then a JSON file given by
``--config`` or ``$MMJRE_CONFIG``, then individual flags. Reports go to
standard output as JSON; a short human summary goes to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from .config import CONFIG_ENV, PipelineConfig, load_config
from .corpus import load_corpus
from .errors import ConfigError, InputError, MMJREError
from .graphs import load_vocabulary
from . import pipeline as pl
from .tagging import TagVocabulary, encode_quintuples, write_quintuples

log = logging.getLogger("mmjre")


def _flag(name: str) -> str:
    return "--lambda" if name == "lam" else "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    g = p.add_argument_group("pipeline configuration")
    g.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    for f in fields(PipelineConfig):
        if f.name in skip:
            continue
        default = getattr(PipelineConfig, f.name)
        kind = type(default) if not isinstance(default, bool) else str
        g.add_argument(_flag(f.name), dest=f.name, type=kind, default=None,
                       help=f"(default {default})")


def _config(args) -> PipelineConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)}
    return load_config(args.config, **overrides)


def _vocab(args):
    return load_vocabulary(args.vocab) if getattr(args, "vocab", None) else None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def cmd_ingest(args) -> int:
    cfg = _config(args)
    records = load_corpus(args.corpus, cfg.max_tokens, cfg.max_objects)
    vocab = pl.infer_vocabulary(records, _vocab(args))
    tags = TagVocabulary.from_labels(vocab)
    for r in records:
        try:
            encode_quintuples(r.gold, r.sentence.n, tags)
        except MMJREError as exc:
            raise type(exc)(f"record {r.id!r}: {exc}") from None
    out = {
        "records": len(records),
        "tokens": sum(r.sentence.n for r in records),
        "objects": sum(r.scene.k for r in records),
        "quintuples": sum(len(r.gold) for r in records),
        "entity_types": list(vocab.entity_types),
        "relation_types": list(vocab.relation_types),
    }
    _emit(out)
    print(f"{args.corpus}: {out['records']} valid records", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    records = load_corpus(args.corpus, cfg.max_tokens, cfg.max_objects)
    model = pl.build_model(cfg, records, _vocab(args))
    if args.head:
        head = pl.load_head(args.head)
        pl.check_head(model, head)
        model.head = head
    report = pl.run_records(model, records, pl.pmi_for(records, args.pmi_cache))
    if args.predictions:
        write_quintuples(args.predictions, ((r.id, r.predicted) for r in report.records))
    sys.stdout.write(report.to_json(include_timings=args.timings))
    print(report.summary(), file=sys.stderr)
    return 0


def cmd_train_head(args) -> int:
    cfg = _config(args)
    train = load_corpus(args.train, cfg.max_tokens, cfg.max_objects)
    dev = load_corpus(args.dev, cfg.max_tokens, cfg.max_objects) if args.dev else []
    res = pl.train_head(cfg, train, dev, _vocab(args))
    if args.out:
        pl.save_head(args.out, res.head)
    _emit({"config": cfg.to_dict(), "best_epoch": res.best_epoch,
           "stopped_epoch": res.stopped_epoch, "history": res.history})
    last = res.history[-1]
    print(f"trained {res.stopped_epoch} epochs, best dev epoch {res.best_epoch}, "
          f"final train loss {last['train_loss']:.4f}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    records = load_corpus(args.corpus, cfg.max_tokens, cfg.max_objects)
    rows = pl.sweep(cfg, records, _floats(args.alphas), _floats(args.lambdas), _vocab(args))
    _emit({"config": cfg.to_dict(), "ids": [r.id for r in records], "rows": rows})
    for row in rows:
        print(f"alpha={row['alpha']:g} lambda={row['lambda']:g} "
              f"mean loss_graph={sum(row['loss_graph']) / max(len(records), 1):.6f} "
              f"f1={row['f1']:.4f}", file=sys.stderr)
    return 0


def cmd_export(args) -> int:
    cfg = _config(args)
    records = load_corpus(args.corpus, cfg.max_tokens, cfg.max_objects)
    chosen = [r for r in records if r.id == args.record]
    if not chosen:
        raise InputError(f"unknown record id {args.record!r}")
    model = pl.build_model(cfg, records, _vocab(args))
    if args.head:
        head = pl.load_head(args.head)
        pl.check_head(model, head)
        model.head = head
    report = pl.run_records(model, chosen, pl.pmi_for(records, args.pmi_cache))
    paths = pl.export_matrices(report, args.record, args.out)
    _emit({"record": args.record, "files": [str(p) for p in paths]})
    print(f"wrote {len(paths)} files to {args.out}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import write_synthetic
    corpus, vocab = write_synthetic(args.out, args.count, args.seed, args.prefix,
                                    args.length, args.objects)
    _emit({"corpus": str(corpus), "vocab": str(vocab), "records": args.count})
    print(f"wrote {args.count} records to {corpus}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmjre", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus")
    p.add_argument("corpus")
    p.add_argument("--vocab", help="label vocabulary file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="full pipeline and metrics")
    p.add_argument("corpus")
    p.add_argument("--vocab", help="label vocabulary file")
    p.add_argument("--head", help="head checkpoint from train-head")
    p.add_argument("--pmi-cache", help="PMI statistics file (read if present, else written)")
    p.add_argument("--predictions", help="write predicted quintuples here (JSONL)")
    p.add_argument("--timings", action="store_true", help="include stage timings in the report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train-head", help="fit the prediction head on frozen features")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--vocab", help="label vocabulary file")
    p.add_argument("--out", help="write the trained head checkpoint (npz)")
    p.add_argument("--seed", type=int, required=True)
    _add_config_flags(p, skip=("seed",))
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("sweep", help="grid over alpha and lambda")
    p.add_argument("corpus")
    p.add_argument("--alphas", default="0,0.4,1")
    p.add_argument("--lambdas", default="0,0.6,1")
    p.add_argument("--vocab", help="label vocabulary file")
    _add_config_flags(p, skip=("alpha", "lam"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", help="write one record's matrices as TSV")
    p.add_argument("corpus")
    p.add_argument("--record", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", help="label vocabulary file")
    p.add_argument("--head", help="head checkpoint from train-head")
    p.add_argument("--pmi-cache")
    _add_config_flags(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("synth", help="write a planted synthetic corpus")
    p.add_argument("out")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="syn")
    p.add_argument("--length", type=int, help="pad every sentence to this many tokens")
    p.add_argument("--objects", type=int, help="pad every scene to this many objects")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except MMJREError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
