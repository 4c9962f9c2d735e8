"""Command-line entry point.

Every command prints one JSON document on stdout; logs go to stderr.
Exit codes: 0 ok, 2 usage or configuration error, 3 training diverged,
4 artifact mismatch (checkpoint, taxonomy or data disagree).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import picot
from picot import autodiff as ad
from picot.corpus import (
    SPLITS, InvalidSpec, ParseError, SynthSpec, generate_synthetic, load_corpus, load_descriptions,
    load_examples, write_corpus,
)
from picot.evaluation import DegenerateLabels, cluster_quality, export_embeddings
from picot.ontology import MalformedType, Taxonomy, load_taxonomy
from picot.prompt import ExprKind
from picot.trainer import ConfigError, Model, TrainConfig, TrainingDiverged, evaluate, fit, new_model

log = logging.getLogger("picot")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_MISMATCH = 0, 2, 3, 4
SWEEP_GRID = (0.01, 0.1, 0.5)
CHECKPOINT = "model.pict"
TRAIN_LOG = "train_log.jsonl"
MANIFEST = "manifest.json"


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {what} {path}: {exc}", EXIT_USAGE) from None
    if not isinstance(raw, dict):
        raise CliError(f"{what} must be a JSON object", EXIT_USAGE)
    return raw


def _env_seed():
    raw = os.environ.get("PICOT_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"PICOT_SEED must be an integer, got {raw!r}", EXIT_USAGE) from None


def resolve_config(config_path=None, overrides=None):
    """Config file values, then PICOT_SEED, then explicit flag overrides."""
    raw = _read_json(config_path, "config") if config_path else {}
    seed = _env_seed()
    if seed is not None:
        raw["seed"] = seed
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return TrainConfig.from_dict(raw)
    except ConfigError as exc:
        raise CliError(f"invalid config: {exc}", EXIT_USAGE) from None


def _load_data_dir(data_dir):
    try:
        return load_corpus(data_dir)
    except FileNotFoundError as exc:
        raise CliError(f"data directory incomplete: {exc}", EXIT_USAGE) from None
    except (ParseError, MalformedType) as exc:
        raise CliError(f"bad data: {exc}", EXIT_USAGE) from None


def corpus_hashes(data_dir):
    names = [f"{s}.jsonl" for s in SPLITS] + ["taxonomy.txt", "descriptions.jsonl"]
    return {n: _sha256(os.path.join(data_dir, n)) for n in names if os.path.exists(os.path.join(data_dir, n))}


def write_manifest(out_dir, cfg, data_dir):
    manifest = {
        "config": cfg.to_dict(),
        "corpus_hashes": corpus_hashes(data_dir),
        "data_dir": os.path.abspath(data_dir),
        "seed": cfg.seed,
        "version": picot.__version__,
        "backend": picot.BACKEND,
        "out_dir": os.path.abspath(out_dir),
    }
    path = os.path.join(out_dir, MANIFEST)
    if os.path.exists(path):
        raise CliError(f"{path} exists; run directories are not reused", EXIT_USAGE)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def _load_model(path):
    try:
        return Model.load(path)
    except (OSError, ad.CheckpointError, KeyError, ValueError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}", EXIT_MISMATCH) from None


def _split_inputs(model, split_path, taxonomy_path):
    taxonomy_path = taxonomy_path or os.path.join(os.path.dirname(os.path.abspath(split_path)), "taxonomy.txt")
    if os.path.exists(taxonomy_path):
        try:
            tax = load_taxonomy(taxonomy_path)
        except (ValueError, OSError) as exc:
            raise CliError(f"bad taxonomy: {exc}", EXIT_USAGE) from None
        if tuple(tax.ordered) != model.types:
            raise CliError("taxonomy does not match the checkpoint's type order", EXIT_MISMATCH)
    else:
        tax = Taxonomy(model.types)
    try:
        examples = load_examples(split_path, tax)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    except (ParseError, MalformedType) as exc:
        raise CliError(f"bad data: {exc}", EXIT_USAGE) from None
    unknown = sorted({t for ex in examples for t in ex.gold_types if t not in tax})
    if unknown:
        raise CliError(f"gold types unknown to the checkpoint: {[str(t) for t in unknown]}", EXIT_MISMATCH)
    return examples, tax


# -- commands ---------------------------------------------------------------------


def cmd_synth(args):
    raw = _read_json(args.spec, "spec") if args.spec else {}
    try:
        spec = SynthSpec.from_dict(raw)
        spec.validate()
    except (InvalidSpec, TypeError) as exc:
        raise CliError(f"invalid spec: {exc}", EXIT_USAGE) from None
    corpus = generate_synthetic(spec)
    write_corpus(args.out, corpus)
    _emit({
        "out": os.path.abspath(args.out),
        "hashes": corpus_hashes(args.out),
        "counts": {s: len(getattr(corpus, s)) for s in SPLITS},
    })
    return EXIT_OK


def _train_overrides(args):
    return {
        "lambda_f": args.lambda_f,
        "lambda_c": args.lambda_c,
        "use_type_rich": False if args.no_type_rich else None,
        "use_descriptions": False if args.no_descriptions or args.no_type_rich else None,
        "ent_position": args.ent_position,
        "seed": args.seed,
        "max_epochs": args.max_epochs,
    }


def run_training(cfg, corpus, data_dir, out_dir):
    """Train into ``out_dir``; returns the summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(out_dir, cfg, data_dir)
    model = new_model(cfg, corpus.train, corpus.descriptions, corpus.taxonomy)
    log_path = os.path.join(out_dir, TRAIN_LOG)
    with open(log_path, "w", encoding="utf-8") as fh:
        def on_epoch(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
        try:
            _, history = fit(corpus.train, corpus.dev, model, cfg, corpus.descriptions, on_epoch)
        except TrainingDiverged as exc:
            raise CliError(f"training diverged: {exc}", EXIT_DIVERGED) from None
    ckpt = os.path.join(out_dir, CHECKPOINT)
    model.save(ckpt)
    best = max(history, key=lambda r: r["dev_macro_f1"])
    return {
        "checkpoint": os.path.abspath(ckpt),
        "epochs": len(history),
        "best_epoch": best["epoch"],
        "best_dev_macro_f1": best["dev_macro_f1"],
        "test": evaluate(corpus.test, model).to_dict(),
    }


def cmd_train(args):
    cfg = resolve_config(args.config, _train_overrides(args))
    corpus = _load_data_dir(args.data)
    _emit(run_training(cfg, corpus, args.data, args.out))
    return EXIT_OK


def cmd_eval(args):
    model = _load_model(args.checkpoint)
    examples, _ = _split_inputs(model, args.data, args.taxonomy)
    if not examples:
        raise CliError("no examples to evaluate", EXIT_USAGE)
    if args.closure:
        model.config = TrainConfig.from_dict({**model.config.to_dict(), "closure": True})
    _emit(evaluate(examples, model, bbn_rules=args.bbn_rules).to_dict())
    return EXIT_OK


def _parse_kinds(text):
    kinds = []
    for token in text.split(","):
        token = token.strip()
        try:
            kinds.append(ExprKind(token))
        except ValueError:
            raise CliError(f"unknown kind {token!r}; expected ts, tr or desc", EXIT_USAGE) from None
    return kinds


def cmd_embed(args):
    kinds = _parse_kinds(args.kinds)
    model = _load_model(args.checkpoint)
    examples, tax = _split_inputs(model, args.data, args.taxonomy)
    descs = []
    if ExprKind.DESCRIPTION_RICH in kinds:
        desc_path = args.descriptions or os.path.join(os.path.dirname(os.path.abspath(args.data)), "descriptions.jsonl")
        if os.path.exists(desc_path):
            descs = load_descriptions(desc_path, tax)
    dump = export_embeddings(model, examples, kinds, args.out, descs)
    quality = {}
    for granularity in ("coarse", "fine"):
        for role in ("ENT", "CLS"):
            try:
                quality[f"{role.lower()}_{granularity}"] = cluster_quality(dump, granularity, role=role)
            except DegenerateLabels:
                quality[f"{role.lower()}_{granularity}"] = None
    for name, value in quality.items():
        print(f"silhouette {name}: {'n/a' if value is None else f'{value:.4f}'}", file=sys.stderr)
    _emit({"rows": len(dump), "out": os.path.abspath(args.out), "silhouette": quality})
    return EXIT_OK


def cmd_sweep(args):
    base = resolve_config(args.config, {"seed": args.seed, "max_epochs": args.max_epochs})
    corpus = _load_data_dir(args.data)
    grid = []
    for lf in SWEEP_GRID:
        for lc in SWEEP_GRID:
            cfg = TrainConfig.from_dict({**base.to_dict(), "lambda_f": lf, "lambda_c": lc})
            summary = run_training(cfg, corpus, args.data, os.path.join(args.out, f"lf{lf}_lc{lc}"))
            grid.append({
                "lambda_f": lf,
                "lambda_c": lc,
                "best_dev_macro_f1": summary["best_dev_macro_f1"],
                "test_macro_f1": summary["test"]["macro_f1"],
                "test_micro_f1": summary["test"]["micro_f1"],
            })
            log.info("sweep lambda_f=%s lambda_c=%s test macro-F1 %.4f", lf, lc, summary["test"]["macro_f1"])
    _emit({"grid": grid})
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="picot", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"picot {picot.__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--spec", help="JSON file of SynthSpec fields (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model and write a run directory")
    t.add_argument("--config", help="flat JSON of training config fields")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--lambda-f", type=float)
    t.add_argument("--lambda-c", type=float)
    t.add_argument("--no-type-rich", action="store_true", help="drop type-rich and description expressions")
    t.add_argument("--no-descriptions", action="store_true")
    t.add_argument("--ent-position", choices=["before-prompt", "after-cls"])
    t.add_argument("--seed", type=int)
    t.add_argument("--max-epochs", type=int)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "score a checkpoint on a split"),
                                 ("embed", cmd_embed, "export [CLS]/[ENT] embeddings to CSV")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--data", required=True, help="split JSONL file")
        e.add_argument("--taxonomy", help="defaults to taxonomy.txt beside the split")
        if name == "eval":
            e.add_argument("--bbn-rules", action="store_true")
            e.add_argument("--closure", action="store_true", help="add coarse ancestors of predicted fine types")
        else:
            e.add_argument("--kinds", default="ts")
            e.add_argument("--descriptions", help="defaults to descriptions.jsonl beside the split")
            e.add_argument("--out", required=True)
        e.set_defaults(func=func)

    w = sub.add_parser("sweep", help="train over the lambda_f x lambda_c grid")
    w.add_argument("--config")
    w.add_argument("--data", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--seed", type=int)
    w.add_argument("--max-epochs", type=int)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
