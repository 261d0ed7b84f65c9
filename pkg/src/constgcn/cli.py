"""Command-line entry point.

Subcommands: generate, train, eval, export-scores, gradcheck. Every
artifact-producing command writes a manifest next to its outputs; stdout
carries exactly one machine-readable JSON line per command and all
diagnostics go to stderr.

Exit codes: 0 ok; 2 usage or configuration error; 3 training divergence;
4 checkpoint/schema incompatibility; 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import corpus as corpus_mod
from . import training as training_mod
from .corpus import CorpusConfig, generate_train_dev, insert_entity_markers
from .diagnostics import GRADCHECK_TOLERANCE, run_gradcheck
from .errors import (ConfigError, DivergenceError, DomainError, ParseError,
                     ShapeError)
from .graph import compute_transmit_scores
from .training import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_INCOMPATIBLE = 4
EXIT_GRADCHECK = 5


def _err(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _write_manifest(out_dir: Path, command: str, config: dict, seed,
                    inputs: dict, outputs: dict, started: float) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "duration_seconds": round(time.time() - started, 3),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    started = time.time()
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _err(f"cannot create output directory: {exc}")
        return EXIT_USAGE
    cfg = CorpusConfig(
        num_docs=args.docs,
        num_entities_range=(args.entities[0], args.entities[1]),
        num_relations=args.relations,
        vocab_size=args.vocab,
        seed=args.seed,
        num_entity_types=args.types,
        max_coref=args.max_coref,
        edge_prob=args.edge_prob,
        cross_sentence_target=args.cross_target,
        noise_signal_prob=args.noise_prob,
    )
    if args.docs == 0:
        _err("warning: --docs 0 produces an empty training corpus")
    train_docs, dev_docs, schema = generate_train_dev(cfg, args.dev_docs)
    corpus_mod.write_corpus(train_docs, out_dir / "train.json")
    corpus_mod.write_corpus(dev_docs, out_dir / "dev.json")
    corpus_mod.write_schema(schema, out_dir / "schema.json")
    cfg_dict = dataclasses.asdict(cfg)
    cfg_dict["dev_docs"] = args.dev_docs
    _write_manifest(out_dir, "generate", cfg_dict, args.seed, {},
                    {"train": str(out_dir / "train.json"),
                     "dev": str(out_dir / "dev.json"),
                     "schema": str(out_dir / "schema.json")}, started)
    _emit({"command": "generate", "train_docs": len(train_docs),
           "dev_docs": len(dev_docs), "relations": schema.num_relations,
           "cross_sentence_fraction": round(
               corpus_mod.cross_sentence_fraction(train_docs), 4),
           "label_density": round(corpus_mod.label_density(train_docs), 4),
           "out": str(out_dir)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, raw: str):
    field = _TRAIN_FIELDS[name]
    text = raw.strip()
    if field.type in ("int", int):
        return int(text)
    if field.type in ("float", float):
        return float(text)
    if field.type in ("bool", bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if field.type == "int | None":
        return None if text.lower() in ("none", "") else int(text)
    if field.type == "float | None":
        return None if text.lower() in ("none", "") else float(text)
    return text


def _parse_config_entries(entries: list[tuple[str, str]]) -> dict:
    out = {}
    for key, raw in entries:
        if key not in _TRAIN_FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return out


def _read_config_file(path: str) -> dict:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = text.split("=", 1)
            entries.append((key.strip(), raw))
    return _parse_config_entries(entries)


def _generation_defaults(train_path: Path) -> dict:
    """Corpus dimensions recorded by cmd_generate, if available."""
    manifest = train_path.parent / "manifest.json"
    if not manifest.exists():
        return {}
    try:
        with open(manifest, encoding="utf-8") as fh:
            payload = json.load(fh)
        cfg = payload.get("config", {})
        out = {}
        for src, dst in (("vocab_size", "vocab_size"),
                         ("num_entity_types", "num_entity_types"),
                         ("max_coref", "max_coref")):
            if src in cfg:
                out[dst] = cfg[src]
        return out
    except (OSError, json.JSONDecodeError):
        return {}


def cmd_train(args) -> int:
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    overrides = {}
    overrides.update(_generation_defaults(Path(args.train)))
    if args.config:
        overrides.update(_read_config_file(args.config))
    overrides.update(_parse_config_entries(
        [tuple(item.split("=", 1)) for item in args.set or []]))
    cfg = TrainConfig(**overrides)

    schema_path = args.schema or str(Path(args.train).parent / "schema.json")
    schema = corpus_mod.read_schema(schema_path)
    train_docs = corpus_mod.read_corpus(args.train, schema.num_relations)
    dev_docs = corpus_mod.read_corpus(args.dev, schema.num_relations)

    def log(message: str) -> None:
        if not args.quiet:
            _err(message)

    result = train(train_docs, dev_docs, schema, cfg, log=log)
    checkpoint = out_dir / "checkpoint.bin"
    history_csv = out_dir / "history.csv"
    save_checkpoint(result.model, checkpoint,
                    meta={"best_epoch": result.best_epoch,
                          "best_dev_f1": result.best_dev_f1,
                          "train_config": dataclasses.asdict(cfg)})
    training_mod.write_history_csv(result.history, history_csv)
    report = evaluate(result.model,
                      [insert_entity_markers(d) for d in dev_docs], schema,
                      training_mod.build_fact_identity_set(train_docs))
    _write_manifest(out_dir, "train", dataclasses.asdict(cfg), cfg.seed,
                    {"train": args.train, "dev": args.dev, "schema": schema_path},
                    {"checkpoint": str(checkpoint), "history": str(history_csv)},
                    started)
    _emit({"command": "train", "best_epoch": result.best_epoch,
           "epochs_run": len(result.history),
           "dev_f1": report.micro_f1, "dev_ign_f1": report.ign_f1,
           "dev_auc": report.auc, "transmit_auc": report.transmit_auc,
           "checkpoint": str(checkpoint)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    schema_path = args.schema or str(Path(args.corpus).parent / "schema.json")
    schema = corpus_mod.read_schema(schema_path)
    if schema.num_relations != model.config.num_relations:
        raise ShapeError(
            f"checkpoint expects {model.config.num_relations} relations, "
            f"schema has {schema.num_relations}")
    docs = corpus_mod.read_corpus(args.corpus, schema.num_relations)
    train_fact_set = set()
    if args.train_facts:
        train_docs = corpus_mod.read_corpus(args.train_facts, schema.num_relations)
        train_fact_set = training_mod.build_fact_identity_set(train_docs)
    report = evaluate(model, [insert_entity_markers(d) for d in docs], schema,
                      train_fact_set)
    print(report.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# export-scores


def cmd_export_scores(args) -> int:
    started = time.time()
    model, _ = load_checkpoint(args.checkpoint)
    schema_path = args.schema or str(Path(args.corpus).parent / "schema.json")
    schema = corpus_mod.read_schema(schema_path)
    docs = corpus_mod.read_corpus(args.corpus, schema.num_relations)
    matches = [d for d in docs if d.doc_id == args.doc_id]
    if not matches:
        _err(f"unknown doc-id {args.doc_id!r}")
        return EXIT_USAGE
    doc = insert_entity_markers(matches[0])
    if args.relation in schema.names:
        relation = schema.names.index(args.relation)
    else:
        try:
            relation = int(args.relation)
        except ValueError:
            _err(f"unknown relation {args.relation!r}")
            return EXIT_USAGE
        if not 0 <= relation < schema.num_relations:
            _err(f"relation index {relation} out of range")
            return EXIT_USAGE

    fw = model.predict(doc)
    tensors = list(fw.layer_scores)
    if not tensors or tensors[-1].layer < model.config.num_layers:
        tensors.append(compute_transmit_scores(fw.final_state, model.variant))
    by_layer = {t.layer: t for t in tensors}
    if args.layer not in by_layer:
        _err(f"layer {args.layer} not available; have {sorted(by_layer)}")
        return EXIT_USAGE

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = doc.num_entities
    matrix = by_layer[args.layer].scores.data[relation]
    header = ",".join(["entity"] + [str(j) for j in range(n)])
    score_path = out_dir / f"scores_{args.doc_id}_r{relation}_l{args.layer}.csv"
    with open(score_path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for i in range(n):
            fh.write(",".join([str(i)] + [f"{matrix[i, j]:.12g}" for j in range(n)]) + "\n")
    golden = np.zeros((n, n), dtype=int)
    for h, k, t in doc.facts:
        if k == relation:
            golden[h, t] = 1
    golden_path = out_dir / f"golden_{args.doc_id}_r{relation}.csv"
    with open(golden_path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for i in range(n):
            fh.write(",".join([str(i)] + [str(golden[i, j]) for j in range(n)]) + "\n")
    _write_manifest(out_dir, "export-scores",
                    {"doc_id": args.doc_id, "relation": relation,
                     "layer": args.layer}, None,
                    {"checkpoint": args.checkpoint, "corpus": args.corpus},
                    {"scores": str(score_path), "golden": str(golden_path)}, started)
    _emit({"command": "export-scores", "scores": str(score_path),
           "golden": str(golden_path), "entities": n, "relation": relation,
           "layer": args.layer})
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(seed=args.seed, num_entities=args.size,
                            corrupt=args.corrupt)
    failures = []
    payload = []
    for res in results:
        payload.append({"variant": res.variant, "pool": res.pool,
                        "layers": res.layers,
                        "max_relative_error": res.worst,
                        "per_group": {k: float(v) for k, v in res.per_group.items()}})
        if not res.passed:
            offenders = [k for k, v in res.per_group.items()
                         if v > GRADCHECK_TOLERANCE]
            failures.append(f"{res.variant}/{res.pool}: {', '.join(offenders)}")
    _emit({"command": "gradcheck", "tolerance": GRADCHECK_TOLERANCE,
           "passed": not failures, "results": payload})
    if failures:
        _err("gradient check failed for: " + "; ".join(failures))
        return EXIT_GRADCHECK
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="constgcn",
        description="Constrained transmission-based graph convolution for "
                    "document-level relation extraction")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--docs", type=int, default=200)
    gen.add_argument("--dev-docs", type=int, default=50)
    gen.add_argument("--relations", type=int, default=5)
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--entities", type=int, nargs=2, default=(5, 9),
                     metavar=("LO", "HI"))
    gen.add_argument("--vocab", type=int, default=224)
    gen.add_argument("--types", type=int, default=5)
    gen.add_argument("--max-coref", type=int, default=3)
    gen.add_argument("--edge-prob", type=float, default=0.5)
    gen.add_argument("--cross-target", type=float, default=0.4)
    gen.add_argument("--noise-prob", type=float, default=0.05)
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train a model on a corpus")
    tr.add_argument("--train", required=True)
    tr.add_argument("--dev", required=True)
    tr.add_argument("--schema", default=None)
    tr.add_argument("--config", default=None, help="key=value file")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a single config key")
    tr.add_argument("--out", required=True)
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--schema", default=None)
    ev.add_argument("--train-facts", default=None,
                    help="corpus whose facts are excluded for Ign F1")
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export-scores",
                        help="export a transmitting-score heatmap as CSV")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--corpus", required=True)
    ex.add_argument("--schema", default=None)
    ex.add_argument("--doc-id", required=True)
    ex.add_argument("--relation", required=True,
                    help="relation name or index")
    ex.add_argument("--layer", type=int, default=0)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export_scores)

    gc = sub.add_parser("gradcheck",
                        help="verify gradients of the combined objective")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--size", type=int, default=4, help="entities, at most 6")
    gc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, DomainError) as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE
    except DivergenceError as exc:
        _err(f"training diverged: {exc}")
        return EXIT_DIVERGED
    except ShapeError as exc:
        _err(f"incompatible shapes: {exc}")
        return EXIT_INCOMPATIBLE
    except FileNotFoundError as exc:
        _err(f"missing file: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
