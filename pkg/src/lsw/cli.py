"""Command-line front end: ``lsw synth | train | eval | explain``.

Exit codes: 0 success, 2 usage or unreadable input, 3 numeric failure,
4 checkpoint/corpus compatibility failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import checkpoint as ckpt_io
from .data import SyntheticSpec, discover_sections, gen_synthetic, load_corpus, split
from .errors import CompatibilityError, CorpusError, NumericalError
from .evalx import compare_runs, compute_metrics, export_weights, format_results, read_metrics_csv, write_metrics_csv
from .trainer import TrainConfig, last_path, read_config_file, resume, train, write_epoch_csv

log = logging.getLogger("lsw")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_COMPAT = 0, 2, 3, 4


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, payload: dict) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _unit_float(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {value}")
    return value


def _open_threshold(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsw", description="Learned section weights for multi-label classification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus with one informative section")
    p.add_argument("--sections", type=_positive_int, default=3)
    p.add_argument("--classes", type=_positive_int, default=8)
    p.add_argument("--docs", type=_positive_int, default=2000)
    p.add_argument("--informative", type=_nonneg_int, default=0)
    p.add_argument("--noise", type=_unit_float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--section-length", type=_nonneg_int, default=20)
    p.add_argument("--out", default="corpus.jsonl")
    p.add_argument("--manifest", help="generator manifest path (default: <out>.manifest.json)")

    S = argparse.SUPPRESS
    p = sub.add_parser("train", help="train one model kind on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--model", choices=("lsw", "baseline1", "baseline2", "baseline3"), default=S)
    p.add_argument("--epochs", type=_nonneg_int, default=S)
    p.add_argument("--batch", dest="batch_size", type=_positive_int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--d", type=_positive_int, default=S)
    p.add_argument("--p", type=_positive_int, default=S)
    p.add_argument("--output", choices=("sigmoid", "softmax"), default=S)
    p.add_argument("--sections", default=S, help="section count or comma-separated names")
    p.add_argument("--profile", choices=("arxiv", "elsevier"), default=S)
    p.add_argument("--min-count", dest="min_count", type=_positive_int, default=S)
    p.add_argument("--validation-fraction", dest="validation_fraction", type=float, default=S)
    p.add_argument("--mask-empty-sections", dest="mask_empty_sections", action="store_true", default=S)
    p.add_argument("--no-weight-head-relu", dest="weight_head_relu", action="store_false", default=S)
    p.add_argument("--resume", help="continue from this checkpoint for --epochs more epochs")
    p.add_argument("--out", default="run")

    p = sub.add_parser("eval", help="score a checkpoint, or compare two metrics CSVs")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--split", choices=("all", "train", "validation"), default="all")
    p.add_argument("--threshold", type=_open_threshold, default=0.5)
    p.add_argument("--zero-division", choices=("zero", "skip"), default="zero")
    p.add_argument("--method", help="row name in the metrics CSV (default: model kind)")
    p.add_argument("--compare", nargs=2, metavar=("A_CSV", "B_CSV"))
    p.add_argument("--out", help="output CSV path")

    p = sub.add_parser("explain", help="export section weights of an LSW checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("all", "train", "validation"), default="all")
    p.add_argument("--doc-id", action="append", dest="doc_ids")
    p.add_argument("--bin-width", type=float, default=0.05)
    p.add_argument("--out", default="explain")
    return parser


def _load_for_checkpoint(args):
    stored = ckpt_io.load(args.checkpoint)
    corpus = load_corpus(args.corpus, stored.model.config.section_names)
    unknown = sorted({x for r in corpus.records for x in r.labels} - set(stored.labels.names))
    if unknown:
        raise CompatibilityError(f"corpus labels {unknown[:5]} are outside the checkpoint label space")
    records = corpus.records
    if args.split != "all":
        meta = stored.training
        train_docs, val_docs = split(records, meta.get("validation_fraction", 0.1), meta.get("seed", 0))
        records = val_docs if args.split == "validation" else train_docs
    return stored, corpus, records


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_sections=args.sections,
        n_classes=args.classes,
        n_docs=args.docs,
        informative=args.informative,
        noise=args.noise,
        seed=args.seed,
        section_length=args.section_length,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise _Usage(str(exc)) from exc
    syn = gen_synthetic(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = syn.write(out, args.manifest)
    log.info("wrote %d documents to %s (manifest %s)", len(syn.records), out, manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    values = read_config_file(args.config) if args.config else {}
    flag_names = ("model", "epochs", "batch_size", "lr", "seed", "d", "p", "output", "sections", "profile",
                  "min_count", "validation_fraction", "mask_empty_sections", "weight_head_relu")
    for name in flag_names:
        if hasattr(args, name):
            values[name] = getattr(args, name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values["checkpoint"] = str(out / "model.ckpt")
    try:
        config = TrainConfig.from_mapping(values)
    except ValueError as exc:
        raise _Usage(str(exc)) from exc
    (out / "train.conf").write_text(config.to_lines(), encoding="utf-8")

    sections = None
    if config.sections and not config.sections.isdigit():
        sections = [s.strip() for s in config.sections.split(",") if s.strip()]
    corpus = load_corpus(args.corpus, sections or discover_sections(args.corpus))
    if config.sections and config.sections.isdigit() and int(config.sections) != len(corpus.section_names):
        raise _Usage(f"--sections {config.sections} but the corpus declares {len(corpus.section_names)} sections")
    try:
        result = resume(args.resume, corpus, config) if args.resume else train(config, corpus)
    except NumericalError as exc:
        diag = out / "nan_diagnostic.json"
        write_manifest(diag, {"error": str(exc), "batch_ids": exc.batch_ids, "param_norms": exc.param_norms})
        print(f"lsw: {exc}; diagnostic written to {diag}", file=sys.stderr)
        return EXIT_NUMERIC

    write_epoch_csv(result.logs, out / "epochs.csv")
    if not result.logs:
        ckpt_io.save(result.checkpoint(), config.checkpoint)
    final = result.model.encoder.checksum()
    log.info("encoder checksum initial=%s final=%s", result.initial_encoder_checksum, final)
    log.info("classifier input dim %d", result.model.config.classifier_input_dim)
    write_manifest(
        out / "run_manifest.json",
        {
            "command": ["lsw"] + args.argv,
            "config": asdict(config),
            "seed": config.seed,
            "corpus": str(args.corpus),
            "corpus_sha256": sha256_file(args.corpus),
            "resumed_from": args.resume,
            "started": started,
            "finished": _now(),
            "epochs_completed": result.epoch,
            "best_epoch": result.best_epoch,
            "classifier_input_dim": result.model.config.classifier_input_dim,
            "encoder_checksum": {"initial": result.initial_encoder_checksum, "final": final},
            "artifacts": {
                "checkpoint": config.checkpoint,
                "last_checkpoint": str(last_path(config.checkpoint)),
                "epoch_log": str(out / "epochs.csv"),
                "config": str(out / "train.conf"),
            },
        },
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.compare:
        a_path, b_path = args.compare
        a_rows, b_rows = read_metrics_csv(a_path), read_metrics_csv(b_path)
        if not a_rows or not b_rows:
            raise _Usage("metrics CSVs must contain at least one row")
        (a_name, a), (b_name, b) = next(iter(a_rows.items())), next(iter(b_rows.items()))
        if a_name == b_name:
            a_name, b_name = f"{a_name} (a)", f"{b_name} (b)"
        comparison = compare_runs(a, b, (a_name, b_name))
        print(comparison.format())
        if args.out:
            comparison.write_csv(args.out)
        return EXIT_OK
    if not args.checkpoint or not args.corpus:
        raise _Usage("eval needs --checkpoint and --corpus (or --compare A B)")
    started = _now()
    stored, corpus, records = _load_for_checkpoint(args)
    gold = stored.labels.encode_many(records)
    probs = stored.model.predict_proba(records)
    report = compute_metrics(probs, gold, args.threshold, args.zero_division, labels=stored.labels.names)
    method = args.method or stored.model.config.kind
    print(format_results({method: report}))
    out = Path(args.out or "metrics.csv")
    write_metrics_csv(out, {method: report})
    write_manifest(
        out.with_name(out.stem + ".run_manifest.json"),
        {
            "command": ["lsw"] + args.argv,
            "config": {"threshold": args.threshold, "split": args.split, "zero_division": args.zero_division},
            "seed": stored.training.get("seed"),
            "corpus_sha256": sha256_file(args.corpus),
            "checkpoint_sha256": sha256_file(args.checkpoint),
            "started": started,
            "finished": _now(),
            "artifacts": {"metrics": str(out)},
        },
    )
    return EXIT_OK


def cmd_explain(args) -> int:
    started = _now()
    stored, corpus, records = _load_for_checkpoint(args)
    if not 0.0 < args.bin_width <= 1.0:
        raise _Usage(f"--bin-width must be in (0, 1], got {args.bin_width}")
    if args.doc_ids:
        unknown = sorted(set(args.doc_ids) - {r.id for r in records})
        if unknown:
            raise _Usage(f"document ids not in the selected split: {unknown[:5]}")
    report = export_weights(stored.model, records, None, args.bin_width, args.doc_ids)
    paths = report.write_csvs(args.out)
    for name, m, s in zip(report.section_names, report.mean, report.std):
        print(f"{name}\tmean={m:.4f}\tstd={s:.4f}")
    write_manifest(
        Path(args.out) / "run_manifest.json",
        {
            "command": ["lsw"] + args.argv,
            "config": {"split": args.split, "bin_width": args.bin_width, "doc_ids": args.doc_ids},
            "seed": stored.training.get("seed"),
            "corpus_sha256": sha256_file(args.corpus),
            "checkpoint_sha256": sha256_file(args.checkpoint),
            "started": started,
            "finished": _now(),
            "artifacts": {k: str(v) for k, v in paths.items()},
        },
    )
    return EXIT_OK


class _Usage(Exception):
    pass


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "explain": cmd_explain}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"lsw {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CorpusError as exc:
        print(f"lsw: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"lsw: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CompatibilityError as exc:
        print(f"lsw: {exc}", file=sys.stderr)
        return EXIT_COMPAT


if __name__ == "__main__":
    sys.exit(main())
