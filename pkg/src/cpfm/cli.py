"""Command-line interface.

Subcommands: gen-data, train-source, serve-teacher, adapt, eval, suite,
ablate, dump-embeddings, report. Hyperparameters come from defaults, an
optional flat key=value config file (--config), and CLI flags of the same
names, in that precedence order.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .adapt import adapt, evaluate, train_source
from .config import RunConfig, build_config
from .data import (SYNTH_DOMAINS, gen_domain, read_dataset, split_dataset,
                   synth_spec, write_dataset)
from .errors import ContractError
from .metrics import macro_f1
from .models import DualBranchModel, PromptedClassifier
from .rng import derive_seed
from .teacher import ENV_ADDR, RemoteTeacher, serve


def _log(message: str) -> None:
    print(message, flush=True)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    for name, kind in (
        ("series-len", int), ("channels", int), ("patch-len", int),
        ("model-dim", int), ("heads", int), ("layers", int),
        ("prompt-len", int), ("classes", int), ("mask-ratio", float),
        ("gamma1", float), ("gamma2", float), ("pi", float),
        ("ema-gamma", float), ("epochs", int), ("epochs-src", int),
        ("batch-size", int), ("lr", float), ("seed", int),
        ("backbone-seed", int), ("conf-threshold", float),
    ):
        parser.add_argument(f"--{name}", type=kind, default=None)
    for flag in ("no-prompt", "no-input-recon", "no-prompt-recon",
                 "naive-avg", "clone-prompts"):
        parser.add_argument(f"--{flag}", action="store_const", const=True,
                            default=None)


def _config_from(args: argparse.Namespace) -> RunConfig:
    keys = RunConfig.__dataclass_fields__.keys()
    overrides = {k: getattr(args, k, None) for k in keys}
    return build_config(getattr(args, "config", None), overrides)


def cmd_gen_data(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    domains = ([int(d) for d in args.domains.split(",")] if args.domains
               else sorted(SYNTH_DOMAINS))
    for domain in domains:
        spec = synth_spec(domain, args.samples_per_class, args.data_seed)
        full = gen_domain(spec)
        train, test = split_dataset(full, args.train_fraction,
                                    derive_seed(args.data_seed, "split", domain))
        write_dataset(train, outdir / f"domain{domain}_train.tsds")
        write_dataset(test, outdir / f"domain{domain}_test.tsds")
        write_dataset(train.without_labels(),
                      outdir / f"domain{domain}_train_unlabeled.tsds")
        _log(f"domain {domain}: {len(train)} train / {len(test)} test "
             f"samples -> {outdir}")
    return 0


def cmd_train_source(args) -> int:
    cfg = _config_from(args)
    dataset = read_dataset(args.data)
    model = train_source(cfg, dataset, log=_log)
    model.save(args.out)
    _log(f"checkpoint written to {args.out}")
    return 0


def cmd_serve_teacher(args) -> int:
    server = serve(args.checkpoint, args.addr)
    _log(f"teacher serving on {server.address} (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        _log("stopping")
    finally:
        server.stop()
    return 0


def _teacher_specs(args) -> list[str]:
    specs: list[str] = []
    for entry in args.teacher or []:
        specs.extend(part for part in entry.split(",") if part)
    if not specs:
        env = os.environ.get(ENV_ADDR, "")
        if env:
            specs = [env]
    if not specs:
        raise ContractError(
            f"no teachers given; pass --teacher host:port or set {ENV_ADDR}")
    for spec in specs:
        if os.path.exists(spec) or spec.endswith(".ckpt"):
            raise ContractError(
                f"{spec!r} looks like a checkpoint; adaptation only accepts "
                "prediction services (serve it with serve-teacher first)")
    return specs


def cmd_adapt(args) -> int:
    cfg = _config_from(args)
    target = read_dataset(args.target)
    if target.labeled:
        raise ContractError(
            "target dataset carries labels; adapt requires the unlabeled file")
    teachers = [RemoteTeacher(spec) for spec in _teacher_specs(args)]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    model, buffer, report = adapt(cfg, target, teachers, log=_log)
    model.save(outdir / "adapted.ckpt",
               {i: row for i, row in enumerate(buffer.entries)})
    with open(outdir / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    with open(outdir / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "ce", "prompt_recon", "input_recon"])
        writer.writerows(report.epoch_losses)
    with open(outdir / "lambda.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "teacher", "eta", "lambda"])
        writer.writerows(report.lambda_trajectory)
    _log(f"adapted checkpoint and reports written to {outdir}")
    return 0


def cmd_eval(args) -> int:
    dataset = read_dataset(args.data)
    if not dataset.labeled:
        raise ContractError("evaluation requires a labeled dataset")
    try:
        model, _ = DualBranchModel.load(args.checkpoint)
        if args.branch == 0:
            predict = model.predict_hard
        else:
            def predict(x, _b=args.branch):
                tokens = model.branch_tokens(np.asarray(x), _b)
                return model.branch_probs(tokens, _b).data.argmax(axis=-1)
    except KeyError:
        source = PromptedClassifier.load(args.checkpoint)
        predict = source.predict_hard
    score = evaluate(predict, dataset)
    _log(f"macro-F1: {score:.2f}")
    return 0


def cmd_suite(args) -> int:
    cfg = _config_from(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    pairs = harness.DEFAULT_PAIRS
    if args.pairs:
        pairs = tuple(tuple(int(x) for x in pair.split("-"))
                      for pair in args.pairs.split(","))
    results = harness.run_suite(cfg, seeds, outdir, pairs=pairs,
                                samples_per_class=args.samples_per_class,
                                data_seed=args.data_seed, log=_log)
    _log(harness.format_summary(results))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    sources = tuple(int(s) for s in args.sources.split(","))
    results = harness.run_ablation(cfg, seeds, outdir, sources=sources,
                                   target=args.target,
                                   samples_per_class=args.samples_per_class,
                                   data_seed=args.data_seed, log=_log)
    _log(harness.format_summary(results))
    return 0


def cmd_dump_embeddings(args) -> int:
    model, _ = DualBranchModel.load(args.checkpoint)
    dataset = read_dataset(args.data)
    emb = model.embeddings(dataset.x, args.branch)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in emb:
            writer.writerow([f"{v:.17g}" for v in row])
    _log(f"{emb.shape[0]} embeddings of dim {emb.shape[1]} -> {args.out}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for csv_path in sorted(Path(args.runs).glob("**/*.csv")):
        if csv_path.name in ("summary.csv", "ablation.csv"):
            rows.extend(harness.read_results_csv(csv_path))
    if not rows:
        _log(f"no summary.csv/ablation.csv found under {args.runs}")
        return 1
    table = harness.format_summary(rows)
    _log(table)
    out = Path(args.runs) / "report.txt"
    out.write_text(table + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpfm",
        description="Black-box time-series domain adaptation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic domain datasets")
    p.add_argument("--out", required=True)
    p.add_argument("--domains", help="comma-separated domain ids (default all)")
    p.add_argument("--samples-per-class", type=int, default=60)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--data-seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-source", help="train a source-domain classifier")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="labeled .tsds file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("serve-teacher", help="serve a source model over TCP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--addr", default="127.0.0.1:7763")
    p.set_defaults(func=cmd_serve_teacher)

    p = sub.add_parser("adapt", help="adapt to an unlabeled target domain")
    _add_config_flags(p)
    p.add_argument("--target", required=True, help="unlabeled .tsds file")
    p.add_argument("--teacher", action="append",
                   help="teacher address host:port (repeatable or comma-separated)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="macro-F1 of a checkpoint on labeled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--branch", type=int, default=0, choices=(0, 1, 2),
                   help="0 = aggregated, 1/2 = single branch")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("suite", help="single-source scenario suite")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--pairs", help="e.g. 0-5,1-6 (source-target pairs)")
    p.add_argument("--samples-per-class", type=int, default=60)
    p.add_argument("--data-seed", type=int, default=0)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("ablate", help="ablation suite on one multi-source scenario")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--sources", default="0,1,2")
    p.add_argument("--target", type=int, default=5)
    p.add_argument("--samples-per-class", type=int, default=60)
    p.add_argument("--data-seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-embeddings",
                       help="write per-sample mean-pooled embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--branch", type=int, required=True, choices=(1, 2))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_embeddings)

    p = sub.add_parser("report", help="aggregate run CSVs into a text table")
    p.add_argument("--runs", required=True, help="directory of suite outputs")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
