"""Scenario orchestration: suites, ablations, reports.

A scenario is (source domains -> target domain) on the synthetic family.
Each run trains (or reuses) source models, serves them over the real
socket protocol, adapts, and evaluates macro-F1 on the held-out labeled
target test split, alongside the source-only baseline (teacher hard labels
on the target test set) and the upper bound (the same classifier trained
on the labeled target train split).
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapt import RunReport, adapt, evaluate, train_source
from .config import RunConfig
from .data import Dataset, gen_domain, split_dataset, synth_spec
from .fusion import combine_teachers, entropy_weight, normalize_weights
from .metrics import macro_f1
from .models import DualBranchModel, PromptedClassifier
from .rng import derive_seed
from .teacher import LocalTeacher, RemoteTeacher, TeacherServer

TRAIN_FRACTION = 0.7
DEFAULT_PAIRS = ((0, 5), (1, 6), (2, 7), (3, 5), (4, 6))
ABLATION_VARIANTS = ("full", "no_prompt", "no_input_recon",
                     "no_prompt_recon", "naive_avg")


@dataclass
class ScenarioResult:
    scenario: str
    variant: str
    seed: int
    mf1: float
    teacher_mf1: float
    upper_mf1: float | None
    seconds: float


class DomainData:
    """Per-domain generated data with train/test splits, cached."""

    def __init__(self, samples_per_class: int = 60, data_seed: int = 0):
        self.samples_per_class = samples_per_class
        self.data_seed = data_seed
        self._cache: dict[int, tuple[Dataset, Dataset]] = {}

    def splits(self, domain: int) -> tuple[Dataset, Dataset]:
        if domain not in self._cache:
            full = gen_domain(synth_spec(domain, self.samples_per_class,
                                         self.data_seed))
            self._cache[domain] = split_dataset(
                full, TRAIN_FRACTION, derive_seed(self.data_seed, "split", domain))
        return self._cache[domain]


class SourcePool:
    """Trains source classifiers lazily, one per (domain, seed)."""

    def __init__(self, cfg: RunConfig, data: DomainData, log=None):
        self.cfg = cfg
        self.data = data
        self.log = log
        self._models: dict[tuple[int, int], PromptedClassifier] = {}

    def model(self, domain: int, seed: int) -> PromptedClassifier:
        key = (domain, seed)
        if key not in self._models:
            train, _ = self.data.splits(domain)
            cfg = self.cfg.with_overrides(
                seed=derive_seed(seed, "src", domain) % (2 ** 31))
            self._models[key] = train_source(cfg, train, log=self.log)
        return self._models[key]


def run_scenario(cfg: RunConfig, sources, target: int, seed: int,
                 pool: SourcePool, data: DomainData, variant: str = "full",
                 outdir: Path | None = None, upper: bool = True,
                 use_sockets: bool = True,
                 log=None) -> tuple[ScenarioResult, RunReport]:
    """One adaptation run; teachers served over TCP unless use_sockets=False."""
    sources = list(sources)
    run_cfg = cfg.with_overrides(seed=seed)
    tgt_train, tgt_test = data.splits(target)
    teachers_models = [pool.model(s, seed) for s in sources]

    servers: list[TeacherServer] = []
    try:
        if use_sockets:
            servers = [TeacherServer(m).start() for m in teachers_models]
            teachers = [RemoteTeacher(s.address) for s in servers]
        else:
            teachers = [LocalTeacher(m) for m in teachers_models]
        model, buffer, report = adapt(run_cfg, tgt_train.without_labels(),
                                      teachers, log=log)
        if use_sockets:
            teacher_preds = [t.predict(tgt_test.x, mode="hard")
                             for t in teachers]
        else:
            teacher_preds = [m.predict_hard(tgt_test.x)
                             for m in teachers_models]
    finally:
        for server in servers:
            server.stop()

    if len(sources) == 1:
        teacher_mf1 = macro_f1(teacher_preds[0], tgt_test.labels,
                               tgt_test.classes)
    else:
        soft = np.stack([m.predict_proba(tgt_test.x) for m in teachers_models])
        lam = (np.full(len(sources), 1.0 / len(sources)) if cfg.naive_avg
               else normalize_weights([entropy_weight(p) for p in soft]))
        fused = combine_teachers(soft, lam)
        teacher_mf1 = macro_f1(fused.argmax(axis=-1), tgt_test.labels,
                               tgt_test.classes)

    mf1 = evaluate(model.predict_hard, tgt_test)
    upper_mf1 = None
    if upper:
        upper_model = train_source(run_cfg, tgt_train, log=None)
        upper_mf1 = evaluate(upper_model.predict_hard, tgt_test)

    scenario = "+".join(str(s) for s in sources) + f"->{target}"
    report.scenario = scenario
    report.mf1 = mf1
    result = ScenarioResult(scenario, variant, seed, mf1, teacher_mf1,
                            upper_mf1, report.total_seconds)
    if outdir is not None:
        _write_run_artifacts(outdir / f"{scenario}_s{seed}_{variant}",
                             model, buffer, report)
    return result, report


def _write_run_artifacts(rundir: Path, model: DualBranchModel, buffer,
                         report: RunReport) -> None:
    rundir.mkdir(parents=True, exist_ok=True)
    model.save(rundir / "adapted.ckpt",
               {i: row for i, row in enumerate(buffer.entries)})
    with open(rundir / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    with open(rundir / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "ce", "prompt_recon", "input_recon"])
        writer.writerows(report.epoch_losses)
    with open(rundir / "lambda.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "teacher", "eta", "lambda"])
        writer.writerows(report.lambda_trajectory)


def write_results_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "variant", "seed", "mf1",
                         "teacher_mf1", "upper_mf1", "seconds"])
        for r in rows:
            writer.writerow([r.scenario, r.variant, r.seed,
                             f"{r.mf1:.4f}", f"{r.teacher_mf1:.4f}",
                             "" if r.upper_mf1 is None else f"{r.upper_mf1:.4f}",
                             f"{r.seconds:.3f}"])


def read_results_csv(path: Path) -> list[ScenarioResult]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ScenarioResult(
                rec["scenario"], rec["variant"], int(rec["seed"]),
                float(rec["mf1"]), float(rec["teacher_mf1"]),
                float(rec["upper_mf1"]) if rec["upper_mf1"] else None,
                float(rec["seconds"]),
            ))
    return rows


def format_summary(rows) -> str:
    """Aligned text table, one line per (scenario, variant), mean+-std."""
    groups: dict[tuple[str, str], list[ScenarioResult]] = {}
    for r in rows:
        groups.setdefault((r.scenario, r.variant), []).append(r)

    def agg(values):
        mean = statistics.fmean(values)
        std = statistics.pstdev(values) if len(values) > 1 else 0.0
        return f"{mean:6.2f}+-{std:5.2f}"

    lines = [f"{'scenario':<16} {'variant':<16} {'runs':>4} "
             f"{'mf1':>14} {'teacher':>14} {'upper':>14}"]
    for (scenario, variant), members in sorted(groups.items()):
        uppers = [m.upper_mf1 for m in members if m.upper_mf1 is not None]
        lines.append(
            f"{scenario:<16} {variant:<16} {len(members):>4} "
            f"{agg([m.mf1 for m in members]):>14} "
            f"{agg([m.teacher_mf1 for m in members]):>14} "
            f"{agg(uppers) if uppers else '-':>14}")
    return "\n".join(lines)


def run_suite(cfg: RunConfig, seeds, outdir: Path, pairs=DEFAULT_PAIRS,
              samples_per_class: int = 60, data_seed: int = 0,
              use_sockets: bool = True, log=None) -> list[ScenarioResult]:
    data = DomainData(samples_per_class, data_seed)
    pool = SourcePool(cfg, data, log=None)
    results = []
    for source, target in pairs:
        for seed in seeds:
            result, _ = run_scenario(cfg, [source], target, seed, pool, data,
                                     outdir=outdir, use_sockets=use_sockets,
                                     log=log)
            results.append(result)
            if log is not None:
                log(f"{result.scenario} seed={seed} mf1={result.mf1:.2f} "
                    f"teacher={result.teacher_mf1:.2f}")
    write_results_csv(outdir / "summary.csv", results)
    (outdir / "summary.txt").write_text(format_summary(results) + "\n")
    return results


def run_ablation(cfg: RunConfig, seeds, outdir: Path, sources=(0, 1, 2),
                 target: int = 5, samples_per_class: int = 60,
                 data_seed: int = 0, use_sockets: bool = True,
                 log=None) -> list[ScenarioResult]:
    data = DomainData(samples_per_class, data_seed)
    pool = SourcePool(cfg, data, log=None)
    results = []
    variant_cfgs = {
        "full": cfg,
        "no_prompt": cfg.with_overrides(no_prompt=True),
        "no_input_recon": cfg.with_overrides(no_input_recon=True),
        "no_prompt_recon": cfg.with_overrides(no_prompt_recon=True),
        "naive_avg": cfg.with_overrides(naive_avg=True),
    }
    for variant in ABLATION_VARIANTS:
        for seed in seeds:
            result, _ = run_scenario(variant_cfgs[variant], sources, target,
                                     seed, pool, data, variant=variant,
                                     outdir=outdir, upper=False,
                                     use_sockets=use_sockets, log=log)
            results.append(result)
            if log is not None:
                log(f"{variant} seed={seed} mf1={result.mf1:.2f}")
    write_results_csv(outdir / "ablation.csv", results)
    (outdir / "ablation.txt").write_text(format_summary(results) + "\n")
    return results
