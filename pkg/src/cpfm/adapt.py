"""Source training and the target-side adaptation loop.

Adaptation consumes only teacher prediction interfaces, never source
checkpoints. Teachers are queried once for the full target set; their
(fused) soft labels seed the per-sample buffer, which afterwards drifts
toward the model's own aggregated predictions through the EMA rule. Each
batch is processed branch 1 then branch 2, and the buffer refresh uses the
aggregated prediction taken before either branch updated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward, softmax
from .config import RunConfig
from .data import Dataset
from .encoder import classify_head
from .errors import ContractError, DataError
from .fusion import TransferWeights, combine_teachers
from .losses import (LossWeights, expand_mask_to_steps, gen_mask, loss_ce_soft,
                     loss_input_recon, loss_prompt_recon, prompt_autoencode,
                     total_loss)
from .metrics import macro_f1
from .models import DualBranchModel, PromptedClassifier
from .optim import Adam
from .pseudo_labels import TeacherBuffer
from .rng import SplitMix64, derive_seed


@dataclass
class RunReport:
    """Deterministic run results plus (non-deterministic) wall timings."""

    scenario: str = ""
    seed: int = 0
    mf1: float | None = None
    epoch_losses: list = field(default_factory=list)   # (epoch, ce, pr, ir)
    lambda_trajectory: list = field(default_factory=list)  # (epoch, teacher, eta, lam)
    epoch_seconds: list = field(default_factory=list)
    total_seconds: float = 0.0

    def deterministic_view(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "mf1": self.mf1,
            "epoch_losses": [tuple(row) for row in self.epoch_losses],
            "lambda_trajectory": [tuple(row) for row in self.lambda_trajectory],
        }

    def to_dict(self) -> dict:
        view = self.deterministic_view()
        view["epoch_seconds"] = list(self.epoch_seconds)
        view["total_seconds"] = self.total_seconds
        return view


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_source(cfg: RunConfig, dataset: Dataset,
                 log=None) -> PromptedClassifier:
    """Hard-label cross entropy over prompt + classification head."""
    if not dataset.labeled:
        raise DataError("source training requires labels")
    if dataset.classes != cfg.classes:
        raise DataError(
            f"dataset has {dataset.classes} classes, config expects {cfg.classes}")
    if dataset.labels.max() >= cfg.classes or dataset.labels.min() < 0:
        raise DataError("label out of range for configured class count")
    model = PromptedClassifier(cfg.encoder_config(), cfg.backbone_seed,
                               derive_seed(cfg.seed, "source"))
    opt = Adam(model.trainable(), lr=cfg.lr)
    onehot = np.eye(cfg.classes)[dataset.labels]
    n = len(dataset)
    for epoch in range(cfg.epochs_src):
        order_list = list(range(n))
        SplitMix64(derive_seed(cfg.seed, "src-order", epoch)).shuffle(order_list)
        order = np.asarray(order_list)
        epoch_loss = 0.0
        for ids in _batches(n, cfg.batch_size, order):
            opt.zero_grad()
            probs = softmax(model.logits(dataset.x[ids]), axis=-1)
            loss = loss_ce_soft(probs, onehot[ids])
            backward(loss)
            opt.step()
            epoch_loss += loss.item() * len(ids)
        if log is not None:
            log(f"source epoch {epoch + 1}/{cfg.epochs_src} "
                f"ce={epoch_loss / n:.4f}")
    return model


def evaluate(predict_hard, dataset: Dataset, batch_size: int = 256) -> float:
    """Macro-F1 of a hard-prediction callable on a labeled dataset."""
    if not dataset.labeled:
        raise ContractError("evaluation requires labels")
    preds = np.concatenate([
        np.asarray(predict_hard(dataset.x[s:s + batch_size]))
        for s in range(0, len(dataset), batch_size)
    ]) if len(dataset) else np.zeros(0, dtype=np.int64)
    return macro_f1(preds, dataset.labels, dataset.classes)


def _query_teachers(teachers, x: np.ndarray, batch_size: int) -> np.ndarray:
    """Soft labels from every teacher over the whole target set, (M, n, K)."""
    all_preds = []
    for teacher in teachers:
        rows = [teacher.predict(x[s:s + batch_size], mode="soft")
                for s in range(0, len(x), batch_size)]
        all_preds.append(np.concatenate(rows, axis=0))
    return np.stack(all_preds, axis=0)


def adapt_batch(model: DualBranchModel, opt: Adam, x_batch: np.ndarray,
                buffer_labels: np.ndarray, branch: int, mask: np.ndarray,
                weights: LossWeights) -> tuple[float, float, float]:
    """One branch update on one batch; returns (ce, pr, ir) values.

    The masked forward pass feeds both the distillation and the input
    reconstruction terms; only the branch's prompt and head plus the shared
    reconstruction head and autoencoder receive the Adam step.
    """
    if len(buffer_labels) != len(x_batch):
        raise ContractError("one buffered label per batch sample required")
    opt.zero_grad()
    x_t = Tensor(np.asarray(x_batch, dtype=np.float64))
    tokens = model.branch_tokens(x_t, branch, mask)
    probs = model.branch_probs(tokens, branch)
    ce = loss_ce_soft(probs, buffer_labels)

    zero = Tensor(0.0)
    if weights.input_recon > 0.0:
        recon = model.reconstruct(tokens)
        step_mask = expand_mask_to_steps(mask, model.cfg.patch_len)
        ir = loss_input_recon(x_t, recon, step_mask, weights.masked_fraction)
    else:
        ir = zero

    if weights.prompt_recon > 0.0 and model.cfg.prompt_len > 0:
        pairs = [(p, prompt_autoencode(p, model.autoencoder))
                 for p in model.prompts()]
        pr = loss_prompt_recon(pairs)
    else:
        pr = zero

    loss = total_loss(ce, pr, ir, weights)
    backward(loss)
    opt.step(model.branch_params(branch))
    return ce.item(), pr.item(), ir.item()


def adapt(cfg: RunConfig, target: Dataset, teachers,
          log=None) -> tuple[DualBranchModel, TeacherBuffer, RunReport]:
    """Full adaptation: buffer seeding, branch updates, EMA refinement."""
    if target.labeled:
        raise ContractError(
            "adaptation consumes unlabeled targets; strip labels first")
    if not teachers:
        raise ContractError("at least one teacher required")
    enc_cfg = cfg.encoder_config()
    for teacher in teachers:
        t, d, k = teacher.info()
        if (t, d, k) != (enc_cfg.series_len, enc_cfg.channels, enc_cfg.classes):
            raise ContractError(
                f"teacher shape ({t},{d},{k}) does not match config "
                f"({enc_cfg.series_len},{enc_cfg.channels},{enc_cfg.classes})")

    started = time.perf_counter()
    report = RunReport(seed=cfg.seed)
    model = DualBranchModel(enc_cfg, cfg.backbone_seed, cfg.seed,
                            clone_prompts=cfg.clone_prompts)
    opt = Adam(model.trainable(), lr=cfg.lr)
    weights = cfg.loss_weights()
    n = len(target)
    n_teachers = len(teachers)

    teacher_preds = _query_teachers(teachers, target.x, cfg.batch_size * 8)
    transfer = None
    if n_teachers > 1:
        if cfg.naive_avg:
            lam = np.full(n_teachers, 1.0 / n_teachers)
            fused = combine_teachers(teacher_preds, lam)
            report.lambda_trajectory = [
                (0, i, 1.0 / n_teachers, 1.0 / n_teachers)
                for i in range(n_teachers)]
        else:
            transfer = TransferWeights.from_teacher_preds(teacher_preds)
            fused = combine_teachers(teacher_preds, transfer.lam)
    else:
        fused = teacher_preds[0]
    buffer = TeacherBuffer.initialize(fused, cfg.ema_gamma)

    for epoch in range(cfg.epochs):
        tick = time.perf_counter()
        if epoch > 0 and transfer is not None:
            confident = int((combine_teachers(teacher_preds, transfer.lam)
                             .max(axis=-1) > cfg.conf_threshold).sum())
            transfer.refresh(teacher_preds, confident, n)
        elif epoch > 0 and n_teachers > 1 and cfg.naive_avg:
            report.lambda_trajectory.extend(
                (epoch, i, 1.0 / n_teachers, 1.0 / n_teachers)
                for i in range(n_teachers))

        order_list = list(range(n))
        SplitMix64(derive_seed(cfg.seed, "order", epoch)).shuffle(order_list)
        order = np.asarray(order_list)
        sums = np.zeros(3)
        for b, ids in enumerate(_batches(n, cfg.batch_size, order)):
            x_batch = target.x[ids]
            aggregated = model.aggregated_proba(x_batch)
            buffered = buffer.get(ids)
            for branch in (1, 2):
                mask = gen_mask(enc_cfg.n_patches, enc_cfg.mask_ratio,
                                derive_seed(cfg.seed, "mask", epoch, b, branch))
                ce, pr, ir = adapt_batch(model, opt, x_batch, buffered,
                                         branch, mask, weights)
                sums += np.array([ce, pr, ir]) * len(ids)
            buffer.refine(ids, aggregated)
        if not buffer.simplex_ok():
            raise ContractError("teacher buffer left the simplex")
        means = sums / (2 * n)
        report.epoch_losses.append((epoch, *map(float, means)))
        report.epoch_seconds.append(time.perf_counter() - tick)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} ce={means[0]:.4f} "
                f"pr={means[1]:.4f} ir={means[2]:.4f}")

    if transfer is not None:
        report.lambda_trajectory = list(transfer.history)
    report.total_seconds = time.perf_counter() - started
    return model, buffer, report
