"""Teacher-student self-training loop over a labeled/unlabeled split.

One mutual-learning epoch runs a fixed number of batches. Per batch: the
teacher labels an unlabeled batch, predictions are filtered, crops sampled
from the bank are pasted onto the pseudo-labeled images, losses are composed,
the student takes a saturating update and the teacher follows by EMA. Per
epoch: the teacher is evaluated on the full unlabeled set, the pseudo bank is
refreshed on its period, and a trace row is emitted.

All randomness flows from the experiment seed through named substreams, so a
run is reproducible bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from .config import ConfigError, ExperimentConfig
from .cropbank import CropBank, build_labeled_bank, refresh_pseudo_bank, sample_crops
from .dataset import Dataset, ImageRecord, Instance, Prediction, class_counts, split_standard
from .filtering import FilterConfig, oracle_image_labels, two_stage_filter, two_stage_mining
from .metrics import ap_50_95, average_precision, class_kld, fg_ratio, match_greedy
from .model import (
    DetectorParams,
    LossBreakdown,
    TrainingTarget,
    ema_update,
    loss_breakdown,
    student_update,
    synth_detect,
)
from .rebalance import ClassStats, SamplingDistribution, affr_distribution, fbr_mix, pseudo_recall
from .seeding import derive_seed, substream

EPOCH_CSV_COLUMNS = (
    "epoch",
    "fg_ratio",
    "kld",
    "pseudo_acc",
    "pseudo_rec",
    "box_miou",
    "ap50",
    "ap5095",
    "n_pseudo",
)


@dataclass(frozen=True)
class EpochTrace:
    """Metrics and bookkeeping for one mutual-learning epoch."""

    epoch: int
    sup_loss: LossBreakdown
    unsup_loss: LossBreakdown
    total_loss: float
    fg_ratio: float
    kld: float
    pseudo_acc: float
    pseudo_rec: float
    box_miou: float
    ap50: float
    ap5095: float
    n_pseudo: int
    n_u: int
    pr: tuple[float, ...]
    mu: tuple[float, ...]
    class_exposure: tuple[int, ...]
    pasted_counts: tuple[int, ...]

    def __post_init__(self) -> None:
        for name in (
            "total_loss", "fg_ratio", "kld", "pseudo_acc",
            "pseudo_rec", "box_miou", "ap50", "ap5095",
        ):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"trace field {name} is not finite")


@dataclass(frozen=True)
class LoopState:
    """Everything the next epoch needs."""

    teacher: DetectorParams
    student: DetectorParams
    bank: CropBank
    labeled: Dataset
    unlabeled: Dataset
    epoch: int = 0


@dataclass(frozen=True)
class RunReport:
    """Configuration echo, per-epoch traces and the final summary."""

    config: dict[str, Any]
    seed: int
    categories: tuple[dict[str, Any], ...]
    traces: tuple[EpochTrace, ...]
    summary: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "seed": self.seed,
            "categories": list(self.categories),
            "epochs": [_trace_dict(t) for t in self.traces],
            "summary": self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(EPOCH_CSV_COLUMNS)
        for t in self.traces:
            writer.writerow([getattr(t, column) for column in EPOCH_CSV_COLUMNS])
        return buf.getvalue()


def _trace_dict(t: EpochTrace) -> dict[str, Any]:
    return {
        "epoch": t.epoch,
        "sup_loss": _loss_dict(t.sup_loss),
        "unsup_loss": _loss_dict(t.unsup_loss),
        "total_loss": t.total_loss,
        "fg_ratio": t.fg_ratio,
        "kld": t.kld,
        "pseudo_acc": t.pseudo_acc,
        "pseudo_rec": t.pseudo_rec,
        "box_miou": t.box_miou,
        "ap50": t.ap50,
        "ap5095": t.ap5095,
        "n_pseudo": t.n_pseudo,
        "n_u": t.n_u,
        "pr": list(t.pr),
        "mu": list(t.mu),
        "class_exposure": list(t.class_exposure),
        "pasted_counts": list(t.pasted_counts),
    }


def _loss_dict(loss: LossBreakdown) -> dict[str, float]:
    return {
        "rpn_cls": loss.rpn_cls,
        "rpn_reg": loss.rpn_reg,
        "roi_cls": loss.roi_cls,
        "roi_reg": loss.roi_reg,
        "total": loss.total,
    }


def _effective_mode(config: ExperimentConfig) -> str:
    if not config.two_stage:
        return "one_stage"
    if config.filter.mode == "one_stage":
        return "one_stage"
    return config.filter.mode


def _apply_filter(preds, image_label, fcfg: FilterConfig):
    if fcfg.mode == "two_stage_mining":
        return two_stage_mining(preds, image_label, fcfg)
    return two_stage_filter(preds, image_label, fcfg)


def _image_targets(
    params: DetectorParams,
    instances,
    pasted_flags,
    budget: int,
) -> list[TrainingTarget]:
    """Proposal-level targets the student would produce for one image.

    Foreground scores reflect current skill, so losses fall as the student
    improves. Proposals beyond the instances count as background.
    """
    mean_recall = sum(params.recall_skill) / params.n_classes
    bg_objectness = min(0.98, 0.02 + 0.2 * (1.0 - mean_recall))
    delta = (1.0 - params.loc_skill) * 0.1
    targets = []
    for inst, pasted in zip(instances, pasted_flags):
        skill = params.recall_skill[inst.class_id - 1]
        objectness = min(max(skill, 1e-4), 1.0 - 1e-4)
        p_true = min(max(skill * (1.0 - params.confusion_rate), 1e-4), 1.0)
        targets.append(
            TrainingTarget(
                foreground=True,
                objectness=objectness,
                true_class_prob=p_true,
                box_delta=(delta, delta, delta, delta),
                from_cropbank=pasted,
            )
        )
    n_bg = max(budget - len(targets), 0)
    if n_bg:
        bg = TrainingTarget(
            foreground=False,
            objectness=bg_objectness,
            true_class_prob=1.0 - bg_objectness,
            box_delta=None,
            from_cropbank=False,
        )
        targets.extend([bg] * n_bg)
    return targets


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    if n == 0:
        return LossBreakdown(0.0, 0.0, 0.0, 0.0, 0.0)
    return LossBreakdown(
        rpn_cls=sum(p.rpn_cls for p in parts) / n,
        rpn_reg=sum(p.rpn_reg for p in parts) / n,
        roi_cls=sum(p.roi_cls for p in parts) / n,
        roi_reg=sum(p.roi_reg for p in parts) / n,
        total=sum(p.total for p in parts) / n,
    )


def pretrain(
    config: ExperimentConfig, labeled: Dataset, rng: np.random.Generator
) -> DetectorParams:
    """Burn in the student on labeled batches only.

    Every pretraining step draws a labeled batch and applies the saturating
    update with full regression supervision. With zero pretrain epochs the
    configured initial parameters come back untouched.
    """
    if not labeled.images:
        raise ConfigError("pretraining requires a non-empty labeled dataset")
    params = config.detector.build(labeled.num_classes)
    n = len(labeled.images)
    k = labeled.num_classes
    for _ in range(config.pretrain_epochs):
        for _ in range(config.batches_per_epoch):
            idx = rng.choice(n, size=min(config.labeled_batch, n), replace=False)
            exposure = np.zeros(k, dtype=np.int64)
            total = 0
            for i in idx:
                for inst in labeled.images[int(i)].ground_truth:
                    exposure[inst.class_id - 1] += 1
                    total += 1
            params = student_update(params, exposure, total, config.detector.lr)
    return params


def run_epoch(
    state: LoopState, config: ExperimentConfig, rng: np.random.Generator
) -> tuple[LoopState, EpochTrace]:
    """Advance the loop by one mutual-learning epoch.

    Batch phase: teacher labels an unlabeled batch, predictions are filtered,
    bank crops are pasted onto the pseudo-labeled images, losses are composed,
    the student updates and the teacher follows by EMA. Epoch phase: the
    teacher is evaluated on the whole unlabeled set, the pseudo bank refreshes
    on its period and the trace row is assembled.
    """
    teacher, student, bank = state.teacher, state.student, state.bank
    labeled, unlabeled = state.labeled, state.unlabeled
    k = labeled.num_classes
    n_lab, n_unl = len(labeled.images), len(unlabeled.images)
    budget = config.proposal_budget
    mode = _effective_mode(config)
    fcfg = replace(config.filter, mode=mode)
    mixing = (config.fbr or config.affr) and config.paste.crops_per_image > 0
    labeled_counts = class_counts(labeled)
    freq = labeled_counts.astype(float)

    # The sampling distribution is fixed for the epoch: the bank only changes
    # at the refresh step below.
    stats = ClassStats(
        pseudo_counts=tuple(int(c) for c in bank.pseudo_class_counts(k)),
        labeled_counts=tuple(int(c) for c in labeled_counts),
        ratio=n_unl / n_lab,
    )
    pr = pseudo_recall(stats)
    if config.affr:
        dist = affr_distribution(pr, config.paste.beta)
    else:
        dist = SamplingDistribution.uniform(k)

    fg_total = 0
    bg_total = 0
    exposure_total = np.zeros(k, dtype=np.int64)
    pasted_total = np.zeros(k, dtype=np.int64)
    sup_losses: list[LossBreakdown] = []
    unsup_losses: list[LossBreakdown] = []

    for _ in range(config.batches_per_epoch):
        batch_idx = rng.choice(
            n_unl, size=min(config.unlabeled_batch, n_unl), replace=False
        )
        mixed_batch = []
        for i in batch_idx:
            img = unlabeled.images[int(i)]
            raw = synth_detect(teacher, img, rng, class_weights=freq)
            label = (
                oracle_image_labels(img, config.oracle, rng, k)
                if mode != "one_stage"
                else None
            )
            kept = _apply_filter(raw, label, fcfg)
            pseudo_record = ImageRecord(
                id=img.id,
                width=img.width,
                height=img.height,
                ground_truth=tuple(
                    Instance(p.class_id, p.bbox, img.id) for p in kept
                ),
            )
            crops = (
                sample_crops(bank, dist, config.paste.crops_per_image, rng)
                if mixing
                else []
            )
            mixed = fbr_mix(pseudo_record, crops, rng, config.paste)
            mixed_batch.append(mixed)
            fg_total += len(mixed.merged_annotations)
            bg_total += max(budget - len(mixed.merged_annotations), 0)
            for inst, pasted in zip(mixed.merged_annotations, mixed.pasted_flags):
                if pasted:
                    pasted_total[inst.class_id - 1] += 1

        lab_idx = rng.choice(n_lab, size=min(config.labeled_batch, n_lab), replace=False)
        lab_images = [labeled.images[int(i)] for i in lab_idx]
        sup_targets: list[TrainingTarget] = []
        n_lab_instances = 0
        for img in lab_images:
            flags = [False] * len(img.ground_truth)
            sup_targets.extend(_image_targets(student, img.ground_truth, flags, budget))
            n_lab_instances += len(img.ground_truth)
        unsup_targets: list[TrainingTarget] = []
        n_pasted = 0
        for mixed in mixed_batch:
            unsup_targets.extend(
                _image_targets(student, mixed.merged_annotations, mixed.pasted_flags, budget)
            )
            n_pasted += sum(mixed.pasted_flags)
        sup_losses.append(loss_breakdown(sup_targets, "supervised"))
        unsup_losses.append(
            loss_breakdown(
                unsup_targets,
                "unsup_selective" if config.selective_supervision else "unsup_cls_only",
            )
        )

        exposure = np.zeros(k, dtype=np.int64)
        for img in lab_images:
            for inst in img.ground_truth:
                exposure[inst.class_id - 1] += 1
        for mixed in mixed_batch:
            for inst in mixed.merged_annotations:
                exposure[inst.class_id - 1] += 1
        # Labeled instances always carry regression supervision; pasted crops
        # join them only under selective supervision.
        reg_targets = n_lab_instances + (n_pasted if config.selective_supervision else 0)
        student = student_update(student, exposure, reg_targets, config.detector.lr)
        teacher = ema_update(teacher, student, config.detector.ema_alpha)
        exposure_total += exposure

    # Full-set teacher evaluation; also the pseudo-label source for refresh.
    eval_pseudo: dict[int | str, list[Prediction]] = {}
    raw_by_image = []
    gts_by_image = []
    matched = 0
    n_kept_total = 0
    n_gt_total = 0
    iou_sum = 0.0
    iou_count = 0
    pseudo_counts = np.zeros(k, dtype=np.int64)
    for img in unlabeled.images:
        raw = synth_detect(teacher, img, rng, class_weights=freq)
        label = (
            oracle_image_labels(img, config.oracle, rng, k)
            if mode != "one_stage"
            else None
        )
        kept = _apply_filter(raw, label, fcfg)
        eval_pseudo[img.id] = kept
        raw_by_image.append(raw)
        gts_by_image.append(list(img.ground_truth))
        result = match_greedy(kept, list(img.ground_truth), config.match_iou)
        matched += len(result.pairs)
        n_kept_total += len(kept)
        n_gt_total += len(img.ground_truth)
        iou_sum += sum(v for _, _, v in result.pairs)
        iou_count += len(result.pairs)
        for p in kept:
            pseudo_counts[p.class_id - 1] += 1

    truth_counts = class_counts(unlabeled)
    trace = EpochTrace(
        epoch=state.epoch,
        sup_loss=_mean_breakdown(sup_losses),
        unsup_loss=_mean_breakdown(unsup_losses),
        total_loss=_mean_breakdown(sup_losses).total
        + config.lambda_unsup * _mean_breakdown(unsup_losses).total,
        fg_ratio=fg_ratio(fg_total, bg_total),
        kld=class_kld(pseudo_counts, truth_counts) if truth_counts.sum() else 0.0,
        pseudo_acc=matched / n_kept_total if n_kept_total else 1.0,
        pseudo_rec=matched / n_gt_total if n_gt_total else 1.0,
        box_miou=iou_sum / iou_count if iou_count else 0.0,
        ap50=average_precision(raw_by_image, gts_by_image, 0.5),
        ap5095=ap_50_95(raw_by_image, gts_by_image),
        n_pseudo=n_kept_total,
        n_u=bank.n_pseudo,
        pr=tuple(float(v) for v in pr),
        mu=dist.mu,
        class_exposure=tuple(int(c) for c in exposure_total),
        pasted_counts=tuple(int(c) for c in pasted_total),
    )
    bank = refresh_pseudo_bank(bank, eval_pseudo, config.refresh_period, state.epoch)
    new_state = LoopState(
        teacher=teacher,
        student=student,
        bank=bank,
        labeled=labeled,
        unlabeled=unlabeled,
        epoch=state.epoch + 1,
    )
    return new_state, trace


def run_experiment(config: ExperimentConfig, dataset: Dataset) -> RunReport:
    """Split, pretrain, run all mutual-learning epochs and assemble the report.

    Identical config and dataset give identical reports, byte for byte once
    serialized.
    """
    if not dataset.images:
        raise ConfigError("experiment needs a non-empty dataset")
    seed = config.seed
    labeled, unlabeled = split_standard(
        dataset, config.split_fraction, derive_seed(seed, "split")
    )
    if not labeled.images or not unlabeled.images:
        raise ConfigError(
            "split produced an empty side; adjust split_fraction or dataset size"
        )

    student = pretrain(config, labeled, substream(seed, "pretrain"))
    teacher = student
    bank = build_labeled_bank(labeled)
    state = LoopState(
        teacher=teacher, student=student, bank=bank, labeled=labeled, unlabeled=unlabeled
    )

    traces: list[EpochTrace] = []
    for epoch in range(config.epochs - config.pretrain_epochs):
        state, trace = run_epoch(state, config, substream(seed, "epoch", epoch))
        traces.append(trace)

    summary: dict[str, Any] = {
        "epochs_run": len(traces),
        "pretrain_epochs": config.pretrain_epochs,
        "n_labeled_images": len(labeled.images),
        "n_unlabeled_images": len(unlabeled.images),
        "n_labeled_instances": int(class_counts(labeled).sum()),
    }
    if traces:
        final = traces[-1]
        summary["final"] = {
            column: getattr(final, column) for column in EPOCH_CSV_COLUMNS if column != "epoch"
        }

    return RunReport(
        config=config.to_dict(),
        seed=seed,
        categories=tuple(
            {"id": c.id, "name": c.name, "source_id": c.source_id}
            for c in dataset.categories
        ),
        traces=tuple(traces),
        summary=summary,
    )
