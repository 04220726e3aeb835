"""Training, evaluation and ablation drivers."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import DataError, NumericalError
from ..fusion_net import OccupancyFlowNet
from ..metrics import METRIC_NAMES, TABLE_COLUMNS, MetricReport, evaluate
from ..objective import total_loss
from ..raster_gt import save_ofgrid
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, dump_config
from .data import TARGET_KEYS, batches, encode_scenes, generate_scenes

log = logging.getLogger(__name__)

STEP_COLUMNS = ("epoch", "step", "lr", "l_obs", "l_occ", "l_flow", "total")
METRIC_COLUMNS = ("split", "variant", "waypoint") + METRIC_NAMES


def set_determinism(seed: int, threads: int = 1) -> None:
    torch.manual_seed(seed)
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def build_model(cfg: ExperimentConfig) -> OccupancyFlowNet:
    return OccupancyFlowNet(cfg.backbone, cfg.fusion)


def fmt(x: float) -> str:
    return f"{x:.9g}"


def metric_rows(report: MetricReport, split: str, variant: str) -> list[dict]:
    rows = [{"split": split, "variant": variant, "waypoint": "all", **{k: fmt(v) for k, v in report.headline().items()}}]
    for i in range(len(report.per_waypoint["epe"])):
        rows.append(
            {"split": split, "variant": variant, "waypoint": str(i + 1),
             **{k: fmt(report.per_waypoint[k][i]) for k in METRIC_NAMES}}
        )
    return rows


def write_csv(path, columns, rows, append=False):
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns))
        if new:
            w.writeheader()
        w.writerows(rows)


@dataclass
class TrainResult:
    model: OccupancyFlowNet
    checkpoint: Checkpoint
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    best_fg_auc: float = float("nan")
    best_path: Path | None = None


def _model_inputs(batch):
    return batch["raster"], batch["vectors"], batch["vectors_valid"]


def predict(model, items, batch_size=4):
    model.eval()
    preds, targets = [], []
    with torch.no_grad():
        for batch in batches(items, batch_size):
            preds.append(model(*_model_inputs(batch)))
            targets.append({k: batch[k] for k in TARGET_KEYS})
    return preds, targets


def evaluate_items(model, items, cfg: ExperimentConfig, batch_size=4) -> MetricReport:
    if not items:
        raise DataError("cannot evaluate an empty scene list")
    preds, targets = predict(model, items, batch_size)
    return evaluate(preds, targets, cfg.grid)


def _dump_bad_batch(out_dir, batch, step):
    if out_dir is None:
        return None
    dump = Path(out_dir) / f"nan_batch_step{step}"
    dump.mkdir(parents=True, exist_ok=True)
    for k, v in batch.items():
        save_ofgrid(dump / f"{k}.ofgrid", v.numpy(), layout=k)
    return dump


def make_checkpoint(model, optimizer, cfg, epoch, data_rng, extra=None) -> Checkpoint:
    return Checkpoint(
        config=cfg,
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        optimizer_state=optimizer.state_dict() if optimizer is not None else None,
        epoch=epoch,
        rng={"torch": torch.get_rng_state(), "numpy": data_rng.bit_generator.state},
        extra=extra or {},
    )


def train(cfg: ExperimentConfig, train_scenes=None, val_scenes=None, out_dir=None,
          train_items=None, val_items=None) -> TrainResult:
    """Adam with a step-decayed learning rate; single writer, fixed data order per seed."""
    tc = cfg.train
    set_determinism(tc.seed, tc.threads)
    if train_items is None:
        if not train_scenes:
            raise DataError("training needs at least one scene")
        train_items = encode_scenes(train_scenes, cfg)
    if val_items is None and val_scenes:
        val_items = encode_scenes(val_scenes, cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.cfg").write_text(dump_config(cfg))
        for name in ("steps.csv", "epochs.csv"):
            (out_dir / name).unlink(missing_ok=True)

    model = build_model(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=tc.lr_init)
    data_rng = np.random.default_rng(tc.seed)
    result = TrainResult(model=model, checkpoint=None)
    step = 0
    done = False
    for epoch in range(tc.epochs):
        lr = tc.lr_at(epoch)
        for g in optimizer.param_groups:
            g["lr"] = lr
        model.train()
        order = data_rng.permutation(len(train_items))
        step_rows = []
        for batch in batches(train_items, tc.batch_size, order):
            pred = model(*_model_inputs(batch))
            losses = total_loss(pred, batch, cfg.loss)
            if not torch.isfinite(losses.total):
                dump = _dump_bad_batch(out_dir, batch, step)
                raise NumericalError(f"non-finite loss at epoch {epoch} step {step}: {losses.as_floats()} (batch dumped to {dump})")
            optimizer.zero_grad(set_to_none=True)
            losses.total.backward()
            optimizer.step()
            row = {"epoch": epoch, "step": step, "lr": lr, **losses.as_floats()}
            result.steps.append(row)
            step_rows.append({k: (fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
            step += 1
            if tc.max_steps and step >= tc.max_steps:
                done = True
                break
        if out_dir is not None:
            write_csv(out_dir / "steps.csv", STEP_COLUMNS, step_rows, append=True)
        last_epoch = epoch == tc.epochs - 1 or done
        if val_items and ((epoch + 1) % tc.eval_every_epochs == 0 or last_epoch):
            report = evaluate_items(model, val_items, cfg, tc.batch_size)
            result.epochs.append({"epoch": epoch, **report.headline()})
            log.info("epoch %d val fg_auc %.4f", epoch, report.fg_auc)
            if out_dir is not None:
                rows = [{"epoch": epoch, **r} for r in metric_rows(report, "val", tc.variant)]
                write_csv(out_dir / "epochs.csv", ("epoch",) + METRIC_COLUMNS, rows, append=True)
            if not report.fg_auc <= result.best_fg_auc:  # also true while best is nan
                result.best_fg_auc = report.fg_auc
                if out_dir is not None:
                    ck = make_checkpoint(model, optimizer, cfg, epoch, data_rng, {"val_fg_auc": report.fg_auc})
                    result.best_path = out_dir / "best.ckpt"
                    save_checkpoint(result.best_path, ck)
        if done:
            break
    result.checkpoint = make_checkpoint(model, optimizer, cfg, epoch, data_rng)
    if out_dir is not None:
        save_checkpoint(out_dir / "last.ckpt", result.checkpoint)
    return result


def model_from_checkpoint(ckpt: Checkpoint) -> OccupancyFlowNet:
    model = build_model(ckpt.config)
    model.load_state_dict(ckpt.model_state, strict=True)
    model.eval()
    return model


def evaluate_checkpoint(ckpt, scenes, batch_size=None, expected=None) -> MetricReport:
    if not scenes:
        raise DataError("cannot evaluate an empty scene list")
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt, expected)
    model = model_from_checkpoint(ckpt)
    items = encode_scenes(scenes, ckpt.config)
    return evaluate_items(model, items, ckpt.config, batch_size or ckpt.config.train.batch_size)


def ablation_table(reports: dict) -> tuple[list[str], list[list[str]]]:
    """Rows per variant plus a delta row (second minus first)."""
    header = ["Model", *TABLE_COLUMNS]
    names = list(reports)
    rows = [[name, *(f"{reports[name].headline()[m]:.4f}" for m in METRIC_NAMES)] for name in names]
    a, b = reports[names[0]].headline(), reports[names[-1]].headline()
    rows.append([f"delta ({names[-1]} - {names[0]})", *(f"{b[m] - a[m]:+.4f}" for m in METRIC_NAMES)])
    return header, rows


def markdown_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def ablate(cfg: ExperimentConfig, out_dir, train_scenes=None, val_scenes=None, variants=("vgg_only", "fused")):
    """Train each variant with identical seed and data, then tabulate validation metrics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if train_scenes is None:
        train_scenes = generate_scenes(cfg.recipe, cfg.data.num_train)
    if val_scenes is None:
        val_scenes = generate_scenes(cfg.recipe, cfg.data.num_val, seed_offset=cfg.data.val_seed_offset)
    train_items = encode_scenes(train_scenes, cfg)
    val_items = encode_scenes(val_scenes, cfg)
    reports, labels = {}, []
    for i, variant in enumerate(variants):
        label = variant if variant not in labels else f"{variant}#{i}"
        labels.append(label)
        vcfg = cfg.with_variant(variant)
        res = train(vcfg, out_dir=out_dir / label, train_items=train_items, val_items=val_items)
        reports[label] = evaluate_items(res.model, val_items, vcfg, vcfg.train.batch_size)
    header, rows = ablation_table(reports)
    with open(out_dir / "ablation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    (out_dir / "ablation.md").write_text(markdown_table(header, rows))
    all_rows = []
    for label, rep in reports.items():
        all_rows += metric_rows(rep, "val", label)
    write_csv(out_dir / "metrics.csv", METRIC_COLUMNS, all_rows)
    return header, rows, reports


def lr_schedule(cfg: ExperimentConfig, epochs=None) -> list[float]:
    return [cfg.train.lr_at(e) for e in range(epochs or cfg.train.epochs)]

