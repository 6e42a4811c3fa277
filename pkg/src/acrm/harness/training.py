"""Training loop with early stopping, batched evaluation and prediction."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import numerics as nx
from ..data import DatasetSplit, Instance, index_to_span
from ..encoders import EmbeddingTable
from ..model import ACRM, make_batch
from ..prediction import infer_top_k
from .checkpoint import Checkpoint
from .config import ModelConfig
from .metrics import EvalReport, evaluate

log = logging.getLogger(__name__)


class TrainingError(ArithmeticError):
    """Raised on a non-finite loss or gradient; carries the offending batch ids."""

    def __init__(self, message: str, ids: Sequence[str] = ()):
        super().__init__(message)
        self.ids = list(ids)


@dataclass
class ScoredInstance:
    candidates: list[tuple[int, int, float]]  # ranked (start, end, score)
    start_logits: np.ndarray
    end_logits: np.ndarray
    internal_logits: np.ndarray
    attention: np.ndarray | None  # (T, m)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_report: EvalReport | None = None


def quantize_table(table: EmbeddingTable) -> EmbeddingTable:
    # checkpoints hold float32, so the live table is rounded once up front
    return EmbeddingTable(list(table.words), table.matrix.astype(np.float32).astype(np.float64))


def to_checkpoint(model: ACRM, meta: dict | None = None) -> Checkpoint:
    tensors = {k: p.data for k, p in model.parameters().items()}
    tensors["embedding"] = model.table.matrix
    return Checkpoint.quantized(model.cfg, model.d_in, model.table.words, tensors, meta)


def from_checkpoint(ckpt: Checkpoint) -> ACRM:
    table = EmbeddingTable(list(ckpt.vocabulary), ckpt.tensors["embedding"])
    model = ACRM(ckpt.config, ckpt.d_in, table, np.random.default_rng(0))
    model.load_parameters({k: v for k, v in ckpt.tensors.items() if k != "embedding"})
    return model


def score_instances(
    model: ACRM, instances: Sequence[Instance], k: int = 1, batch_size: int = 64
) -> list[ScoredInstance]:
    """Forward pass in evaluation mode plus top-k decoding over valid frames."""
    out = []
    with nx.no_grad():
        for lo in range(0, len(instances), batch_size):
            chunk = instances[lo:lo + batch_size]
            batch = make_batch(chunk, model.table)
            fwd = model.forward(batch, training=False)
            for b, inst in enumerate(chunk):
                T, m = inst.T, len(inst.tokens)
                es = fwd.logits.start.data[b, :T]
                ee = fwd.logits.end.data[b, :T]
                cands = [(p.start, p.end, p.score) for p in infer_top_k(es, ee, k)]
                att = None if fwd.attention is None else fwd.attention.data[b, :T, :m].copy()
                out.append(ScoredInstance(cands, es.copy(), ee.copy(), fwd.logits.internal.data[b, :T].copy(), att))
    return out


def evaluate_model(model: ACRM, split: DatasetSplit | Sequence[Instance], batch_size: int = 64) -> EvalReport:
    instances = split.instances if isinstance(split, DatasetSplit) else list(split)
    cfg = model.cfg
    scored = score_instances(model, instances, max(cfg.topk), batch_size)
    preds = [[(s, e) for s, e, _ in sc.candidates] for sc in scored]
    gts = [(inst.gt_start_idx, inst.gt_end_idx) for inst in instances]
    report = evaluate(preds, gts, cfg.topk, cfg.iou_thresholds)
    for rec, inst in zip(report.records, instances):
        rec["video"] = inst.video_id
        rec["query"] = inst.raw_query
    return report


def prediction_record(inst: Instance, sc: ScoredInstance, dump_scores: bool = False, dump_attention: bool = False) -> dict:
    s, e, score = sc.candidates[0]
    start_s, end_s = index_to_span(s, e, inst.T, inst.duration)
    rec = {
        "video": inst.video_id,
        "query": inst.raw_query,
        "pred_start_idx": s,
        "pred_end_idx": e,
        "pred_start_s": start_s,
        "pred_end_s": end_s,
        "score": score,
    }
    if dump_scores:
        rec["scores"] = {
            "start": sc.start_logits.tolist(),
            "end": sc.end_logits.tolist(),
            "internal": sc.internal_logits.tolist(),
            "p_start": _softmax(sc.start_logits).tolist(),
            "p_end": _softmax(sc.end_logits).tolist(),
            "p_internal": _softmax(sc.internal_logits).tolist(),
        }
    if dump_attention and sc.attention is not None:
        rec["attention"] = {"tokens": inst.tokens, "weights": sc.attention.tolist()}
    return rec


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def train(
    cfg: ModelConfig,
    train_split: DatasetSplit,
    eval_split: DatasetSplit,
    table: EmbeddingTable,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam on L = L_c + lam * L_I with per-epoch evaluation and early stopping on mIoU.

    Shuffling and dropout masks derive from (seed, epoch), so a run is
    reproducible given the config.
    """
    if not train_split.instances or not eval_split.instances:
        raise ValueError("training and evaluation splits must be non-empty")
    table = quantize_table(table)
    model = ACRM(cfg, train_split.d_in, table, np.random.default_rng(cfg.seed))
    params = model.parameters()
    state = nx.AdamState(lr=cfg.lr)
    result = TrainResult(checkpoint=to_checkpoint(model, {"epoch": 0}))
    best_miou = -1.0
    stale = 0
    instances = train_split.instances
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(instances))
        drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
        sums = {"L_c": 0.0, "L_I": 0.0, "L": 0.0}
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [instances[i] for i in order[lo:lo + cfg.batch_size]]
            batch = make_batch(chunk, table)
            for p in params.values():
                p.grad = None
            losses = model.loss(batch, training=True, rng=drop_rng)
            if not np.isfinite(losses.total.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}", batch.ids)
            nx.backward(losses.total, leaves=params.values())
            try:
                nx.adam_step(params, {k: p.grad for k, p in params.items()}, state)
            except nx.NumericalError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}", batch.ids) from None
            w = len(chunk)
            sums["L_c"] += losses.boundary.item() * w
            sums["L_I"] += losses.internal.item() * w
            sums["L"] += losses.total.item() * w
        # score the float32 snapshot so the report matches what a reload would give
        snapshot = to_checkpoint(model, {"epoch": epoch})
        report = evaluate_model(from_checkpoint(snapshot), eval_split, cfg.batch_size)
        record = {"epoch": epoch, **{k: v / len(instances) for k, v in sums.items()}}
        record.update(report.to_dict(with_records=False))
        record["wall_time"] = time.perf_counter() - t0
        result.history.append(record)
        log.info("epoch %d  L=%.4f  L_c=%.4f  L_I=%.4f  mIoU=%.4f", epoch, record["L"], record["L_c"], record["L_I"], report.miou)
        if on_epoch is not None:
            on_epoch(record)
        if report.miou > best_miou:
            best_miou = report.miou
            stale = 0
            result.checkpoint = snapshot
            result.best_epoch = epoch
            result.best_report = report
        else:
            stale += 1
        if stale >= cfg.patience:
            break
    return result
