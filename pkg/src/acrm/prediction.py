"""Start/end/internal-frame heads, training losses and boundary decoding."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import BiLstmParams, bilstm, dropout, init_bilstm
from .numerics import Tensor

log = logging.getLogger(__name__)

HEADS = ("start", "end", "internal")


@dataclass
class MlpParams:
    w_hidden: Tensor  # (d, hidden)
    b_hidden: Tensor
    w_out: Tensor  # (hidden,)
    b_out: Tensor  # scalar

    def tensors(self) -> dict[str, Tensor]:
        return {"w_hidden": self.w_hidden, "b_hidden": self.b_hidden, "w_out": self.w_out, "b_out": self.b_out}


@dataclass
class PredictorParams:
    lstms: dict[str, BiLstmParams]  # one per head, or a single "shared" entry when tied
    mlps: dict[str, MlpParams]

    @property
    def tied(self) -> bool:
        return "shared" in self.lstms

    def lstm_for(self, head: str) -> BiLstmParams:
        return self.lstms["shared"] if self.tied else self.lstms[head]

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for name, p in self.lstms.items():
            out.update({f"lstm.{name}.{k}": v for k, v in p.tensors().items()})
        for name, p in self.mlps.items():
            out.update({f"mlp.{name}.{k}": v for k, v in p.tensors().items()})
        return out


@dataclass
class LogitTriple:
    start: Tensor  # (T,) or (B, T)
    end: Tensor
    internal: Tensor
    mask: np.ndarray | None = None  # (B, T) valid frames


@dataclass
class BoundaryPrediction:
    start: int
    end: int
    score: float


@dataclass
class LossValues:
    boundary: Tensor
    internal: Tensor
    total: Tensor
    lam: float
    degenerate: int = 0


def init_mlp(rng: np.random.Generator, d: int, hidden: int) -> MlpParams:
    b1, b2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(hidden)
    return MlpParams(
        Tensor(rng.uniform(-b1, b1, (d, hidden)), requires_grad=True),
        Tensor(np.zeros(hidden), requires_grad=True),
        Tensor(rng.uniform(-b2, b2, hidden), requires_grad=True),
        Tensor(np.zeros(()), requires_grad=True),
    )


def init_predictor(
    rng: np.random.Generator, n_in: int, d: int, hidden: int = 256, tied: bool = False
) -> PredictorParams:
    names = ("shared",) if tied else HEADS
    lstms = {name: init_bilstm(rng, n_in, d) for name in names}
    mlps = {head: init_mlp(rng, d, hidden) for head in HEADS}
    return PredictorParams(lstms, mlps)


def mlp(h: Tensor, p: MlpParams) -> Tensor:
    return nx.matmul(nx.tanh(nx.matmul(h, p.w_hidden) + p.b_hidden), p.w_out) + p.b_out


def predict_logits(
    cross: Tensor,
    params: PredictorParams,
    mask: np.ndarray | None = None,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> LogitTriple:
    """BiLSTM + MLP per head over cross features (T, n) or (B, T, n)."""
    single = cross.ndim == 2
    x = nx.reshape(cross, (1,) + cross.shape) if single else cross
    if x.shape[1] < 1:
        raise ValueError("cannot predict over zero frames")
    states: dict[str, Tensor] = {}
    out = {}
    for head in HEADS:
        key = "shared" if params.tied else head
        if key not in states:
            states[key] = bilstm(dropout(x, dropout_rate, training, rng), params.lstms[key], mask)
        e = mlp(states[key], params.mlps[head])
        out[head] = nx.reshape(e, e.shape[1:]) if single else e
    return LogitTriple(out["start"], out["end"], out["internal"], mask)


def _as_batch(logits: Tensor, gt_s, gt_e, mask):
    gt_s = np.atleast_1d(np.asarray(gt_s, dtype=np.intp))
    gt_e = np.atleast_1d(np.asarray(gt_e, dtype=np.intp))
    if logits.ndim == 1:
        logits = nx.reshape(logits, (1, logits.shape[0]))
    B, T = logits.shape
    valid = np.ones((B, T), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    lengths = valid.sum(axis=1)
    if gt_s.shape != (B,) or gt_e.shape != (B,):
        raise nx.ShapeError(f"ground truth for {gt_s.shape[0]} instances vs {B} logit rows")
    if np.any(gt_s < 0) or np.any(gt_e >= lengths) or np.any(gt_s > gt_e):
        raise IndexError(f"ground-truth indices {list(zip(gt_s, gt_e))} outside valid frames {list(lengths)}")
    return logits, gt_s, gt_e, valid


def boundary_loss(e_s: Tensor, e_e: Tensor, gt_s, gt_e, mask=None) -> Tensor:
    """Mean over instances of -(log P_s(gt_s) + log P_e(gt_e))."""
    e_s, gt_s, gt_e, valid = _as_batch(e_s, gt_s, gt_e, mask)
    e_e = nx.reshape(e_e, e_s.shape)
    B, T = e_s.shape
    pick_s = np.zeros((B, T))
    pick_s[np.arange(B), gt_s] = 1.0
    pick_e = np.zeros((B, T))
    pick_e[np.arange(B), gt_e] = 1.0
    ll = nx.log_softmax(e_s, mask=valid) * pick_s + nx.log_softmax(e_e, mask=valid) * pick_e
    return nx.sum(ll) * (-1.0 / B)


def internal_weights(gt_s, gt_e, T: int, strict_mean: bool = False) -> tuple[np.ndarray, int]:
    """Per-frame weights of the internal-frame log-likelihood and the degenerate count.

    Frames gt_s..gt_e inclusive are summed and divided by (gt_e - gt_s), or by
    the term count when ``strict_mean``. Single-frame moments fall back to a
    denominator of 1.
    """
    B = len(gt_s)
    w = np.zeros((B, T))
    degenerate = 0
    for b, (s, e) in enumerate(zip(gt_s, gt_e)):
        denom = (e - s + 1) if strict_mean else (e - s)
        if denom == 0:
            denom = 1
            degenerate += 1
        w[b, s:e + 1] = 1.0 / denom
    return w, degenerate


def internal_loss(e_f: Tensor, gt_s, gt_e, mask=None, strict_mean: bool = False) -> Tensor:
    e_f, gt_s, gt_e, valid = _as_batch(e_f, gt_s, gt_e, mask)
    B, T = e_f.shape
    w, degenerate = internal_weights(gt_s, gt_e, T, strict_mean)
    if degenerate:
        log.debug("%d single-frame moment(s): internal loss denominator set to 1", degenerate)
    return nx.sum(nx.log_softmax(e_f, mask=valid) * w) * (-1.0 / B)


def total_loss(l_c: Tensor, l_i: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return l_c + l_i * lam


def compute_losses(logits: LogitTriple, gt_s, gt_e, lam: float, strict_mean: bool = False) -> LossValues:
    l_c = boundary_loss(logits.start, logits.end, gt_s, gt_e, logits.mask)
    l_i = internal_loss(logits.internal, gt_s, gt_e, logits.mask, strict_mean)
    degenerate = int(np.sum(np.atleast_1d(gt_s) == np.atleast_1d(gt_e))) if not strict_mean else 0
    return LossValues(l_c, l_i, total_loss(l_c, l_i, lam), lam, degenerate)


def infer_boundaries(e_s, e_e) -> BoundaryPrediction:
    """argmax e_s[ts] + e_e[te] over ts <= te in one pass.

    Ties go to the smallest ts, then the smallest te.
    """
    e_s = np.asarray(e_s, dtype=np.float64)
    e_e = np.asarray(e_e, dtype=np.float64)
    if e_s.shape != e_e.shape or e_s.ndim != 1 or e_s.size == 0:
        raise nx.ShapeError(f"infer_boundaries needs equal non-empty vectors, got {e_s.shape}, {e_e.shape}")
    prefix_arg = 0
    best = (e_s[0] + e_e[0], 0, 0)
    for te in range(e_s.shape[0]):
        if e_s[te] > e_s[prefix_arg]:
            prefix_arg = te
        score = e_s[prefix_arg] + e_e[te]
        if score > best[0] or (score == best[0] and prefix_arg < best[1]):
            best = (score, prefix_arg, te)
    return BoundaryPrediction(best[1], best[2], float(best[0]))


def infer_top_k(e_s, e_e, k: int) -> list[BoundaryPrediction]:
    """The ``k`` best feasible (ts, te) pairs, ordered by score then ts then te."""
    if k < 1:
        raise ValueError("k must be at least 1")
    e_s = np.asarray(e_s, dtype=np.float64)
    e_e = np.asarray(e_e, dtype=np.float64)
    if k == 1:
        return [infer_boundaries(e_s, e_e)]
    T = e_s.shape[0]
    ts, te = np.triu_indices(T)
    scores = e_s[ts] + e_e[te]
    order = np.lexsort((te, ts, -scores))[:k]
    return [BoundaryPrediction(int(ts[i]), int(te[i]), float(scores[i])) for i in order]
