"""Full model assembly: encoders -> attention -> interaction -> heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .attention import AttentionParams, attend, init_attention, mean_pool_query
from .data import Instance
from .encoders import BiLstmParams, EmbeddingTable, bilstm, dropout, init_bilstm
from .harness.config import ModelConfig
from .interaction import ProjectionParams, cross_features, init_projection
from .numerics import Tensor
from .prediction import LogitTriple, LossValues, PredictorParams, compute_losses, init_predictor, predict_logits


@dataclass
class Batch:
    features: np.ndarray  # (B, T, d_in), zero padded
    frame_mask: np.ndarray  # (B, T) bool
    token_ids: np.ndarray  # (B, m), padded with 0
    word_mask: np.ndarray  # (B, m) bool
    gt_start: np.ndarray
    gt_end: np.ndarray
    ids: list[str]

    @property
    def lengths(self) -> np.ndarray:
        return self.frame_mask.sum(axis=1)


def make_batch(instances: Sequence[Instance], table: EmbeddingTable) -> Batch:
    B = len(instances)
    T = max(inst.T for inst in instances)
    m = max(len(inst.tokens) for inst in instances)
    d_in = instances[0].features.shape[1]
    feats = np.zeros((B, T, d_in))
    fmask = np.zeros((B, T), dtype=bool)
    tok = np.zeros((B, m), dtype=np.intp)
    wmask = np.zeros((B, m), dtype=bool)
    for b, inst in enumerate(instances):
        feats[b, :inst.T] = inst.features
        fmask[b, :inst.T] = True
        ids = table.lookup(inst.tokens)
        tok[b, :len(ids)] = ids
        wmask[b, :len(ids)] = True
    return Batch(
        feats, fmask, tok, wmask,
        np.array([inst.gt_start_idx for inst in instances], dtype=np.intp),
        np.array([inst.gt_end_idx for inst in instances], dtype=np.intp),
        [f"{inst.video_id}|{inst.raw_query}" for inst in instances],
    )


@dataclass
class Forward:
    logits: LogitTriple
    attention: Tensor | None  # (B, T, m) word weights per frame


class ACRM:
    """Parameters plus the forward pass of the moment localiser."""

    def __init__(self, cfg: ModelConfig, d_in: int, table: EmbeddingTable, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        if table.dim != cfg.embed_dim:
            raise ValueError(f"embedding dim {table.dim} != configured {cfg.embed_dim}")
        self.cfg = cfg
        self.d_in = d_in
        self.table = table
        d = cfg.d
        self.video: BiLstmParams = init_bilstm(rng, d_in, d)
        self.query: BiLstmParams = init_bilstm(rng, cfg.embed_dim, d)
        self.attn: AttentionParams | None = init_attention(rng, d, cfg.attention_width) if cfg.attention else None
        self.proj: ProjectionParams = init_projection(rng, d)
        cross_dim = 2 * d if cfg.interaction == "concat" else d
        self.heads: PredictorParams = init_predictor(rng, cross_dim, d, cfg.predictor_hidden, cfg.tied_lstm)
        assert self.video.out_dim == self.query.out_dim == d

    def parameters(self) -> dict[str, Tensor]:
        groups = {"video": self.video, "query": self.query, "proj": self.proj, "heads": self.heads}
        if self.attn is not None:
            groups["attn"] = self.attn
        return {f"{g}.{k}": v for g, p in groups.items() for k, v in p.tensors().items()}

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(values) != set(params):
            raise ValueError(
                f"parameter names differ: missing {sorted(set(params) - set(values))}, "
                f"unexpected {sorted(set(values) - set(params))}"
            )
        for name, p in params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: stored shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def forward(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> Forward:
        cfg = self.cfg
        rate = cfg.dropout if training else 0.0
        fmask, wmask = batch.frame_mask, batch.word_mask
        h_v = bilstm(dropout(Tensor(batch.features), rate, training, rng), self.video, fmask)
        words = self.table.embed(batch.token_ids)
        h_q = bilstm(dropout(words, rate, training, rng), self.query, wmask)
        T = h_v.shape[1]
        if self.attn is not None:
            att = attend(h_v, h_q, self.attn, wmask)
            summary, weights = att.summary, att.weights
        else:
            summary, weights = mean_pool_query(h_q, T, wmask), None
        cross = cross_features(h_v, summary, self.proj, cfg.interaction_config)
        logits = predict_logits(cross, self.heads, fmask, rate, training, rng)
        return Forward(logits, weights)

    def loss(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> LossValues:
        out = self.forward(batch, training, rng)
        return compute_losses(out.logits, batch.gt_start, batch.gt_end, self.cfg.lam, self.cfg.strict_mean)
