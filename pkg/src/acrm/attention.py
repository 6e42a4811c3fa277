"""Frame-by-word attention producing a frame-specific query summary."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass
class AttentionParams:
    w_word: Tensor  # (d, d_a), applied to word states
    w_frame: Tensor  # (d, d_a), applied to frame states; never shared with the projection
    bias: Tensor  # (d_a,)
    w_score: Tensor  # (d_a,)

    def tensors(self) -> dict[str, Tensor]:
        return {"w_word": self.w_word, "w_frame": self.w_frame, "bias": self.bias, "w_score": self.w_score}


@dataclass
class AttentionResult:
    summary: Tensor  # (..., T, d)
    weights: Tensor  # (..., T, m), rows sum to one
    scores: Tensor  # (..., T, m)


def init_attention(rng: np.random.Generator, d: int, d_a: int | None = None) -> AttentionParams:
    d_a = d if d_a is None else d_a
    if d_a <= 0:
        raise ValueError("attention width must be positive")
    bound = 1.0 / np.sqrt(d)
    return AttentionParams(
        Tensor(rng.uniform(-bound, bound, (d, d_a)), requires_grad=True),
        Tensor(rng.uniform(-bound, bound, (d, d_a)), requires_grad=True),
        Tensor(np.zeros(d_a), requires_grad=True),
        Tensor(rng.uniform(-1 / np.sqrt(d_a), 1 / np.sqrt(d_a), d_a), requires_grad=True),
    )


def attend(
    video: Tensor,
    query: Tensor,
    params: AttentionParams,
    query_mask: np.ndarray | None = None,
) -> AttentionResult:
    """Score every (frame, word) pair and pool word states per frame.

    ``video`` is (T, d) or (B, T, d); ``query`` is (m, d) or (B, m, d).
    ``query_mask`` (B, m) excludes padded words from the softmax.

        score[t, j] = w_score . tanh(W_word q_j + W_frame v_t + bias)
        weights[t]  = softmax(score[t])
        summary[t]  = sum_j weights[t, j] q_j
    """
    if query.shape[-2] == 0:
        raise ValueError("attention over an empty query")
    if video.shape[-1] != query.shape[-1]:
        raise nx.ShapeError(f"frame states {video.shape} and word states {query.shape} differ in d")
    single = video.ndim == 2
    if single:
        video = nx.reshape(video, (1,) + video.shape)
        query = nx.reshape(query, (1,) + query.shape)
    B, T, _ = video.shape
    m = query.shape[1]
    d_a = params.bias.shape[0]
    words = nx.reshape(nx.matmul(query, params.w_word), (B, 1, m, d_a))
    frames = nx.reshape(nx.matmul(video, params.w_frame), (B, T, 1, d_a))
    hidden = nx.tanh(words + frames + params.bias)
    scores = nx.matmul(hidden, params.w_score)  # (B, T, m)
    mask = None if query_mask is None else np.asarray(query_mask, dtype=bool)[:, None, :]
    weights = nx.softmax(scores, axis=-1, mask=mask)
    summary = nx.matmul(weights, query)
    if single:
        return AttentionResult(
            nx.reshape(summary, summary.shape[1:]),
            nx.reshape(weights, weights.shape[1:]),
            nx.reshape(scores, scores.shape[1:]),
        )
    return AttentionResult(summary, weights, scores)


def mean_pool_query(query: Tensor, T: int, query_mask: np.ndarray | None = None) -> Tensor:
    """Average word states and repeat the result for each of ``T`` frames."""
    if query.shape[-2] == 0:
        raise ValueError("mean pooling over an empty query")
    if query.ndim == 2:
        pooled = nx.mean(query, axis=0, keepdims=True)
        return pooled + Tensor(np.zeros((T, 1)))
    mask = None if query_mask is None else np.asarray(query_mask, dtype=np.float64)[:, :, None]
    pooled = nx.mean(query, axis=1, keepdims=True, mask=mask)  # (B, 1, d)
    return pooled + Tensor(np.zeros((1, T, 1)))
