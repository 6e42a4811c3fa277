"""Common-space projection, range normalisation and cross-modal interaction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor

NORMALIZATIONS = ("tanh", "gauss")
INTERACTIONS = ("mul", "sub", "concat")
GAUSS_EPS = 1e-6


@dataclass
class ProjectionParams:
    w_query: Tensor  # (d, d)
    b_query: Tensor
    w_video: Tensor  # (d, d)
    b_video: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"w_query": self.w_query, "b_query": self.b_query, "w_video": self.w_video, "b_video": self.b_video}


@dataclass(frozen=True)
class InteractionConfig:
    normalization: str = "tanh"
    kind: str = "mul"

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}")
        if self.kind not in INTERACTIONS:
            raise ValueError(f"interaction must be one of {INTERACTIONS}, got {self.kind!r}")

    @property
    def variant(self) -> str:
        """Two-letter tag: d/s for mul/sub, t/g for tanh/gauss."""
        if self.kind == "concat":
            return "concat"
        return {"mul": "d", "sub": "s"}[self.kind] + self.normalization[0]


def init_projection(rng: np.random.Generator, d: int) -> ProjectionParams:
    bound = 1.0 / np.sqrt(d)
    return ProjectionParams(
        Tensor(rng.uniform(-bound, bound, (d, d)), requires_grad=True),
        Tensor(np.zeros(d), requires_grad=True),
        Tensor(rng.uniform(-bound, bound, (d, d)), requires_grad=True),
        Tensor(np.zeros(d), requires_grad=True),
    )


def gauss_normalize(x: Tensor) -> Tensor:
    """Standardise each row: (x - mean) / (population std + 1e-6)."""
    centred = x - nx.mean(x, axis=-1, keepdims=True)
    return centred / (nx.sqrt(nx.var(x, axis=-1, keepdims=True)) + GAUSS_EPS)


def project_normalize(states: Tensor, w: Tensor, b: Tensor, mode: str) -> Tensor:
    z = nx.matmul(states, w) + b
    if mode == "tanh":
        return nx.tanh(z)
    if mode == "gauss":
        return gauss_normalize(z)
    raise ValueError(f"unknown normalization {mode!r}")


def interact(video_hat: Tensor, query_hat: Tensor, kind: str) -> Tensor:
    if video_hat.shape != query_hat.shape:
        raise nx.ShapeError(f"interact: shapes {video_hat.shape} and {query_hat.shape} differ")
    if kind == "mul":
        return video_hat * query_hat
    if kind == "sub":
        return video_hat - query_hat
    if kind == "concat":
        return nx.concat([video_hat, query_hat], axis=-1)
    raise ValueError(f"unknown interaction {kind!r}")


def cross_features(
    video: Tensor, query_summary: Tensor, params: ProjectionParams, cfg: InteractionConfig
) -> Tensor:
    v_hat = project_normalize(video, params.w_video, params.b_video, cfg.normalization)
    q_hat = project_normalize(query_summary, params.w_query, params.b_query, cfg.normalization)
    return interact(v_hat, q_hat, cfg.kind)
