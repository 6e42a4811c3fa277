"""Finite-difference check of the full training loss for every model variant."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..data import Instance
from ..encoders import PAD, UNK, EmbeddingTable
from ..model import ACRM, make_batch
from .config import ModelConfig

SUITE = {
    "dt": {"interaction": "mul", "normalization": "tanh"},
    "dg": {"interaction": "mul", "normalization": "gauss"},
    "st": {"interaction": "sub", "normalization": "tanh"},
    "sg": {"interaction": "sub", "normalization": "gauss"},
    "no_attention": {"attention": False},
    "tied_lstm": {"tied_lstm": True},
}


@dataclass
class GradCheckResult:
    variant: str
    trial: int
    max_error: float


def random_instance(rng: np.random.Generator, d_in: int, vocab: list[str], max_T: int = 6, max_m: int = 5) -> Instance:
    T = int(rng.integers(1, max_T + 1))
    m = int(rng.integers(1, max_m + 1))
    s = int(rng.integers(T))
    e = int(rng.integers(s, T))
    tokens = list(rng.choice(vocab, size=m))
    return Instance("gc", rng.normal(size=(T, d_in)), tokens, " ".join(tokens), float(T), s, e + 0.5, s, e)


def tiny_model(rng: np.random.Generator, overrides: dict, d: int = 8, d_in: int = 4, embed_dim: int = 5) -> ACRM:
    vocab = [f"w{i}" for i in range(6)]
    table = EmbeddingTable([PAD, UNK] + vocab, np.vstack([np.zeros(embed_dim), rng.normal(size=(7, embed_dim))]))
    cfg = ModelConfig(d=d, predictor_hidden=8, embed_dim=embed_dim, dropout=0.0, **overrides)
    model = ACRM(cfg, d_in, table, rng)
    # move off the initialisation (zero biases etc.) to a generic point
    for p in model.parameters().values():
        p.data = np.asarray(p.data + rng.normal(scale=0.3, size=p.shape))
    return model


def check_model(model: ACRM, inst: Instance, rng: np.random.Generator, per_tensor: int = 4, eps: float = 1e-5) -> float:
    batch = make_batch([inst], model.table)
    params = list(model.parameters().values())
    coords = []
    for k, p in enumerate(params):
        flat = rng.choice(p.data.size, size=min(per_tensor, p.data.size), replace=False)
        coords.extend((k, np.unravel_index(int(i), p.shape)) for i in flat)
    return nx.grad_check(lambda: model.loss(batch).total, params, eps=eps, coords=coords)


def run_gradcheck(trials: int = 20, seed: int = 0, variants=None, per_tensor: int = 4) -> list[GradCheckResult]:
    results = []
    for name in variants or SUITE:
        rng = np.random.default_rng([seed, sorted(SUITE).index(name)])
        for trial in range(trials):
            model = tiny_model(rng, SUITE[name])
            inst = random_instance(rng, model.d_in, model.table.words[2:])
            results.append(GradCheckResult(name, trial, check_model(model, inst, rng, per_tensor)))
    return results
