"""Bidirectional LSTM encoders for frame features and word sequences."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor

PAD, UNK = "<pad>", "<unk>"


@dataclass
class LstmParams:
    w_in: Tensor  # (n_in, 4h), gate blocks [i, f, g, o]
    w_rec: Tensor  # (h, 4h)
    bias: Tensor  # (4h,)

    @property
    def hidden(self) -> int:
        return self.w_rec.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_in": self.w_in, "w_rec": self.w_rec, "bias": self.bias}


@dataclass
class BiLstmParams:
    fwd: LstmParams
    bwd: LstmParams

    @property
    def out_dim(self) -> int:
        return self.fwd.hidden + self.bwd.hidden

    def tensors(self) -> dict[str, Tensor]:
        out = {f"fwd.{k}": v for k, v in self.fwd.tensors().items()}
        out.update({f"bwd.{k}": v for k, v in self.bwd.tensors().items()})
        return out


def init_lstm(rng: np.random.Generator, n_in: int, hidden: int) -> LstmParams:
    # forget-gate bias starts at 1 so early gradients survive long sequences
    bound = 1.0 / np.sqrt(hidden)
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0
    return LstmParams(
        Tensor(rng.uniform(-bound, bound, (n_in, 4 * hidden)), requires_grad=True),
        Tensor(rng.uniform(-bound, bound, (hidden, 4 * hidden)), requires_grad=True),
        Tensor(bias, requires_grad=True),
    )


def init_bilstm(rng: np.random.Generator, n_in: int, d: int) -> BiLstmParams:
    if d % 2:
        raise ValueError(f"BiLSTM output size must be even, got {d}")
    return BiLstmParams(init_lstm(rng, n_in, d // 2), init_lstm(rng, n_in, d // 2))


def lstm_step(x: Tensor, h: Tensor, c: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM update built from graph primitives.

    The fused :func:`acrm.numerics.lstm_scan` is what the model runs; this
    composite is the readable reference it is tested against.
    """
    k = params.hidden
    z = nx.matmul(x, params.w_in) + nx.matmul(h, params.w_rec) + params.bias
    gate = lambda j: nx.narrow(z, j * k, (j + 1) * k)  # noqa: E731
    i = nx.sigmoid(gate(0))
    f = nx.sigmoid(gate(1))
    g = nx.tanh(gate(2))
    o = nx.sigmoid(gate(3))
    c_new = f * c + i * g
    return o * nx.tanh(c_new), c_new


def bilstm(x: Tensor, params: BiLstmParams, mask: np.ndarray | None = None) -> Tensor:
    """(B, L, n) -> (B, L, d); row t is [forward state t ; backward state t]."""
    p, q = params.fwd, params.bwd
    fwd = nx.lstm_scan(x, p.w_in, p.w_rec, p.bias, mask=mask)
    bwd = nx.lstm_scan(x, q.w_in, q.w_rec, q.bias, mask=mask, reverse=True)
    return nx.concat([fwd, bwd], axis=-1)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: identity at evaluation time and when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def _batched(x) -> tuple[Tensor, bool]:
    x = nx.as_tensor(x)
    if x.ndim == 2:
        return nx.reshape(x, (1,) + x.shape), True
    return x, False


def encode_video(
    features,
    params: BiLstmParams,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Encode frame features (T, d_in) or a padded batch (B, T, d_in)."""
    x, single = _batched(features)
    if x.shape[1] == 0:
        raise ValueError("cannot encode a video with zero frames")
    if x.shape[2] != params.fwd.w_in.shape[0]:
        raise nx.ShapeError(
            f"feature dim {x.shape[2]} does not match encoder input {params.fwd.w_in.shape[0]}"
        )
    h = bilstm(dropout(x, dropout_rate, training, rng), params, mask)
    return nx.reshape(h, h.shape[1:]) if single else h


@dataclass
class EmbeddingTable:
    """Frozen word vectors. Row 0 is padding (zeros), row 1 is the OOV row."""

    words: list[str]
    matrix: np.ndarray

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}
        if self.words[:2] != [PAD, UNK]:
            raise ValueError("embedding table must start with <pad>, <unk>")
        if self.matrix.shape[0] != len(self.words):
            raise ValueError("embedding rows do not match vocabulary")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def lookup(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, 1) for t in tokens]

    def embed(self, ids) -> Tensor:
        # a plain constant: no gradient ever reaches the table
        return Tensor(self.matrix[np.asarray(ids, dtype=np.intp)])


def encode_query(
    tokens,
    table: EmbeddingTable,
    params: BiLstmParams,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Encode a token list (words or ids) or a padded id batch (B, m)."""
    ids = np.asarray(tokens)
    if ids.size == 0:
        raise ValueError("cannot encode an empty query")
    if ids.dtype.kind in "US":
        ids = np.asarray(table.lookup(list(ids)))
    if np.any(ids >= len(table)) or np.any(ids < 0):
        raise IndexError("token id outside the vocabulary")
    single = ids.ndim == 1
    emb = table.embed(ids[None] if single else ids)
    h = bilstm(dropout(emb, dropout_rate, training, rng), params, mask)
    return nx.reshape(h, h.shape[1:]) if single else h


def load_embeddings(
    path: str | Path,
    vocabulary: Sequence[str],
    dim: int = 300,
    seed: int = 0,
) -> EmbeddingTable:
    """Read a GloVe-style text file restricted to ``vocabulary``.

    Words missing from the file get uniform(-0.1, 0.1) rows drawn in
    vocabulary order from ``seed``; the OOV row is read from the file when
    present (as written by :func:`save_embeddings`), otherwise drawn last.
    """
    vocab = [w for w in vocabulary if w not in (PAD, UNK)]
    if not vocab:
        raise ValueError("empty vocabulary")
    wanted = set(vocab) | {UNK}
    found: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected word + {dim} values, got {len(parts) - 1} values"
                )
            word = parts[0]
            if word not in wanted:
                continue
            try:
                found[word] = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed number ({exc})") from None
    rng = np.random.default_rng(seed)
    words = [PAD, UNK] + vocab
    matrix = np.zeros((len(words), dim))
    for row, word in enumerate(vocab, start=2):
        matrix[row] = found[word] if word in found else rng.uniform(-0.1, 0.1, dim)
    matrix[1] = found[UNK] if UNK in found else rng.uniform(-0.1, 0.1, dim)
    return EmbeddingTable(words, matrix)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write every row except padding; ``repr`` floats make reloading exact."""
    with open(path, "w", encoding="utf-8") as fh:
        for word, row in zip(table.words[1:], table.matrix[1:]):
            fh.write(word + " " + " ".join(repr(float(v)) for v in row) + "\n")
