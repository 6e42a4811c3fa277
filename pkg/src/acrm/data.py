"""Annotation/feature loading, tokenisation and planted-moment synthetic data."""
from __future__ import annotations

import json
import logging
import math
import re
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoders import PAD, UNK, EmbeddingTable, save_embeddings

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"ACRMFEAT"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<8sIII")


class DataError(ValueError):
    pass


@dataclass
class Instance:
    video_id: str
    features: np.ndarray  # (T, d_in) float64
    tokens: list[str]
    raw_query: str
    duration: float
    gt_start_s: float
    gt_end_s: float
    gt_start_idx: int
    gt_end_idx: int

    @property
    def T(self) -> int:
        return self.features.shape[0]


@dataclass
class DatasetSplit:
    instances: list[Instance]
    vocabulary: list[str]
    d_in: int
    warnings: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.instances)


_STRIP = re.compile(r"^[^0-9a-z]+|[^0-9a-z]+$")


def tokenize(query: str) -> list[str]:
    """Lowercase, split on whitespace, trim non-alphanumerics at both ends."""
    tokens = [_STRIP.sub("", w) for w in query.lower().split()]
    tokens = [t for t in tokens if t]
    if not tokens:
        raise DataError(f"query {query!r} has no tokens")
    return tokens


def time_to_index(t: float, T: int, duration: float, warnings: Counter | None = None) -> int:
    if duration <= 0 or T < 1:
        raise DataError(f"need duration > 0 and T >= 1, got {duration}, {T}")
    if t < 0 or t > duration:
        if warnings is not None:
            warnings["time_clamped"] += 1
        t = min(max(t, 0.0), duration)
    return min(max(math.floor(t * T / duration), 0), T - 1)


def index_to_span(start_idx: int, end_idx: int, T: int, duration: float) -> tuple[float, float]:
    """Seconds covered by frames start_idx..end_idx as a half-open span."""
    return start_idx / T * duration, (end_idx + 1) / T * duration


# annotations ----------------------------------------------------------------

ANNOTATION_KEYS = ("video", "duration", "start", "end", "query")


def load_annotations(path: str | Path, strict: bool = False, warnings: Counter | None = None) -> list[dict]:
    """Read JSON-lines records with keys video, duration, start, end, query."""
    warnings = Counter() if warnings is None else warnings
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                missing = [k for k in ANNOTATION_KEYS if k not in rec]
                if missing:
                    raise DataError(f"missing key(s) {missing}")
                rec = {
                    "video": str(rec["video"]),
                    "duration": float(rec["duration"]),
                    "start": float(rec["start"]),
                    "end": float(rec["end"]),
                    "query": str(rec["query"]),
                }
                if rec["start"] > rec["end"]:
                    raise DataError(f"start {rec['start']} > end {rec['end']}")
                if rec["duration"] <= 0:
                    raise DataError(f"non-positive duration {rec['duration']}")
            except (json.JSONDecodeError, DataError, TypeError, ValueError) as exc:
                if strict:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
                warnings["bad_annotation"] += 1
                log.warning("%s:%d skipped: %s", path, lineno, exc)
                continue
            records.append(rec)
    if not records:
        warnings["empty_annotations"] += 1
        log.warning("%s: no usable annotations", path)
    return records


def write_annotations(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({k: rec[k] for k in ANNOTATION_KEYS}) + "\n")


# feature files --------------------------------------------------------------

def write_features(path: str | Path, frames: np.ndarray) -> None:
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise DataError(f"features must be a non-empty (T, d_in) matrix, got {frames.shape}")
    T, d_in = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, d_in))
        fh.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_features(path: str | Path, d_in: int | None = None) -> np.ndarray:
    """Load a feature file into a float64 (T, d_in) matrix."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header at offset {len(raw)}")
    magic, version, T, dim = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at offset 0")
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported version {version} at offset 8")
    if T == 0:
        raise DataError(f"{path}: zero frames in header at offset 12")
    if d_in is not None and dim != d_in:
        raise DataError(f"{path}: feature dim {dim} != expected {d_in}")
    expected = _HEADER.size + 4 * T * dim
    if len(raw) != expected:
        raise DataError(f"{path}: payload ends at offset {len(raw)}, expected {expected}")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(T, dim).astype(np.float64)


def load_features(features_dir: str | Path, video_id: str, d_in: int | None = None) -> np.ndarray:
    return read_features(Path(features_dir) / f"{video_id}.feat", d_in)


# splits ---------------------------------------------------------------------

def make_instance(rec: dict, frames: np.ndarray, warnings: Counter) -> Instance:
    tokens = tokenize(rec["query"])
    T = frames.shape[0]
    s = time_to_index(rec["start"], T, rec["duration"], warnings)
    e = time_to_index(rec["end"], T, rec["duration"], warnings)
    e = max(s, e)
    return Instance(rec["video"], frames, tokens, rec["query"], rec["duration"], rec["start"], rec["end"], s, e)


def load_split(
    ann_path: str | Path,
    features_dir: str | Path,
    d_in: int | None = None,
    vocabulary: Sequence[str] | None = None,
    strict: bool = False,
) -> DatasetSplit:
    """Load annotations plus features; invalid instances are dropped and counted.

    Without ``vocabulary`` one is built from this split's tokens.
    """
    warnings: Counter = Counter()
    cache: dict[str, np.ndarray] = {}
    instances = []
    for rec in load_annotations(ann_path, strict=strict, warnings=warnings):
        vid = rec["video"]
        try:
            if vid not in cache:
                cache[vid] = load_features(features_dir, vid, d_in)
                d_in = cache[vid].shape[1] if d_in is None else d_in
            instances.append(make_instance(rec, cache[vid], warnings))
        except (DataError, FileNotFoundError) as exc:
            if strict:
                raise DataError(str(exc)) from None
            warnings["rejected_instance"] += 1
            log.warning("instance for %s rejected: %s", vid, exc)
    vocab = list(vocabulary) if vocabulary is not None else build_vocabulary(instances)
    return DatasetSplit(instances, vocab, d_in or 0, warnings)


def build_vocabulary(instances: Iterable[Instance]) -> list[str]:
    return sorted({t for inst in instances for t in inst.tokens})


# synthetic data -------------------------------------------------------------

@dataclass
class SynthConfig:
    num_instances: int = 600
    t_min: int = 30
    t_max: int = 50
    d_in: int = 16
    vocab_size: int = 40
    num_signal_words: int = 8
    query_len_min: int = 3
    query_len_max: int = 8
    moment_min: int = 4
    moment_max: int = 12
    signal: float = 2.0
    noise_std: float = 1.0
    num_distractors: int = 0
    embed_dim: int = 300
    seed: int = 7

    def __post_init__(self):
        if not 1 <= self.t_min <= self.t_max:
            raise ValueError("need 1 <= t_min <= t_max")
        if not 1 <= self.moment_min <= self.moment_max <= self.t_min:
            raise ValueError("moment length range must fit inside the shortest video")
        if not 1 <= self.query_len_min <= self.query_len_max:
            raise ValueError("bad query length range")
        if self.num_signal_words < 1 + self.num_distractors:
            raise ValueError("need a distinct signal word per distractor")
        if self.vocab_size <= self.num_signal_words:
            raise ValueError("vocabulary must contain filler words beyond the signal words")
        if self.signal < 0 or self.noise_std < 0:
            raise ValueError("signal and noise must be non-negative")

    @property
    def signal_words(self) -> list[str]:
        return [f"sig{i}" for i in range(self.num_signal_words)]

    @property
    def filler_words(self) -> list[str]:
        return [f"w{i}" for i in range(self.vocab_size - self.num_signal_words)]


def _place(rng: np.random.Generator, T: int, length: int, taken: np.ndarray) -> tuple[int, int] | None:
    starts = [a for a in range(T - length + 1) if not taken[a:a + length].any()]
    if not starts:
        return None
    a = int(rng.choice(starts))
    return a, a + length - 1


def generate_synthetic(cfg: SynthConfig) -> tuple[DatasetSplit, EmbeddingTable]:
    """Videos of Gaussian noise with one moment carrying the query's signal word.

    Each signal word owns a fixed random unit direction; frames inside the
    planted moment get ``signal * direction`` added. Optional distractor
    moments carry other signal words, so the query must be read to tell
    them apart. Ground truth is written at frame resolution with one frame
    per second.
    """
    rng = np.random.default_rng(cfg.seed)
    directions = rng.normal(size=(cfg.num_signal_words, cfg.d_in))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    signal_words, fillers = cfg.signal_words, cfg.filler_words
    words = [PAD, UNK] + signal_words + fillers
    emb = np.zeros((len(words), cfg.embed_dim))
    emb[1:] = rng.normal(scale=1.0 / np.sqrt(cfg.embed_dim), size=(len(words) - 1, cfg.embed_dim))
    table = EmbeddingTable(words, emb)

    instances = []
    for n in range(cfg.num_instances):
        T = int(rng.integers(cfg.t_min, cfg.t_max + 1))
        frames = rng.normal(scale=cfg.noise_std, size=(T, cfg.d_in)) if cfg.noise_std > 0 else np.zeros((T, cfg.d_in))
        taken = np.zeros(T, dtype=bool)
        target = int(rng.integers(cfg.num_signal_words))
        length = int(rng.integers(cfg.moment_min, cfg.moment_max + 1))
        a, b = _place(rng, T, length, taken)
        taken[a:b + 1] = True
        frames[a:b + 1] += cfg.signal * directions[target]
        others = [w for w in range(cfg.num_signal_words) if w != target]
        for w in rng.permutation(others)[: cfg.num_distractors]:
            span = _place(rng, T, int(rng.integers(cfg.moment_min, cfg.moment_max + 1)), taken)
            if span is None:
                continue
            taken[span[0]:span[1] + 1] = True
            frames[span[0]:span[1] + 1] += cfg.signal * directions[w]
        q_len = int(rng.integers(cfg.query_len_min, cfg.query_len_max + 1))
        query = [fillers[i] for i in rng.integers(len(fillers), size=q_len)]
        query[int(rng.integers(q_len))] = signal_words[target]
        # stored features are 32-bit, so round now to keep memory == disk
        frames = frames.astype(np.float32).astype(np.float64)
        duration = float(T)
        instances.append(
            Instance(f"syn{cfg.seed}_{n:05d}", frames, query, " ".join(query), duration, float(a), b + 0.5, a, b)
        )
    return DatasetSplit(instances, signal_words + fillers, cfg.d_in), table


def write_synthetic(cfg: SynthConfig, out_dir: str | Path, num_eval: int | None = None) -> dict[str, Path]:
    """Write features/, train.jsonl, eval.jsonl, embeddings.txt and synth.json."""
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    split, table = generate_synthetic(cfg)
    num_eval = round(cfg.num_instances / 6) if num_eval is None else num_eval
    if not 0 <= num_eval <= len(split):
        raise ValueError(f"num_eval {num_eval} outside [0, {len(split)}]")
    recs = []
    for inst in split.instances:
        write_features(feat_dir / f"{inst.video_id}.feat", inst.features)
        recs.append({
            "video": inst.video_id, "duration": inst.duration, "start": inst.gt_start_s,
            "end": inst.gt_end_s, "query": inst.raw_query,
        })
    cut = len(recs) - num_eval
    paths = {
        "features": feat_dir,
        "train": out / "train.jsonl",
        "eval": out / "eval.jsonl",
        "embeddings": out / "embeddings.txt",
        "config": out / "synth.json",
    }
    write_annotations(paths["train"], recs[:cut])
    write_annotations(paths["eval"], recs[cut:])
    save_embeddings(table, paths["embeddings"])
    paths["config"].write_text(json.dumps(asdict(cfg), indent=2) + "\n")
    return paths
