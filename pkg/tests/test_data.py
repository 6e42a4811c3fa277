import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from acrm.data import (
    DataError,
    SynthConfig,
    generate_synthetic,
    index_to_span,
    load_annotations,
    load_split,
    read_features,
    time_to_index,
    tokenize,
    write_features,
    write_synthetic,
)


def test_tokenize_examples():
    assert tokenize("Person put a notebook in a bag.") == ["person", "put", "a", "notebook", "in", "a", "bag"]
    assert tokenize("  HELLO,   world ") == ["hello", "world"]
    with pytest.raises(DataError):
        tokenize("...")


def test_time_to_index_examples():
    w = Counter()
    assert time_to_index(0.0, 30, 30.0, w) == 0
    assert time_to_index(30.0, 30, 30.0, w) == 29
    assert time_to_index(15.5, 30, 30.0, w) == 15
    assert not w
    assert time_to_index(-2.0, 30, 30.0, w) == 0 and time_to_index(31.0, 30, 30.0, w) == 29
    assert w["time_clamped"] == 2


@given(st.integers(1, 100), st.floats(0.1, 500), st.floats(-10, 510), st.floats(-10, 510))
def test_time_to_index_monotone_and_in_range(T, duration, t1, t2):
    a, b = sorted((t1, t2))
    i, j = time_to_index(a, T, duration), time_to_index(b, T, duration)
    assert 0 <= i <= j <= T - 1


def test_index_to_span_covers_whole_video():
    assert index_to_span(0, 9, 10, 20.0) == (0.0, 20.0)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines))


def test_annotations_valid_invalid_and_empty(tmp_path):
    good = json.dumps({"video": "v", "duration": 10, "start": 1, "end": 3, "query": "a b"})
    bad = json.dumps({"video": "v", "duration": 10, "start": 5, "end": 3, "query": "a b"})
    path = tmp_path / "a.jsonl"
    write_lines(path, [good])
    assert len(load_annotations(path)) == 1
    w = Counter()
    write_lines(path, [good, bad, "not json"])
    assert len(load_annotations(path, warnings=w)) == 1
    assert w["bad_annotation"] == 2
    path.write_text("")
    w = Counter()
    assert load_annotations(path, warnings=w) == [] and w["empty_annotations"] == 1


def test_strict_mode_names_the_line(tmp_path):
    path = tmp_path / "a.jsonl"
    write_lines(path, [json.dumps({"video": "v", "duration": 10, "start": 1, "end": 3, "query": "x"}), '{"video": "v"}'])
    with pytest.raises(DataError, match=":2:"):
        load_annotations(path, strict=True)


def test_feature_round_trip_is_bit_identical(tmp_path):
    frames = np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32)
    write_features(tmp_path / "v.feat", frames)
    back = read_features(tmp_path / "v.feat")
    assert back.dtype == np.float64
    assert back.astype(np.float32).tobytes() == frames.tobytes()
    raw = (tmp_path / "v.feat").read_bytes()
    assert raw[:8] == b"ACRMFEAT" and len(raw) == 20 + 4 * 35


def test_feature_file_errors(tmp_path):
    path = tmp_path / "v.feat"
    write_features(path, np.ones((3, 4)))
    with pytest.raises(DataError, match="feature dim"):
        read_features(path, d_in=5)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(DataError, match="offset"):
        read_features(path)
    path.write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(DataError, match="magic"):
        read_features(path)
    path.write_bytes(raw[:12] + (0).to_bytes(4, "little") + raw[16:20])
    with pytest.raises(DataError, match="zero frames"):
        read_features(path)
    with pytest.raises(DataError):
        write_features(path, np.ones((0, 4)))


def test_load_split_rejects_and_counts(tmp_path):
    feats = tmp_path / "f"
    feats.mkdir()
    write_features(feats / "v1.feat", np.ones((10, 3)))
    recs = [
        {"video": "v1", "duration": 10, "start": 2, "end": 4.5, "query": "The Cat"},
        {"video": "v1", "duration": 10, "start": 2, "end": 2, "query": "?!"},
        {"video": "missing", "duration": 10, "start": 2, "end": 4, "query": "dog"},
    ]
    write_lines(tmp_path / "a.jsonl", [json.dumps(r) for r in recs])
    split = load_split(tmp_path / "a.jsonl", feats)
    assert len(split) == 1 and split.warnings["rejected_instance"] == 2
    inst = split.instances[0]
    assert (inst.gt_start_idx, inst.gt_end_idx, inst.tokens) == (2, 4, ["the", "cat"])
    assert split.vocabulary == ["cat", "the"] and split.d_in == 3


def test_synthetic_shape_contract():
    split, table = generate_synthetic(SynthConfig(num_instances=3, t_min=20, t_max=20, d_in=8, moment_max=10))
    assert len(split) == 3
    assert all(inst.features.shape == (20, 8) for inst in split.instances)
    for inst in split.instances:
        assert 0 <= inst.gt_start_idx <= inst.gt_end_idx < inst.T
        assert time_to_index(inst.gt_start_s, inst.T, inst.duration) == inst.gt_start_idx
        assert time_to_index(inst.gt_end_s, inst.T, inst.duration) == inst.gt_end_idx
        assert any(t.startswith("sig") for t in inst.tokens)
    assert table.words[:2] == ["<pad>", "<unk>"]


def test_synthetic_is_byte_identical_under_seed(tmp_path):
    cfg = SynthConfig(num_instances=5, t_min=10, t_max=15, moment_max=6, embed_dim=4)
    a = write_synthetic(cfg, tmp_path / "a")
    b = write_synthetic(cfg, tmp_path / "b")
    for key in ("train", "eval", "embeddings", "config"):
        assert a[key].read_bytes() == b[key].read_bytes()
    names = sorted(p.name for p in a["features"].iterdir())
    assert names == sorted(p.name for p in b["features"].iterdir())
    for name in names:
        assert (a["features"] / name).read_bytes() == (b["features"] / name).read_bytes()


def test_zero_signal_leaves_only_noise():
    cfg = SynthConfig(num_instances=40, signal=0.0, seed=3)
    split, _ = generate_synthetic(cfg)
    inside, outside = [], []
    for inst in split.instances:
        m = np.zeros(inst.T, bool)
        m[inst.gt_start_idx:inst.gt_end_idx + 1] = True
        inside.append(np.abs(inst.features[m]).mean())
        outside.append(np.abs(inst.features[~m]).mean())
    assert abs(np.mean(inside) - np.mean(outside)) < 0.05


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(t_min=5, moment_max=12)
    with pytest.raises(ValueError):
        SynthConfig(num_distractors=8)
