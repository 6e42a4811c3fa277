import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acrm.data import SynthConfig, generate_synthetic, write_annotations, write_features, write_synthetic
from acrm.harness.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from acrm.harness.cli import main
from acrm.harness.config import ModelConfig, load_config
from acrm.harness.metrics import evaluate, iou
from acrm.harness.training import evaluate_model, from_checkpoint, quantize_table, to_checkpoint, train
from acrm.model import ACRM, make_batch

TINY = dict(d=8, predictor_hidden=8, embed_dim=6, batch_size=8, dropout=0.0)


@pytest.fixture(scope="module")
def tiny_data():
    cfg = SynthConfig(num_instances=24, t_min=6, t_max=10, d_in=4, moment_min=2, moment_max=4, embed_dim=6, seed=1)
    split, table = generate_synthetic(cfg)
    train_split = type(split)(split.instances[:18], split.vocabulary, split.d_in)
    eval_split = type(split)(split.instances[18:], split.vocabulary, split.d_in)
    return train_split, eval_split, quantize_table(table)


# metrics ---------------------------------------------------------------------

def test_iou_examples():
    assert iou((3, 7), (3, 7)) == 1.0
    assert iou((0, 2), (5, 8)) == 0.0
    assert abs(iou((2, 6), (4, 8), inclusive=False) - 1 / 3) < 1e-12
    # frame indices: [2,6] covers 5 frames, [4,8] covers 5, overlap 3
    assert abs(iou((2, 6), (4, 8)) - 3 / 7) < 1e-12


def test_evaluate_examples():
    rep = evaluate([[(1, 4)], [(0, 0)]], [(1, 4), (0, 0)])
    assert all(v == 100.0 for v in rep.recall.values()) and rep.miou == 1.0
    # top-1 IoUs 0.6 and 0.4
    rep = evaluate([[(0, 2)], [(0, 1)]], [(0, 4), (0, 4)], m_list=(0.5,))
    assert rep.recall[(1, 0.5)] == 50.0 and abs(rep.miou - 0.5) < 1e-12
    rep = evaluate([[(0, 1)]], [(0, 3)], m_list=(0.5,))
    assert rep.recall[(1, 0.5)] == 0.0  # IoU exactly 0.5 is not counted
    with pytest.raises(ValueError):
        evaluate([], [])


def test_recall_at_n_uses_best_of_top_n():
    rep = evaluate([[(5, 6), (0, 3)]], [(0, 3)], n_list=(1, 2), m_list=(0.5,))
    assert rep.recall == {(1, 0.5): 0.0, (2, 0.5): 100.0}


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 10)), min_size=1, max_size=10))
def test_self_evaluation_is_perfect(spans):
    preds = [(s, s + w) for s, w in spans]
    assert evaluate([[p] for p in preds], preds).miou == 1.0


# config ----------------------------------------------------------------------

def test_config_variants_and_overrides(tmp_path, monkeypatch):
    cfg = ModelConfig.for_variant("sg")
    assert (cfg.interaction, cfg.normalization) == ("sub", "gauss")
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"lam": 1.1, "d": 32}))
    cfg = load_config(path, seed=4)
    assert (cfg.lam, cfg.d, cfg.seed) == (1.1, 32, 4)
    monkeypatch.setenv("ACRM_SEED", "9")
    assert load_config(None).seed == 9
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ModelConfig(lam=-1.0)
    with pytest.raises(ValueError):
        ModelConfig(d=7)


# model and padding -----------------------------------------------------------

@pytest.mark.parametrize("overrides", [{}, {"attention": False}, {"tied_lstm": True}, {"interaction": "concat"}])
def test_padding_is_inert(tiny_data, overrides):
    train_split, _, table = tiny_data
    model = ACRM(ModelConfig(**TINY, **overrides), 4, table, np.random.default_rng(0))
    insts = train_split.instances[:5]
    together = model.forward(make_batch(insts, table)).logits
    for b, inst in enumerate(insts):
        alone = model.forward(make_batch([inst], table)).logits
        for head in ("start", "end", "internal"):
            np.testing.assert_allclose(
                getattr(together, head).data[b, :inst.T], getattr(alone, head).data[0], rtol=0, atol=1e-9
            )


# checkpoint ------------------------------------------------------------------

def test_checkpoint_round_trip(tiny_data, tmp_path):
    _, eval_split, table = tiny_data
    model = ACRM(ModelConfig(**TINY), 4, table, np.random.default_rng(0))
    ckpt = to_checkpoint(model, {"epoch": 3})
    save_checkpoint(ckpt, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == ckpt.config and back.vocabulary == ckpt.vocabulary and back.meta == {"epoch": 3}
    for name, arr in ckpt.tensors.items():
        assert back.tensors[name].shape == arr.shape and back.tensors[name].tobytes() == arr.tobytes()
    save_checkpoint(back, tmp_path / "again.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()
    a = evaluate_model(from_checkpoint(ckpt), eval_split).to_dict()
    b = evaluate_model(from_checkpoint(back), eval_split).to_dict()
    assert a == b


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"garbage!" + bytes(20))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


# training --------------------------------------------------------------------

def test_patience_zero_runs_one_epoch(tiny_data):
    train_split, eval_split, table = tiny_data
    result = train(ModelConfig(**TINY, patience=0, max_epochs=5), train_split, eval_split, table)
    assert len(result.history) == 1 and result.best_epoch == 1


def test_lambda_zero_total_equals_boundary_loss(tiny_data):
    train_split, eval_split, table = tiny_data
    result = train(ModelConfig(**TINY, lam=0.0, max_epochs=2, patience=5), train_split, eval_split, table)
    for rec in result.history:
        assert rec["L"] == rec["L_c"] and rec["L_I"] > 0


def test_training_is_deterministic(tiny_data):
    train_split, eval_split, table = tiny_data
    cfg = ModelConfig(**{**TINY, "dropout": 0.5}, max_epochs=2, patience=5)
    a = train(cfg, train_split, eval_split, table)
    b = train(cfg, train_split, eval_split, table)
    assert [r["L"] for r in a.history] == [r["L"] for r in b.history]
    assert a.best_epoch == b.best_epoch
    for name, arr in a.checkpoint.tensors.items():
        assert arr.tobytes() == b.checkpoint.tensors[name].tobytes()


def test_training_reduces_loss(tiny_data):
    train_split, eval_split, table = tiny_data
    result = train(ModelConfig(**TINY, lr=0.01, max_epochs=8, patience=8), train_split, eval_split, table)
    assert result.history[-1]["L"] < result.history[0]["L"]
    assert set(result.history[0]) >= {"epoch", "L_c", "L_I", "L", "mIoU", "recall", "wall_time"}


# CLI -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--out", str(data), "--num", "30", "--num-eval", "6", "--t-min", "8", "--t-max", "12",
                 "--d-in", "4", "--moment-min", "2", "--moment-max", "5", "--embed-dim", "6", "--seed", "2"]) == 0
    ckpt = root / "m.ckpt"
    code = main(["train", "--train", str(data / "train.jsonl"), "--eval", str(data / "eval.jsonl"),
                 "--features", str(data / "features"), "--embeddings", str(data / "embeddings.txt"),
                 "--out", str(ckpt), "--d", "8", "--embed-dim", "6", "--epochs", "2", "--batch-size", "8",
                 "--variant", "dg"])
    assert code == 0
    return root, data, ckpt


def test_cli_train_writes_checkpoint_and_log(cli_run):
    root, _, ckpt = cli_run
    assert load_checkpoint(ckpt).config.normalization == "gauss"
    lines = (root / "m.ckpt.log.jsonl").read_text().splitlines()
    assert "config" in json.loads(lines[0]) and json.loads(lines[1])["epoch"] == 1


def test_cli_eval_is_reproducible(cli_run, capsys):
    root, data, ckpt = cli_run
    args = ["eval", "--checkpoint", str(ckpt), "--ann", str(data / "eval.jsonl"), "--features", str(data / "features"),
            "--topk", "1,5"]
    assert main(args + ["--report", str(root / "r1.json")]) == 0
    assert main(args + ["--report", str(root / "r2.json")]) == 0
    r1 = json.loads((root / "r1.json").read_text())
    assert r1 == json.loads((root / "r2.json").read_text())
    assert "R@5,IoU=0.5" in r1["recall"]
    assert "mIoU" in capsys.readouterr().out


def test_cli_infer(cli_run, tmp_path):
    _, data, ckpt = cli_run
    feats = data / "features"
    write_features(feats / "one.feat", np.ones((1, 4)))
    ann = tmp_path / "q.jsonl"
    write_annotations(ann, [
        {"video": "one", "duration": 4.0, "start": 0, "end": 4, "query": "sig0 w1"},
        {"video": "nope", "duration": 4.0, "start": 0, "end": 1, "query": "sig0"},
    ])
    outs = []
    for name in ("a.jsonl", "b.jsonl"):
        assert main(["infer", "--checkpoint", str(ckpt), "--ann", str(ann), "--features", str(feats),
                     "--out", str(tmp_path / name), "--dump-scores", "--dump-attention"]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    first, second = [json.loads(line) for line in outs[0].decode().splitlines()]
    assert (first["pred_start_idx"], first["pred_end_idx"]) == (0, 0)
    assert (first["pred_start_s"], first["pred_end_s"]) == (0.0, 4.0)
    assert first["scores"]["p_start"] == [1.0] and len(first["attention"]["weights"]) == 1
    assert "error" in second
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["infer", "--checkpoint", str(ckpt), "--ann", str(empty), "--features", str(feats),
                 "--out", str(tmp_path / "c.jsonl")]) == 0
    assert (tmp_path / "c.jsonl").read_text() == ""


def test_cli_exit_codes(cli_run, tmp_path):
    _, data, ckpt = cli_run
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), "--ann", str(data / "eval.jsonl"),
                 "--features", str(data / "features")]) == 2
    assert main(["train", "--train", str(data / "train.jsonl"), "--eval", str(data / "eval.jsonl"),
                 "--features", str(data / "features"), "--out", str(tmp_path / "x.ckpt"), "--lam", "-1"]) == 1


def test_cli_gradcheck_passes(capsys):
    assert main(["gradcheck", "--trials", "1"]) == 0
    assert capsys.readouterr().out.count("PASS") == 6


def test_write_synthetic_split_sizes(tmp_path):
    paths = write_synthetic(SynthConfig(num_instances=12, t_min=8, t_max=8, moment_max=4, embed_dim=3), tmp_path, 2)
    assert len(paths["eval"].read_text().splitlines()) == 2
    assert len(paths["train"].read_text().splitlines()) == 10
