import json

import pytest

from changecap import Vocabulary, load_manifest
from changecap.cli import main


@pytest.fixture
def dataset(tmp_path):
    assert main(["gen-synthetic", "--seed", "7", "--count", "12", "--out", str(tmp_path / "data"),
                 "--splits", "0.5,0.25,0.25"]) == 0
    return tmp_path, tmp_path / "data" / "manifest.json"


def test_pipeline_end_to_end(dataset, capsys):
    tmp, manifest = dataset
    recs = load_manifest(manifest)
    assert len(recs) == 12 and {r.split for r in recs} == {"train", "val", "test"}

    vocab = tmp / "vocab.txt"
    assert main(["build-vocab", "--manifest", str(manifest), "--out", str(vocab)]) == 0
    assert Vocabulary.load(vocab).id_to_word[0] == "<pad>"

    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({"h": 4, "w": 4, "channels": 16, "ct": 16, "d_emb": 32,
                               "ffn_dim": 64, "heads": 4, "enc_depth": 1, "max_len": 12,
                               "epochs": 2, "batch_size": 8, "lr0": 3e-3}))
    ckpt = tmp / "m.ckpt"
    capsys.readouterr()
    assert main(["train", "--manifest", str(manifest), "--config", str(cfg),
                 "--vocab", str(vocab), "--out-ckpt", str(ckpt)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary) == {"best_epoch", "best_val_bleu4", "final_loss"}

    out = tmp / "report.json"
    assert main(["evaluate", "--ckpt", str(ckpt), "--manifest", str(manifest),
                 "--split", "test", "--json-out", str(out), "--per-image"]) == 0
    report = json.loads(out.read_text())
    assert len(report["bleu"]) == 4 and len(report["per_image"]) == 3

    feat = next(iter((tmp / "data" / "features").iterdir()))
    attn = tmp / "attn.json"
    capsys.readouterr()
    assert main(["caption", "--ckpt", str(ckpt), "--features", str(feat), "--attn", str(attn)]) == 0
    sentence = capsys.readouterr().out.strip()
    dump = json.loads(attn.read_text())
    assert all(len(d["weights"]) == 4 for d in dump)
    assert [d["word"] for d in dump][:len(sentence.split())] == sentence.split()


def test_exit_codes(dataset, tmp_path, capsys):
    tmp, manifest = dataset
    bad_cfg = tmp / "bad.json"
    bad_cfg.write_text(json.dumps({"heads": 3, "channels": 16, "ct": 16, "h": 4, "w": 4}))
    assert main(["train", "--manifest", str(manifest), "--config", str(bad_cfg),
                 "--out-ckpt", str(tmp / "x")]) == 2
    unknown = tmp / "unknown.json"
    unknown.write_text(json.dumps({"nonsense": 1}))
    assert main(["train", "--manifest", str(manifest), "--config", str(unknown),
                 "--out-ckpt", str(tmp / "x")]) == 2

    junk = tmp / "junk.cgft"
    junk.write_bytes(b"XXXX" + bytes(30))
    assert main(["caption", "--ckpt", str(tmp / "missing.ckpt"), "--features", str(junk)]) == 3
    assert main(["build-vocab", "--manifest", str(tmp / "nope.json"), "--out", str(tmp / "v")]) == 3
    assert "error" in capsys.readouterr().err


def test_gradcheck_ops(capsys):
    assert main(["gradcheck", "--module", "ops"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    assert main(["gradcheck", "--module", "ops", "--tol", "1e-30"]) == 4
