import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from segmicro import cli, dataio, trainer
from segmicro.netgraph import FCN, Graph, ModelConfig, build_graph

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TINY = CONFIGS / "tiny_synthetic.json"


def run(*argv):
    return cli.main([str(a) for a in argv])


def only_dir(root):
    dirs = [p for p in Path(root).iterdir() if p.is_dir()]
    assert len(dirs) == 1, dirs
    return dirs[0]


def write_config(tmp_path, raw, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


@pytest.mark.parametrize("model,expected", [
    ({"arch": "unet", "filters": [16, 32, 64, 128, 256]}, 1940851),
    ({"arch": "fcn", "filters": [16, 32, 64, 32, 16], "conv_kernel": 5}, 128611),
    ({"arch": "fcn", "filters": [8, 16, 32, 16, 8], "out_kernel": 5}, 12275),
])
def test_params(tmp_path, capsys, model, expected):
    cfg = write_config(tmp_path, {"schema_version": 1, "model": model})
    assert run("params", "--config", cfg) == 0
    assert capsys.readouterr().out.strip() == str(expected)


def test_unknown_key_rejected_before_work(tmp_path, capsys):
    raw = json.loads(TINY.read_text())
    raw["training"]["warmup"] = 3
    cfg = write_config(tmp_path, raw)
    assert run("train", "--config", cfg, "--out", tmp_path / "runs") == cli.EXIT_CONFIG
    assert "warmup" in capsys.readouterr().err
    assert not (tmp_path / "runs").exists()


def test_missing_config(tmp_path):
    assert run("train", "--config", tmp_path / "nope.json") == cli.EXIT_CONFIG
    assert run("params") == cli.EXIT_CONFIG


def test_train_writes_artifacts(tmp_path, capsys):
    assert run("train", "--config", TINY, "--out", tmp_path) == 0
    out = only_dir(tmp_path)
    assert sorted(p.name for p in out.iterdir()) == ["checkpoint.seg", "config.json", "history.csv", "metrics.json"]
    history = (out / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds"
    assert len(history) == 4
    m = json.loads((out / "metrics.json").read_text())
    assert set(m) == {"accuracy", "dice.1", "dice.2", "samples"} and m["samples"] == 2
    g = trainer.load_checkpoint(out / "checkpoint.seg")
    assert g.config.filters == (4, 8, 4)


def test_train_is_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run("train", "--config", TINY, "--out", tmp_path / sub, "--threads", 1) == 0
    a, b = only_dir(tmp_path / "a"), only_dir(tmp_path / "b")
    assert a.name == b.name
    for name in ("history.csv", "checkpoint.seg", "metrics.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_override_changes_output_dir(tmp_path):
    assert run("train", "--config", TINY, "--out", tmp_path, "--seed", 11) == 0
    assert run("train", "--config", TINY, "--out", tmp_path) == 0
    assert len([p for p in tmp_path.iterdir() if p.is_dir()]) == 2


def test_gen_data_counts_and_hash(tmp_path, capsys):
    raw = json.loads(TINY.read_text())
    raw["data"]["multiplier"] = 3
    cfg = write_config(tmp_path, raw)
    hashes = []
    for sub in ("a", "b"):
        assert run("gen-data", "--config", cfg, "--out", tmp_path / sub) == 0
        manifest = tmp_path / sub / "manifest.json"
        assert len(json.loads(manifest.read_text())["samples"]) == 24
        digest = hashlib.sha256(manifest.read_bytes())
        for p in sorted((tmp_path / sub).rglob("*.png")):
            digest.update(p.read_bytes())
        hashes.append(digest.hexdigest())
    assert hashes[0] == hashes[1]
    assert "8 originals x 3 -> 24 samples" in capsys.readouterr().out


def test_gen_data_from_originals_directory(tmp_path):
    from segmicro.synthetic import blob_dataset
    root = tmp_path / "orig"
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir()
    for s in blob_dataset(2, seed=0, size=32):
        dataio.write_sample(s, root / "images" / f"{s.id}.png", root / "masks" / f"{s.id}.png")
    raw = {"schema_version": 1, "model": {"arch": "unet", "filters": [2, 4, 8, 16, 32]},
           "data": {"num_classes": 3, "multiplier": 4, "target_size": [16, 16]}}
    cfg = write_config(tmp_path, raw)
    assert run("gen-data", "--config", cfg, "--originals", root, "--out", tmp_path / "gen") == 0
    ds = dataio.read_manifest(tmp_path / "gen" / "manifest.json")
    assert len(ds) == 8 and ds[0].mask.shape == (16, 16)


def test_gen_data_missing_originals(tmp_path):
    raw = {"schema_version": 1, "model": {"arch": "unet", "filters": [2, 4, 8, 16, 32]},
           "data": {"num_classes": 3, "multiplier": 4}}
    cfg = write_config(tmp_path, raw)
    assert run("gen-data", "--config", cfg, "--originals", tmp_path / "missing", "--out", tmp_path / "g") != 0
    assert not (tmp_path / "g").exists()


@pytest.fixture
def checkpoint_and_manifest(tmp_path):
    g = build_graph(ModelConfig(arch=FCN, filters=(4, 4, 4)), seed=3)
    trainer.save_checkpoint(tmp_path / "m.seg", g)
    from segmicro.synthetic import blob_dataset
    ds = blob_dataset(3, seed=5, size=16)
    manifest = dataio.write_dataset(ds, tmp_path / "test")
    return tmp_path / "m.seg", manifest


def test_evaluate_matches_library(tmp_path, capsys, checkpoint_and_manifest):
    ckpt, manifest = checkpoint_and_manifest
    assert run("evaluate", "--checkpoint", ckpt, "--manifest", manifest, "--out", tmp_path / "m.json") == 0
    expected = trainer.evaluate(ckpt, dataio.read_manifest(manifest)).to_json()
    assert (tmp_path / "m.json").read_text() == expected
    assert capsys.readouterr().out == expected
    assert {"dice.1", "dice.2"} <= set(json.loads(expected))


def test_evaluate_perfect_copy_harness(tmp_path, capsys):
    cfg = ModelConfig(arch=FCN, filters=(3, 3, 3), num_channels=3, conv_kernel=1, out_kernel=1)
    g = build_graph(cfg)
    eye = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
    for name in ("conv_1", "conv_2", "conv_3", "out"):
        g.params[f"{name}/kernel"][:] = eye
    trainer.save_checkpoint(tmp_path / "copy.seg", g)
    masks = np.random.default_rng(0).integers(0, 3, (2, 8, 8)).astype(np.uint8)
    ds = dataio.Dataset([dataio.Sample(np.eye(3, dtype=np.float32)[m], m, f"s{i}") for i, m in enumerate(masks)], 3, 3)
    manifest = dataio.write_dataset(ds, tmp_path / "d")
    assert run("evaluate", "--checkpoint", tmp_path / "copy.seg", "--manifest", manifest) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["accuracy"] == 1.0 and report["dice.1"] == 1.0 and report["dice.2"] == 1.0


def test_evaluate_bad_checkpoint(tmp_path, checkpoint_and_manifest):
    _, manifest = checkpoint_and_manifest
    (tmp_path / "bad.seg").write_bytes(b"garbage")
    assert run("evaluate", "--checkpoint", tmp_path / "bad.seg", "--manifest", manifest) == cli.EXIT_DATA


def test_predict_writes_palette_png_and_sidecar(tmp_path, checkpoint_and_manifest):
    ckpt, _ = checkpoint_and_manifest
    image = np.random.default_rng(1).random((12, 20)).astype(np.float32)
    dataio.write_image(tmp_path / "in.png", image)
    assert run("predict", "--checkpoint", ckpt, "--image", tmp_path / "in.png", "--out", tmp_path / "p.png") == 0
    with Image.open(tmp_path / "p.png") as im:
        assert im.mode == "P" and im.size == (20, 12)
        assert im.getpalette()[:12] == [0, 0, 0, 128, 128, 128, 255, 255, 255, 192, 192, 192]
    labels = dataio.read_mask(tmp_path / "p.png", 3)
    side = json.loads((tmp_path / "p.png.json").read_text())
    counts = np.bincount(labels.ravel(), minlength=3)
    assert side["pixel_counts"] == {str(c): int(n) for c, n in enumerate(counts)}
    assert sum(side["pixel_counts"].values()) == 240


def test_predict_all_background_is_black(tmp_path):
    g = build_graph(ModelConfig(arch=FCN, filters=(4, 4, 4)))
    g.params["out/bias"][:] = [50, 0, 0]
    trainer.save_checkpoint(tmp_path / "bg.seg", g)
    dataio.write_image(tmp_path / "in.png", np.full((8, 8), 0.5, np.float32))
    assert run("predict", "--checkpoint", tmp_path / "bg.seg", "--image", tmp_path / "in.png",
               "--out", tmp_path / "p.png") == 0
    with Image.open(tmp_path / "p.png") as im:
        rgb = np.array(im.convert("RGB"))
    assert rgb.shape == (8, 8, 3) and not rgb.any()


def test_augment_command(tmp_path):
    from segmicro.synthetic import blob_dataset
    s = blob_dataset(1, seed=0, size=16)[0]
    dataio.write_sample(s, tmp_path / "a.png", tmp_path / "a_mask.png")
    assert run("augment", "--image", tmp_path / "a.png", "--mask", tmp_path / "a_mask.png",
               "--seed", 3, "--out", tmp_path / "aug") == 0
    back = dataio.read_sample(tmp_path / "aug" / "a_aug.png", tmp_path / "aug" / "a_aug_mask.png", 3)
    assert back.mask.shape == (16, 16)
    assert set(np.unique(back.mask)) <= set(np.unique(s.mask)) | {0}


def test_gradcheck_passes(capsys):
    assert run("gradcheck") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["max_relative_error"] < 1e-4
    assert "conv_1a" in report["graphs"]["tiny_unet"] and "out" in report["graphs"]["tiny_fcn"]


def test_gradcheck_detects_corrupted_backward():
    def broken(graph, dlogits):
        grads = Graph.backward(graph, dlogits)
        return {k: v * 1.5 if k.startswith("conv_2") else v for k, v in grads.items()}

    report = cli.run_gradcheck({"fcn": (ModelConfig(arch=FCN, filters=(8, 16, 32, 16, 8)), 8)},
                               backward=broken)
    assert not report["passed"]
    assert report["graphs"]["fcn"]["conv_2"] > 0.1


def test_threads_env_fallback(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("SEGMICRO_THREADS", "1")
    cfg = write_config(tmp_path, {"schema_version": 1, "model": {"arch": "fcn", "filters": [8, 16, 32, 16, 8]}})
    assert run("params", "--config", cfg) == 0
    assert capsys.readouterr().out.strip() == "11699"
