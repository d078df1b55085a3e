import json

import numpy as np
import pytest
from conftest import small_config

from teleqa.cli import main
from teleqa.features import cache_read
from teleqa.pipeline import read_pgm, read_trace
from teleqa.stream_io import Stream, store_stream


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = small_config()
    cfg.train.epochs, cfg.train.video_steps, cfg.train.audio_steps = 3, 6, 3
    cfg.head_train.epochs = 2
    cfg.save(root / "config.json")
    assert main(["synth", "--out", str(root / "data"), "--n", "5", "--frames", "16", "--size", "160",
                 "--seed", "2"]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "w"),
                 "--config", str(root / "config.json")]) == 0
    return root


def test_synth_writes_mos_table(workspace):
    lines = (workspace / "data" / "mos.csv").read_text().splitlines()
    assert lines[0] == "stream,mos,distortions" and len(lines) == 6
    assert (workspace / "data" / "stream_0" / "manifest.json").is_file()


def test_train_writes_weights_and_log(workspace):
    w = workspace / "w"
    for name in ("config.json", "head.json", "visual.f32", "audio.json", "frame_extractor.f32"):
        assert (w / name).is_file()
    log = (w / "loss_log.csv").read_text().splitlines()
    assert log[0] == "stage,epoch,train_loss,val_loss"
    assert sum(line.startswith("pathways,") for line in log) == 3


def test_train_is_reproducible(workspace, tmp_path):
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "w2"),
                 "--config", str(workspace / "config.json")]) == 0
    for name in ("visual.f32", "audio.f32", "head.f32"):
        assert (tmp_path / "w2" / name).read_bytes() == (workspace / "w" / name).read_bytes()


def test_extract_counts_and_idempotence(workspace, tmp_path, capsys):
    video_only = tmp_path / "vo"
    rng = np.random.default_rng(0)
    store_stream(Stream(32, 32, 10.0, rng.uniform(size=(16, 32, 32, 3))), video_only)
    cfg = str(workspace / "config.json")
    assert main(["extract", "--stream", str(video_only), "--out", str(tmp_path / "a.tqaf"), "--config", cfg]) == 0
    cache = cache_read(tmp_path / "a.tqaf")
    assert len(cache.by_modality("frame")) == 16 and len(cache.by_modality("clip")) == 2
    assert not cache.by_modality("audio")
    assert main(["extract", "--stream", str(video_only), "--out", str(tmp_path / "b.tqaf"), "--config", cfg]) == 0
    assert (tmp_path / "a.tqaf").read_bytes() == (tmp_path / "b.tqaf").read_bytes()
    stream = str(workspace / "data" / "stream_0")
    assert main(["extract", "--stream", stream, "--out", str(tmp_path / "c.tqaf"),
                 "--weights", str(workspace / "w")]) == 0
    full = cache_read(tmp_path / "c.tqaf")
    assert len(full.by_modality("patch")) == 16 and full.by_modality("patch")[0].dim == 21
    assert full.by_modality("audio")


def test_extract_missing_manifest(tmp_path):
    assert main(["extract", "--stream", str(tmp_path), "--out", str(tmp_path / "x.tqaf")]) == 1


def test_predict_online_matches_offline(workspace, tmp_path):
    stream, w = str(workspace / "data" / "stream_1"), str(workspace / "w")
    assert main(["predict", "--stream", stream, "--weights", w, "--out", str(tmp_path / "on.csv")]) == 0
    assert main(["predict", "--stream", stream, "--weights", w, "--out", str(tmp_path / "off.csv"),
                 "--offline"]) == 0
    on, off = read_trace(tmp_path / "on.csv"), read_trace(tmp_path / "off.csv")
    assert len(on) == 16
    for a, b in zip(on, off):
        np.testing.assert_allclose([a.S_v, a.S_a, a.S_av], [b.S_v, b.S_a, b.S_av], rtol=1e-6)


def test_predict_video_only_stream(workspace, tmp_path):
    rng = np.random.default_rng(1)
    store_stream(Stream(160, 160, 10.0, rng.uniform(size=(9, 160, 160, 3))), tmp_path / "vo")
    assert main(["predict", "--stream", str(tmp_path / "vo"), "--weights", str(workspace / "w"),
                 "--out", str(tmp_path / "t.csv")]) == 0
    assert all(q.flag_a == "default" and q.S_a == 3.0 for q in read_trace(tmp_path / "t.csv"))


def test_predict_empty_stream(workspace, tmp_path, capsys):
    d = tmp_path / "empty"
    d.mkdir()
    (d / "manifest.json").write_text(json.dumps({"width": 8, "height": 8, "fps": 10, "n_frames": 0,
                                                 "sample_rate": None, "audio_n_samples": 0}))
    (d / "frames.f32").write_bytes(b"")
    assert main(["predict", "--stream", str(d), "--weights", str(workspace / "w"),
                 "--out", str(tmp_path / "t.csv")]) == 2
    assert "no packets" in capsys.readouterr().err


def test_predict_dimension_mismatch(workspace, tmp_path):
    bad = small_config(visual=small_config().visual.__class__(4, (4, 4, 4)), patch_scales=(0, 1))
    bad.save(tmp_path / "bad.json")
    assert main(["predict", "--stream", str(workspace / "data" / "stream_0"), "--weights", str(workspace / "w"),
                 "--out", str(tmp_path / "t.csv"), "--config", str(tmp_path / "bad.json")]) == 2


def test_qmap_20x20(workspace, tmp_path):
    out, cache = tmp_path / "q.pgm", tmp_path / "q.tqaf"
    assert main(["qmap", "--stream", str(workspace / "data" / "stream_0"), "--weights", str(workspace / "w"),
                 "--grid", "20x20", "--out", str(out), "--cache", str(cache)]) == 0
    assert read_pgm(out).shape == (20, 20)
    assert cache_read(cache).records[0].dim == 400
    assert main(["qmap", "--stream", str(workspace / "data" / "stream_0"), "--weights", str(workspace / "w"),
                 "--grid", "40x40", "--out", str(out)]) == 2
    assert main(["qmap", "--stream", str(workspace / "data" / "stream_0"), "--weights", str(workspace / "w"),
                 "--grid", "axb", "--out", str(out)]) == 2


def ratings_file(path, rng):
    psi = rng.uniform(1, 5, size=12)
    rows = ["video_id,subject_id,rating,session,is_golden,is_repeat"]
    for s in range(8):
        for v in range(12):
            r = float(np.clip(psi[v] + rng.normal(0, 0.4), 1, 5))
            rows.append(f"v{v},s{s},{r},0,0,0")
    path.write_text("\n".join(rows) + "\n")


def test_study_commands(tmp_path, capsys):
    ratings_file(tmp_path / "r.csv", np.random.default_rng(3))
    assert main(["study", "consistency", "--ratings", str(tmp_path / "r.csv"), "--splits", "50"]) == 0
    first = capsys.readouterr().out.strip().splitlines()
    assert len(first) == 1 and first[0].startswith("mean_srcc ")
    assert main(["study", "consistency", "--ratings", str(tmp_path / "r.csv"), "--splits", "50"]) == 0
    assert capsys.readouterr().out.strip().splitlines() == first
    assert main(["study", "recover", "--ratings", str(tmp_path / "r.csv"), "--out", str(tmp_path / "rep.json")]) == 0
    report = json.loads((tmp_path / "rep.json").read_text())
    assert report["converged"] and len(report["videos"]) == 12 and len(report["subjects"]) == 8


def test_usage_errors(capsys):
    assert main(["train", "--bogus"]) == 2
    assert main([]) == 2
    assert main(["--help"]) == 0
    assert "qmap" in capsys.readouterr().out


def test_every_subcommand_documents_defaults(capsys):
    for cmd in (["synth"], ["extract"], ["train"], ["predict"], ["qmap"], ["study", "recover"],
                ["study", "consistency"]):
        assert main(cmd + ["--help"]) == 0
        text = capsys.readouterr().out
        assert "--seed" in text and "(default:" in text


def test_config_file_overrides_flags(workspace, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"train": {"epochs": 2}}))
    cfg = small_config().to_dict()
    cfg["train"].update(epochs=2, video_steps=6, audio_steps=3)
    cfg["head_train"]["epochs"] = 1
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "w"), "--epochs", "9",
                 "--config", str(tmp_path / "c.json")]) == 0
    log = (tmp_path / "w" / "loss_log.csv").read_text().splitlines()
    assert sum(line.startswith("pathways,") for line in log) == 2
